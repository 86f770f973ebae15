#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpvit/matcher.hpp"

namespace fpvit {

struct ScoreSet {
    std::vector<float> genuine;
    std::vector<float> imposter;
};

struct PairCounts {
    std::uint64_t genuine = 0;
    std::uint64_t imposter = 0;
};

// Closed-form pair counts from per-finger impression counts:
// genuine = sum C(n_i, 2), imposter = C(sum n_i, 2) - genuine.
PairCounts count_pairs(const std::vector<int>& impressions_per_finger);

// All unordered within-finger pairs (genuine) and cross-finger pairs
// (imposter), each exactly once, scored by inner product. Throws
// ProtocolError when fewer than two fingers are present.
ScoreSet enumerate_pairs(const EmbeddingStore& impressions);

struct TarFarPoint {
    double far_target = 0.0;
    double far_achieved = 0.0;
    double tar = 0.0;
    double threshold = 0.0;       // a value from the sorted imposter scores
    bool resolution_warning = false;  // target below 1/|imposter|
};

// Empirical TAR at each FAR target. The threshold is the (k+1)-th largest
// imposter score with k = floor(target * |imposter|); a comparison is
// accepted iff its score is strictly greater than the threshold, which
// makes the operating point deterministic under tied scores.
std::vector<TarFarPoint> tar_at_far(const ScoreSet& scores, const std::vector<double>& far_targets);

struct CmcCurve {
    std::vector<double> hit_rate;  // hit_rate[r-1] = fraction of probes at rank <= r
};

// Closed-set identification. A probe's subject score is the max over that
// subject's enrolled impressions; rank is the position of the true subject
// under (score desc, subject_id asc). Probe subjects must all be enrolled.
CmcCurve closed_set_search_eval(const EmbeddingStore& gallery, const EmbeddingStore& probes,
                                int max_rank, int threads = 1);

struct DetPoint {
    double threshold = 0.0;
    double fpir = 0.0;  // unmated probes with top-1 score >= threshold
    double fnir = 0.0;  // mated probes rejected or matched to the wrong subject
};

std::vector<DetPoint> open_set_search_eval(const EmbeddingStore& gallery,
                                           const EmbeddingStore& mated_probes,
                                           const EmbeddingStore& unmated_probes,
                                           const std::vector<double>& thresholds,
                                           int threads = 1);

struct Protocol {
    int folds = 5;
    int enroll_per_finger = 2;
    double unmated_fraction = 0.5;
    std::uint64_t seed = 0;
};

struct ImpressionRef {
    std::uint64_t subject_id = 0;
    std::uint32_t impression_id = 0;
};

struct SubjectImpressions {
    std::uint64_t subject_id = 0;
    std::vector<std::uint32_t> impressions;
};

// Search-protocol construction: enroll_per_finger seeded-random enrollments
// per distractor and test finger form the closed gallery; the remaining
// test impressions are probes. The open gallery drops the enrollments of a
// seeded half (unmated_fraction) of the test subjects, whose probes become
// the unmated set.
struct GalleryPlan {
    std::vector<ImpressionRef> closed_gallery;
    std::vector<ImpressionRef> open_gallery;
    std::vector<ImpressionRef> probes;          // closed-set probe list
    std::vector<ImpressionRef> mated_probes;    // probes still enrolled in the open gallery
    std::vector<ImpressionRef> unmated_probes;
    std::vector<std::uint64_t> unmated_subjects;
};

GalleryPlan build_galleries(const std::vector<SubjectImpressions>& test_identities,
                            const std::vector<SubjectImpressions>& distractors,
                            const Protocol& protocol);

struct FoldSplit {
    std::vector<std::uint64_t> train;
    std::vector<std::uint64_t> val;
    std::vector<std::uint64_t> test;
};

// Identity-disjoint k-fold partition: fold i tests on group i and
// validates on group i+1 (mod folds); the rest trains. Test groups cover
// every identity exactly once across folds.
std::vector<FoldSplit> kfold_split(const std::vector<std::uint64_t>& identities, int folds,
                                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<TarFarPoint> tar_at_far;
    CmcCurve cmc;
    std::vector<DetPoint> det_open;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n-1)
};

Aggregate aggregate(const std::vector<double>& values);

std::string report_to_json(const EvalReport& report);
std::string tar_far_csv(const std::vector<TarFarPoint>& points);    // far,tar(,threshold)
std::string cmc_csv(const CmcCurve& curve);                         // rank,hit_rate
std::string det_csv(const std::vector<DetPoint>& points);           // threshold,fpir,fnir

}  // namespace fpvit
