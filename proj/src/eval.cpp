#include "fpvit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "fpvit/error.hpp"
#include "fpvit/kernels.hpp"
#include "fpvit/rng.hpp"

namespace fpvit {

PairCounts count_pairs(const std::vector<int>& impressions_per_finger) {
    PairCounts counts;
    std::uint64_t total = 0;
    for (int n : impressions_per_finger) {
        if (n < 0) throw ValidationError("negative impression count");
        std::uint64_t un = static_cast<std::uint64_t>(n);
        counts.genuine += un * (un - 1) / 2;
        total += un;
    }
    std::uint64_t all_pairs = total * (total - 1) / 2;
    counts.imposter = all_pairs - counts.genuine;
    return counts;
}

ScoreSet enumerate_pairs(const EmbeddingStore& impressions) {
    std::unordered_set<std::uint64_t> fingers;
    for (std::size_t i = 0; i < impressions.size(); ++i)
        fingers.insert(impressions.record(i).subject_id);
    if (fingers.size() < 2)
        throw ProtocolError("pair enumeration needs at least two fingers, got " +
                            std::to_string(fingers.size()));

    ScoreSet scores;
    std::size_t n = impressions.size();
    int dim = impressions.dim();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            float s = kernels::dot(impressions.row(i), impressions.row(j), dim);
            if (impressions.record(i).subject_id == impressions.record(j).subject_id)
                scores.genuine.push_back(s);
            else
                scores.imposter.push_back(s);
        }
    }
    return scores;
}

std::vector<TarFarPoint> tar_at_far(const ScoreSet& scores,
                                    const std::vector<double>& far_targets) {
    if (scores.genuine.empty() || scores.imposter.empty())
        throw ValidationError("tar_at_far needs non-empty genuine and imposter scores");
    for (double t : far_targets)
        if (!(t > 0.0) || !(t < 1.0)) throw ConfigError("FAR targets must lie in (0, 1)");

    std::vector<float> imposters = scores.imposter;
    std::sort(imposters.begin(), imposters.end(), std::greater<float>());
    std::size_t n_imp = imposters.size();
    std::size_t n_gen = scores.genuine.size();

    std::vector<TarFarPoint> out;
    out.reserve(far_targets.size());
    for (double target : far_targets) {
        TarFarPoint point;
        point.far_target = target;
        std::size_t admit = static_cast<std::size_t>(target * static_cast<double>(n_imp));
        if (admit == 0) {
            point.resolution_warning = true;
            point.threshold = imposters.front();  // accept only above the max imposter
        } else {
            point.threshold = imposters[std::min(admit, n_imp - 1)];
        }
        std::uint64_t fa = 0;
        for (float s : imposters) fa += s > point.threshold ? 1 : 0;
        std::uint64_t ta = 0;
        for (float s : scores.genuine) ta += s > point.threshold ? 1 : 0;
        point.far_achieved = static_cast<double>(fa) / n_imp;
        point.tar = static_cast<double>(ta) / n_gen;
        out.push_back(point);
    }
    return out;
}

namespace {

struct SubjectBest {
    std::uint64_t subject = 0;
    float score = -2.0f;
};

// Per-subject max over the subject's enrolled impressions. The scan may be
// chunked across threads: per-row scores do not depend on chunk boundaries,
// so the result is thread-count independent.
std::unordered_map<std::uint64_t, float> subject_scores(const EmbeddingStore& gallery,
                                                        const float* probe, int threads) {
    std::vector<float> all(gallery.size());
    if (threads > 1 && gallery.size() >= 4096) {
        std::size_t chunk = (gallery.size() + threads - 1) / threads;
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            std::size_t lo = static_cast<std::size_t>(t) * chunk;
            std::size_t hi = std::min(lo + chunk, gallery.size());
            if (lo >= hi) break;
            pool.emplace_back([&gallery, probe, &all, lo, hi] {
                kernels::score_block(gallery.block() + lo * gallery.dim(), hi - lo,
                                     gallery.dim(), probe, all.data() + lo);
            });
        }
        for (auto& th : pool) th.join();
    } else {
        kernels::score_block(gallery.block(), gallery.size(), gallery.dim(), probe, all.data());
    }
    std::unordered_map<std::uint64_t, float> best;
    best.reserve(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        std::uint64_t s = gallery.record(i).subject_id;
        auto [it, fresh] = best.try_emplace(s, all[i]);
        if (!fresh && all[i] > it->second) it->second = all[i];
    }
    return best;
}

SubjectBest top_subject(const std::unordered_map<std::uint64_t, float>& scores) {
    SubjectBest top;
    for (const auto& [subject, sc] : scores) {
        if (sc > top.score || (sc == top.score && subject < top.subject)) {
            top.subject = subject;
            top.score = sc;
        }
    }
    return top;
}

}  // namespace

CmcCurve closed_set_search_eval(const EmbeddingStore& gallery, const EmbeddingStore& probes,
                                int max_rank, int threads) {
    if (gallery.size() == 0 || probes.size() == 0)
        throw ProtocolError("closed-set evaluation needs a gallery and probes");
    if (gallery.dim() != probes.dim())
        throw ShapeError("gallery and probe dims differ");
    if (max_rank <= 0) throw ConfigError("max_rank must be positive");

    std::unordered_set<std::uint64_t> enrolled;
    for (std::size_t i = 0; i < gallery.size(); ++i) enrolled.insert(gallery.record(i).subject_id);

    std::vector<std::uint64_t> rank_hits(static_cast<std::size_t>(max_rank), 0);
    for (std::size_t p = 0; p < probes.size(); ++p) {
        std::uint64_t truth = probes.record(p).subject_id;
        if (!enrolled.count(truth))
            throw ProtocolError("closed-set violation: probe subject " + std::to_string(truth) +
                                " has no gallery enrollment");
        auto best = subject_scores(gallery, probes.row(p), threads);
        float truth_score = best.at(truth);
        std::uint64_t rank = 1;
        for (const auto& [subject, sc] : best) {
            if (subject == truth) continue;
            if (sc > truth_score || (sc == truth_score && subject < truth)) ++rank;
        }
        if (rank <= static_cast<std::uint64_t>(max_rank)) ++rank_hits[rank - 1];
    }

    CmcCurve curve;
    curve.hit_rate.resize(max_rank);
    std::uint64_t cum = 0;
    for (int r = 0; r < max_rank; ++r) {
        cum += rank_hits[r];
        curve.hit_rate[r] = static_cast<double>(cum) / probes.size();
    }
    return curve;
}

std::vector<DetPoint> open_set_search_eval(const EmbeddingStore& gallery,
                                           const EmbeddingStore& mated_probes,
                                           const EmbeddingStore& unmated_probes,
                                           const std::vector<double>& thresholds, int threads) {
    if (gallery.size() == 0) throw ProtocolError("open-set evaluation needs a gallery");
    if (mated_probes.size() == 0 || unmated_probes.size() == 0)
        throw ProtocolError("open-set evaluation needs mated and unmated probes");

    std::unordered_set<std::uint64_t> enrolled;
    for (std::size_t i = 0; i < gallery.size(); ++i) enrolled.insert(gallery.record(i).subject_id);
    for (std::size_t i = 0; i < unmated_probes.size(); ++i) {
        std::uint64_t s = unmated_probes.record(i).subject_id;
        if (enrolled.count(s))
            throw ProtocolError("unmated probe subject " + std::to_string(s) +
                                " is enrolled in the gallery");
    }

    struct Top1 {
        float score;
        bool correct;
    };
    std::vector<Top1> mated(mated_probes.size());
    for (std::size_t p = 0; p < mated_probes.size(); ++p) {
        auto best = subject_scores(gallery, mated_probes.row(p), threads);
        SubjectBest top = top_subject(best);
        mated[p] = {top.score, top.subject == mated_probes.record(p).subject_id};
    }
    std::vector<float> unmated(unmated_probes.size());
    for (std::size_t p = 0; p < unmated_probes.size(); ++p) {
        auto best = subject_scores(gallery, unmated_probes.row(p), threads);
        unmated[p] = top_subject(best).score;
    }

    std::vector<DetPoint> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        DetPoint point;
        point.threshold = t;
        std::uint64_t fp = 0;
        for (float s : unmated) fp += s >= t ? 1 : 0;
        std::uint64_t fn = 0;
        for (const Top1& m : mated) fn += (m.score < t || !m.correct) ? 1 : 0;
        point.fpir = static_cast<double>(fp) / unmated.size();
        point.fnir = static_cast<double>(fn) / mated.size();
        out.push_back(point);
    }
    return out;
}

GalleryPlan build_galleries(const std::vector<SubjectImpressions>& test_identities,
                            const std::vector<SubjectImpressions>& distractors,
                            const Protocol& protocol) {
    if (protocol.enroll_per_finger < 1) throw ConfigError("enroll_per_finger must be >= 1");
    if (!(protocol.unmated_fraction > 0.0) || !(protocol.unmated_fraction < 1.0))
        throw ConfigError("unmated_fraction must lie in (0, 1)");

    Rng rng(protocol.seed);
    GalleryPlan plan;

    auto pick_enrollments = [&](const SubjectImpressions& subject) {
        std::vector<std::uint32_t> pool = subject.impressions;
        rng.shuffle(pool);
        pool.resize(protocol.enroll_per_finger);
        std::sort(pool.begin(), pool.end());
        return pool;
    };

    for (const SubjectImpressions& d : distractors) {
        if (static_cast<int>(d.impressions.size()) < protocol.enroll_per_finger)
            throw ProtocolError("distractor " + std::to_string(d.subject_id) + " has " +
                                std::to_string(d.impressions.size()) +
                                " impressions, needs >= " +
                                std::to_string(protocol.enroll_per_finger));
        for (std::uint32_t imp : pick_enrollments(d))
            plan.closed_gallery.push_back({d.subject_id, imp});
    }

    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> test_enrollments;
    for (const SubjectImpressions& s : test_identities) {
        if (static_cast<int>(s.impressions.size()) < protocol.enroll_per_finger + 1)
            throw ProtocolError("test subject " + std::to_string(s.subject_id) + " has " +
                                std::to_string(s.impressions.size()) +
                                " impressions, needs >= " +
                                std::to_string(protocol.enroll_per_finger + 1));
        std::vector<std::uint32_t> enrolled = pick_enrollments(s);
        test_enrollments[s.subject_id] = enrolled;
        for (std::uint32_t imp : enrolled) plan.closed_gallery.push_back({s.subject_id, imp});
        for (std::uint32_t imp : s.impressions)
            if (!std::binary_search(enrolled.begin(), enrolled.end(), imp))
                plan.probes.push_back({s.subject_id, imp});
    }

    // Seeded unmated designation over the test subjects.
    std::vector<std::uint64_t> subjects;
    subjects.reserve(test_identities.size());
    for (const SubjectImpressions& s : test_identities) subjects.push_back(s.subject_id);
    rng.shuffle(subjects);
    std::size_t n_unmated =
        static_cast<std::size_t>(protocol.unmated_fraction * static_cast<double>(subjects.size()));
    std::unordered_set<std::uint64_t> unmated(subjects.begin(), subjects.begin() + n_unmated);
    plan.unmated_subjects.assign(unmated.begin(), unmated.end());
    std::sort(plan.unmated_subjects.begin(), plan.unmated_subjects.end());

    for (const ImpressionRef& e : plan.closed_gallery)
        if (!unmated.count(e.subject_id)) plan.open_gallery.push_back(e);
    for (const ImpressionRef& p : plan.probes) {
        if (unmated.count(p.subject_id))
            plan.unmated_probes.push_back(p);
        else
            plan.mated_probes.push_back(p);
    }
    return plan;
}

std::vector<FoldSplit> kfold_split(const std::vector<std::uint64_t>& identities, int folds,
                                   std::uint64_t seed) {
    if (folds < 2) throw ProtocolError("kfold needs folds >= 2");
    if (static_cast<std::size_t>(folds) > identities.size())
        throw ProtocolError("folds " + std::to_string(folds) + " exceeds identity count " +
                            std::to_string(identities.size()));

    std::vector<std::uint64_t> shuffled = identities;
    Rng rng(seed);
    rng.shuffle(shuffled);

    // Near-equal contiguous groups of the shuffled identity list.
    std::vector<std::vector<std::uint64_t>> groups(folds);
    std::size_t base = shuffled.size() / folds;
    std::size_t extra = shuffled.size() % folds;
    std::size_t at = 0;
    for (int g = 0; g < folds; ++g) {
        std::size_t len = base + (static_cast<std::size_t>(g) < extra ? 1 : 0);
        groups[g].assign(shuffled.begin() + at, shuffled.begin() + at + len);
        at += len;
    }

    std::vector<FoldSplit> splits(folds);
    for (int f = 0; f < folds; ++f) {
        splits[f].test = groups[f];
        splits[f].val = groups[(f + 1) % folds];
        for (int g = 0; g < folds; ++g) {
            if (g == f || g == (f + 1) % folds) continue;
            splits[f].train.insert(splits[f].train.end(), groups[g].begin(), groups[g].end());
        }
    }
    return splits;
}

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["tar_at_far"] = nlohmann::json::array();
    for (const TarFarPoint& p : report.tar_at_far) {
        j["tar_at_far"].push_back({{"far_target", p.far_target},
                                   {"far_achieved", p.far_achieved},
                                   {"tar", p.tar},
                                   {"threshold", p.threshold},
                                   {"resolution_warning", p.resolution_warning}});
    }
    j["cmc"] = nlohmann::json::array();
    for (std::size_t r = 0; r < report.cmc.hit_rate.size(); ++r)
        j["cmc"].push_back({{"rank", r + 1}, {"hit_rate", report.cmc.hit_rate[r]}});
    j["det_open"] = nlohmann::json::array();
    for (const DetPoint& p : report.det_open)
        j["det_open"].push_back(
            {{"threshold", p.threshold}, {"fpir", p.fpir}, {"fnir", p.fnir}});
    return j.dump(2);
}

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

}  // namespace

std::string tar_far_csv(const std::vector<TarFarPoint>& points) {
    std::string out = "far,tar,threshold\n";
    for (const TarFarPoint& p : points)
        out += format_double(p.far_target) + "," + format_double(p.tar) + "," +
               format_double(p.threshold) + "\n";
    return out;
}

std::string cmc_csv(const CmcCurve& curve) {
    std::string out = "rank,hit_rate\n";
    for (std::size_t r = 0; r < curve.hit_rate.size(); ++r)
        out += std::to_string(r + 1) + "," + format_double(curve.hit_rate[r]) + "\n";
    return out;
}

std::string det_csv(const std::vector<DetPoint>& points) {
    std::string out = "threshold,fpir,fnir\n";
    for (const DetPoint& p : points)
        out += format_double(p.threshold) + "," + format_double(p.fpir) + "," +
               format_double(p.fnir) + "\n";
    return out;
}

}  // namespace fpvit
