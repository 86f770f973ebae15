#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace fpvit {

struct EmbeddingRecord {
    std::uint64_t subject_id = 0;
    std::uint32_t impression_id = 0;
};

// Immutable-after-build gallery of unit-norm embeddings. Vectors live in
// one contiguous row-major block so the scan streams linearly; build, then
// share across search threads.
class EmbeddingStore {
  public:
    explicit EmbeddingStore(int dim);

    // Validates unit norm (+-1e-5) and (subject, impression) uniqueness.
    void add(std::uint64_t subject_id, std::uint32_t impression_id,
             const std::vector<float>& vector);

    int dim() const { return dim_; }
    std::size_t size() const { return records_.size(); }
    const EmbeddingRecord& record(std::size_t i) const { return records_[i]; }
    const float* row(std::size_t i) const { return block_.data() + i * dim_; }
    const float* block() const { return block_.data(); }

    void save(const std::string& path) const;
    static EmbeddingStore load(const std::string& path);

  private:
    int dim_;
    std::vector<EmbeddingRecord> records_;
    std::vector<float> block_;
    std::unordered_multimap<std::uint64_t, std::uint32_t> keys_;  // uniqueness index
};

// Cosine similarity of unit-norm embeddings (plain inner product).
float score(const std::vector<float>& a, const std::vector<float>& b);

// w1*s1 + w2*s2 with w1, w2 >= 0 and w1 + w2 = 1.
double fuse(double s1, double s2, double w1, double w2);

// Element-wise fusion over matched score lists. With minmax_normalize each
// source is first mapped onto [0, 1] over its own score range (for
// heterogeneous sources); default is raw scores, both already in [-1, 1].
std::vector<float> fuse_scores(const std::vector<float>& s1, const std::vector<float>& s2,
                               double w1, double w2, bool minmax_normalize = false);

struct SearchHit {
    std::uint64_t subject_id = 0;
    std::uint32_t impression_id = 0;
    float score = 0.0f;
};

// Exact brute-force scan. Results sorted by score descending, ties broken
// by (subject_id, impression_id) ascending, so rankings are total and
// independent of the thread count.
std::vector<SearchHit> search(const EmbeddingStore& store, const std::vector<float>& probe,
                              std::size_t top_k, int threads = 1);

struct BenchReport {
    int dim = 0;
    std::size_t gallery_size = 0;
    int repetitions = 0;
    int threads = 0;
    double single_thread_cps = 0.0;  // comparisons per second
    double multi_thread_cps = 0.0;
    std::string hardware;
};

// End-to-end probe-vs-gallery throughput: scoring plus top-k maintenance.
// Reports the median over repetitions after a warmup pass, and runs a dim-1
// correctness smoke before timing. threads <= 0 means all hardware threads.
BenchReport bench_throughput(int dim, std::size_t gallery_size, int repetitions, int threads = 0);

std::string format_bench_report(const BenchReport& report);

}  // namespace fpvit
