#include "fpvit/matcher.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "fpvit/error.hpp"
#include "fpvit/kernels.hpp"
#include "fpvit/rng.hpp"

namespace fpvit {

EmbeddingStore::EmbeddingStore(int dim) : dim_(dim) {
    if (dim <= 0) throw ConfigError("embedding store dim must be positive");
}

void EmbeddingStore::add(std::uint64_t subject_id, std::uint32_t impression_id,
                         const std::vector<float>& vector) {
    if (static_cast<int>(vector.size()) != dim_)
        throw ShapeError("embedding has dim " + std::to_string(vector.size()) +
                         ", store expects " + std::to_string(dim_));
    double norm_sq = 0.0;
    for (float v : vector) norm_sq += static_cast<double>(v) * v;
    double norm = std::sqrt(norm_sq);
    if (std::fabs(norm - 1.0) > 1e-5)
        throw ValidationError("embedding for subject " + std::to_string(subject_id) +
                              " impression " + std::to_string(impression_id) +
                              " is not unit-norm (|v| = " + std::to_string(norm) + ")");
    auto [lo, hi] = keys_.equal_range(subject_id);
    for (auto it = lo; it != hi; ++it) {
        if (it->second == impression_id)
            throw ValidationError("duplicate record (" + std::to_string(subject_id) + ", " +
                                  std::to_string(impression_id) + ")");
    }
    keys_.emplace(subject_id, impression_id);
    records_.push_back({subject_id, impression_id});
    block_.insert(block_.end(), vector.begin(), vector.end());
}

namespace {

constexpr char kStoreMagic[4] = {'F', 'P', 'E', 'M'};
constexpr std::uint32_t kStoreVersion = 1;

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const std::string& path) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw FormatError("truncated embedding store: " + path);
    return v;
}

}  // namespace

void EmbeddingStore::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write embedding store: " + path);
    out.write(kStoreMagic, 4);
    write_pod(out, kStoreVersion);
    write_pod(out, static_cast<std::uint32_t>(dim_));
    write_pod(out, static_cast<std::uint64_t>(records_.size()));
    for (std::size_t i = 0; i < records_.size(); ++i) {
        write_pod(out, records_[i].subject_id);
        write_pod(out, records_[i].impression_id);
        out.write(reinterpret_cast<const char*>(block_.data() + i * dim_),
                  static_cast<std::streamsize>(dim_ * sizeof(float)));
    }
    if (!out) throw IoError("embedding store write failed: " + path);
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding store: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kStoreMagic, 4) != 0)
        throw FormatError("not an embedding store (bad magic): " + path);
    auto version = read_pod<std::uint32_t>(in, path);
    if (version != kStoreVersion)
        throw FormatError("unsupported embedding store version " + std::to_string(version) +
                          ": " + path);
    auto dim = read_pod<std::uint32_t>(in, path);
    auto count = read_pod<std::uint64_t>(in, path);
    if (dim == 0 || dim > (1u << 20)) throw FormatError("implausible store dim: " + path);

    EmbeddingStore store(static_cast<int>(dim));
    store.records_.resize(count);
    store.block_.resize(count * dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        store.records_[i].subject_id = read_pod<std::uint64_t>(in, path);
        store.records_[i].impression_id = read_pod<std::uint32_t>(in, path);
        store.keys_.emplace(store.records_[i].subject_id, store.records_[i].impression_id);
        in.read(reinterpret_cast<char*>(store.block_.data() + i * dim),
                static_cast<std::streamsize>(dim * sizeof(float)));
        if (!in) throw FormatError("truncated embedding store: " + path);
    }
    return store;
}

float score(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size())
        throw ShapeError("score dims differ: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    return kernels::dot(a.data(), b.data(), a.size());
}

double fuse(double s1, double s2, double w1, double w2) {
    if (w1 < 0.0 || w2 < 0.0 || std::fabs(w1 + w2 - 1.0) > 1e-9)
        throw ConfigError("fusion weights must be non-negative and sum to 1");
    return w1 * s1 + w2 * s2;
}

namespace {

void minmax_to_unit(std::vector<float>& scores) {
    if (scores.empty()) return;
    auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    float lo = *lo_it, hi = *hi_it;
    if (hi - lo < 1e-12f) {
        std::fill(scores.begin(), scores.end(), 0.0f);
        return;
    }
    float inv = 1.0f / (hi - lo);
    for (float& s : scores) s = (s - lo) * inv;
}

}  // namespace

std::vector<float> fuse_scores(const std::vector<float>& s1, const std::vector<float>& s2,
                               double w1, double w2, bool minmax_normalize) {
    if (w1 < 0.0 || w2 < 0.0 || std::fabs(w1 + w2 - 1.0) > 1e-9)
        throw ConfigError("fusion weights must be non-negative and sum to 1");
    if (s1.size() != s2.size())
        throw ShapeError("fusion score lists differ in length: " + std::to_string(s1.size()) +
                         " vs " + std::to_string(s2.size()));
    std::vector<float> a = s1, b = s2;
    if (minmax_normalize) {
        minmax_to_unit(a);
        minmax_to_unit(b);
    }
    std::vector<float> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = static_cast<float>(w1 * a[i] + w2 * b[i]);
    return out;
}

namespace {

// Total order on hits: better score first, then subject and impression
// ascending. Makes rankings deterministic under score ties.
bool hit_better(const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
    return a.impression_id < b.impression_id;
}

// Bounded worst-first heap of the best k hits seen so far.
class TopK {
  public:
    explicit TopK(std::size_t k) : k_(k) {}

    void push(const SearchHit& hit) {
        if (heap_.size() < k_) {
            heap_.push_back(hit);
            std::push_heap(heap_.begin(), heap_.end(), hit_better);
        } else if (hit_better(hit, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), hit_better);
            heap_.back() = hit;
            std::push_heap(heap_.begin(), heap_.end(), hit_better);
        }
    }

    std::vector<SearchHit> sorted() && {
        std::sort(heap_.begin(), heap_.end(), hit_better);
        return std::move(heap_);
    }

    std::vector<SearchHit>& raw() { return heap_; }

  private:
    std::size_t k_;
    std::vector<SearchHit> heap_;
};

constexpr std::size_t kScanBlock = 4096;

void scan_range(const EmbeddingStore& store, const float* probe, std::size_t begin,
                std::size_t end, TopK& top) {
    int dim = store.dim();
    float scores[kScanBlock];
    for (std::size_t at = begin; at < end; at += kScanBlock) {
        std::size_t n = std::min(kScanBlock, end - at);
        kernels::score_block(store.block() + at * dim, n, dim, probe, scores);
        for (std::size_t i = 0; i < n; ++i) {
            const EmbeddingRecord& r = store.record(at + i);
            top.push({r.subject_id, r.impression_id, scores[i]});
        }
    }
}

}  // namespace

std::vector<SearchHit> search(const EmbeddingStore& store, const std::vector<float>& probe,
                              std::size_t top_k, int threads) {
    if (store.size() == 0) throw ValidationError("search against an empty store");
    if (static_cast<int>(probe.size()) != store.dim())
        throw ShapeError("probe dim " + std::to_string(probe.size()) +
                         " does not match store dim " + std::to_string(store.dim()));
    if (top_k == 0) return {};
    std::size_t k = std::min(top_k, store.size());

    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min<int>(threads, static_cast<int>(store.size())));

    if (threads == 1) {
        TopK top(k);
        scan_range(store, probe.data(), 0, store.size(), top);
        return std::move(top).sorted();
    }

    // Disjoint chunks scanned concurrently; the per-chunk top-k sets are
    // merged afterwards. The global top-k is unique under the total order,
    // so the result does not depend on the chunking.
    std::vector<TopK> tops(threads, TopK(k));
    std::vector<std::thread> pool;
    std::size_t chunk = (store.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        std::size_t lo = static_cast<std::size_t>(t) * chunk;
        std::size_t hi = std::min(lo + chunk, store.size());
        if (lo >= hi) break;
        pool.emplace_back(
            [&store, &probe, lo, hi, &tops, t] { scan_range(store, probe.data(), lo, hi, tops[t]); });
    }
    for (auto& th : pool) th.join();

    TopK merged(k);
    for (auto& t : tops)
        for (const SearchHit& h : t.raw()) merged.push(h);
    return std::move(merged).sorted();
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

namespace {

std::string cpu_description() {
    std::ifstream in("/proc/cpuinfo");
    std::string line, model = "unknown cpu";
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            auto colon = line.find(':');
            if (colon != std::string::npos) model = line.substr(colon + 2);
            break;
        }
    }
    return model + ", " + std::to_string(std::thread::hardware_concurrency()) +
           " hardware threads, kernels=" +
           kernels::backend_name(kernels::active_backend());
}

double measure_cps(const EmbeddingStore& store, const std::vector<float>& probe, int threads,
                   int repetitions) {
    // Warm up until the clock ramp settles (frequency governors take on the
    // order of a second), then time per repetition. The median is reported:
    // a scheduler stall inside one repetition must not skew the number.
    auto warm_until = std::chrono::steady_clock::now() + std::chrono::milliseconds(1500);
    do {
        search(store, probe, 10, threads);
    } while (std::chrono::steady_clock::now() < warm_until);
    std::vector<double> cps(repetitions);
    for (int r = 0; r < repetitions; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        search(store, probe, 10, threads);
        auto t1 = std::chrono::steady_clock::now();
        cps[r] = static_cast<double>(store.size()) / std::chrono::duration<double>(t1 - t0).count();
    }
    std::sort(cps.begin(), cps.end());
    return cps[cps.size() / 2];
}

}  // namespace

BenchReport bench_throughput(int dim, std::size_t gallery_size, int repetitions, int threads) {
    if (dim <= 0 || gallery_size == 0) throw ConfigError("bench needs positive dim and gallery");
    if (repetitions <= 0) repetitions = 1;
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());

    // Correctness smoke: a dim-1 gallery of identical unit vectors must
    // score 1.0 everywhere through the same scan path.
    {
        EmbeddingStore ones(1);
        for (int i = 0; i < 64; ++i)
            ones.add(static_cast<std::uint64_t>(i), 0, std::vector<float>{1.0f});
        auto hits = search(ones, std::vector<float>{1.0f}, 64, 1);
        for (const SearchHit& h : hits)
            if (std::fabs(h.score - 1.0f) > 1e-6f)
                throw NumericError("bench smoke failed: expected all scores 1.0");
    }

    EmbeddingStore store(dim);
    {
        Rng rng(42);
        std::vector<float> vec(dim);
        for (std::size_t i = 0; i < gallery_size; ++i) {
            double norm_sq = 0.0;
            for (int d = 0; d < dim; ++d) {
                vec[d] = static_cast<float>(rng.normal());
                norm_sq += static_cast<double>(vec[d]) * vec[d];
            }
            float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
            for (int d = 0; d < dim; ++d) vec[d] *= inv;
            store.add(i, 0, vec);
        }
    }

    std::vector<float> probe(store.row(gallery_size / 2), store.row(gallery_size / 2) + dim);

    BenchReport report;
    report.dim = dim;
    report.gallery_size = gallery_size;
    report.repetitions = repetitions;
    report.threads = threads;
    report.hardware = cpu_description();
    report.single_thread_cps = measure_cps(store, probe, 1, repetitions);
    report.multi_thread_cps =
        threads > 1 ? measure_cps(store, probe, threads, repetitions) : report.single_thread_cps;
    return report;
}

std::string format_bench_report(const BenchReport& r) {
    std::ostringstream os;
    os << "gallery " << r.gallery_size << " x dim " << r.dim << ", " << r.repetitions
       << " repetitions\n"
       << "hardware: " << r.hardware << "\n"
       << "single-thread: " << static_cast<long long>(r.single_thread_cps) << " comparisons/s\n"
       << r.threads << "-thread:      " << static_cast<long long>(r.multi_thread_cps)
       << " comparisons/s\n";
    return os.str();
}

}  // namespace fpvit
