// fpvit: train/embed/match/evaluate toolchain for fingerprint embeddings.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or format
// error, 3 numerical/training/generation failure. Errors print one
// structured line to stderr.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "fpvit/config.hpp"
#include "fpvit/error.hpp"
#include "fpvit/eval.hpp"
#include "fpvit/kernels.hpp"
#include "fpvit/matcher.hpp"
#include "fpvit/synthdata.hpp"
#include "fpvit/vit.hpp"

namespace fs = std::filesystem;
using namespace fpvit;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ProvenanceTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void write_provenance(const std::string& out_dir, const std::string& command,
                      const std::string& config_echo, double seconds) {
    std::string dir = out_dir.empty() ? "." : out_dir;
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "provenance.txt");
    out << "command: " << command << "\n"
        << "version: " << kVersion << "\n"
        << "kernel_backend: " << kernels::backend_name(kernels::active_backend()) << "\n"
        << "elapsed_seconds: " << seconds << "\n\n"
        << config_echo;
}

struct IdentityFilter {
    std::uint64_t lo = 0;
    std::uint64_t hi = UINT64_MAX;  // half-open [lo, hi)

    bool contains(std::uint64_t id) const { return id >= lo && id < hi; }
};

IdentityFilter parse_filter(const std::string& text) {
    IdentityFilter f;
    if (text.empty()) return f;
    auto colon = text.find(':');
    if (colon == std::string::npos)
        throw ConfigError("identity filter must be lo:hi, got " + text);
    try {
        f.lo = std::stoull(text.substr(0, colon));
        f.hi = std::stoull(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("identity filter must be numeric lo:hi, got " + text);
    }
    return f;
}

struct LoadedCorpus {
    std::vector<TrainSample> samples;
    std::vector<std::uint64_t> subject_of_sample;    // original manifest identity
    std::vector<std::uint32_t> impression_of_sample;
    std::map<std::uint64_t, int> label_of_subject;   // identity -> class index
};

LoadedCorpus load_corpus(const std::string& manifest_path, const IdentityFilter& filter,
                         int image_side, int patch_size, int map_channels, double map_sigma) {
    LoadedCorpus corpus;
    auto rows = read_manifest(manifest_path);
    std::set<std::uint64_t> subjects;
    for (const ManifestRow& r : rows)
        if (filter.contains(r.identity)) subjects.insert(r.identity);
    int next = 0;
    for (std::uint64_t s : subjects) corpus.label_of_subject[s] = next++;

    for (const ManifestRow& r : rows) {
        if (!filter.contains(r.identity)) continue;
        Image img = read_pgm(r.image_path);
        MinutiaeSet minutiae = read_minutiae_file(r.minutiae_path);
        TokenSequence tokens =
            prepare_tokens(img, minutiae, image_side, patch_size, map_channels, map_sigma);
        TrainSample sample;
        sample.tokens = std::move(tokens.data);
        sample.label = corpus.label_of_subject.at(r.identity);
        corpus.samples.push_back(std::move(sample));
        corpus.subject_of_sample.push_back(r.identity);
        corpus.impression_of_sample.push_back(static_cast<std::uint32_t>(r.impression));
    }
    if (corpus.samples.empty())
        throw ValidationError("no impressions matched the identity filter in " + manifest_path);
    return corpus;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    int identities = 50;
    int impressions = 10;
    std::uint64_t seed = 1;
    int image_side = 224;
    std::string out;
};

int cmd_generate(const GenerateArgs& a) {
    ProvenanceTimer timer;
    SynthParams params;
    params.image_side = a.image_side;
    auto rows = generate_dataset(a.identities, a.impressions, a.seed, a.out, params);
    std::ostringstream cfg;
    cfg << "[generate]\nidentities = " << a.identities << "\nimpressions = " << a.impressions
        << "\nseed = " << a.seed << "\nimage_side = " << a.image_side << "\n";
    write_provenance(a.out, "generate", cfg.str(), timer.seconds());
    std::cout << "wrote " << rows.size() << " impressions to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string manifest;
    std::string val_manifest;
    std::string id_filter;
    std::string val_id_filter;
    std::string config_path;
    std::string init_from;
    std::string out;
    RunConfig rc;
    std::map<std::string, std::string> overrides;  // flag overrides onto the config
};

int cmd_train(TrainArgs& a) {
    ProvenanceTimer timer;
    ConfigFile file = a.config_path.empty() ? ConfigFile() : ConfigFile::parse_file(a.config_path);
    for (const auto& [k, v] : a.overrides) file.set(k, v);
    a.rc.apply(file);

    LoadedCorpus corpus = load_corpus(a.manifest, parse_filter(a.id_filter), a.rc.image_side,
                                      a.rc.patch_size, a.rc.token_channels(), a.rc.map_sigma);
    std::vector<TrainSample> val;
    if (!a.val_manifest.empty()) {
        LoadedCorpus vc = load_corpus(a.val_manifest, parse_filter(a.val_id_filter),
                                      a.rc.image_side, a.rc.patch_size, a.rc.token_channels(),
                                      a.rc.map_sigma);
        val = std::move(vc.samples);
    }

    ModelConfig config;
    config.patch_size = a.rc.patch_size;
    config.image_side = a.rc.image_side;
    config.in_dim_per_token = a.rc.in_dim_per_token();
    config.embed_width = a.rc.embed_width;
    config.depth = a.rc.depth;
    config.heads = a.rc.heads;
    config.mlp_ratio = a.rc.mlp_ratio;
    config.embedding_dim = a.rc.embedding_dim;
    config.num_classes = static_cast<int>(corpus.label_of_subject.size());
    config.seed = a.rc.seed;

    TrainSchedule schedule;
    schedule.epochs = a.rc.epochs;
    schedule.batch_size = a.rc.batch_size;
    schedule.peak_lr = a.rc.peak_lr;
    schedule.warmup_steps = a.rc.warmup_steps;
    schedule.weight_decay = a.rc.weight_decay;
    schedule.seed = a.rc.seed;
    schedule.threads = a.rc.threads;

    Checkpoint warm;
    const ModelParams* init = nullptr;
    if (!a.init_from.empty()) {
        warm = load_checkpoint(a.init_from);
        init = &warm.params;
    }

    TrainResult result = train(config, corpus.samples, val, schedule, init);

    fs::create_directories(a.out);
    PipelineInfo pipeline;
    pipeline.mode = a.rc.mode;
    pipeline.map_channels = a.rc.token_channels();
    pipeline.map_sigma = a.rc.map_sigma;
    save_checkpoint((fs::path(a.out) / "model.fpvt").string(), result.params, pipeline);

    std::ofstream log(fs::path(a.out) / "training_log.csv");
    log << "epoch,mean_loss,val_rank1\n";
    for (const EpochLog& e : result.log)
        log << e.epoch << "," << e.mean_loss << "," << e.val_rank1 << "\n";

    write_provenance(a.out, "train", a.rc.echo(), timer.seconds());
    if (result.diverged)
        throw TrainingError("training diverged (" + result.diagnostics +
                            "); last good checkpoint written to " + a.out);
    std::cout << "trained " << corpus.samples.size() << " samples, "
              << config.num_classes << " classes; final loss "
              << (result.log.empty() ? 0.0 : result.log.back().mean_loss) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

struct EmbedArgs {
    std::string checkpoint;
    std::string manifest;
    std::string id_filter;
    std::string out;
};

int cmd_embed(const EmbedArgs& a) {
    ProvenanceTimer timer;
    Checkpoint ck = load_checkpoint(a.checkpoint);
    const ModelConfig& c = ck.params.config;

    auto rows = read_manifest(a.manifest);
    IdentityFilter filter = parse_filter(a.id_filter);
    EmbeddingStore store(c.embedding_dim);
    std::size_t used = 0;
    for (const ManifestRow& r : rows) {
        if (!filter.contains(r.identity)) continue;
        Image img = read_pgm(r.image_path);
        MinutiaeSet minutiae = read_minutiae_file(r.minutiae_path);
        TokenSequence tokens = prepare_tokens(img, minutiae, c.image_side, c.patch_size,
                                              ck.pipeline.map_channels, ck.pipeline.map_sigma);
        store.add(r.identity, static_cast<std::uint32_t>(r.impression),
                  extract_embedding(ck.params, tokens));
        ++used;
    }
    if (used == 0) throw ValidationError("no impressions matched the identity filter");
    store.save(a.out);

    std::ostringstream cfg;
    cfg << "[embed]\ncheckpoint = " << a.checkpoint << "\nmanifest = " << a.manifest
        << "\nmode = " << ck.pipeline.mode << "\ncount = " << used << "\n";
    write_provenance(fs::path(a.out).parent_path().string(), "embed", cfg.str(), timer.seconds());
    std::cout << "embedded " << used << " impressions into " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

struct SearchArgs {
    std::string gallery;
    std::string probes;
    std::size_t top_k = 10;
    int threads = 1;
    std::string out;
};

int cmd_search(const SearchArgs& a) {
    ProvenanceTimer timer;
    EmbeddingStore gallery = EmbeddingStore::load(a.gallery);
    EmbeddingStore probes = EmbeddingStore::load(a.probes);
    if (gallery.dim() != probes.dim())
        throw ShapeError("gallery dim " + std::to_string(gallery.dim()) + " vs probe dim " +
                         std::to_string(probes.dim()));

    fs::create_directories(a.out);
    std::ofstream csv(fs::path(a.out) / "hits.csv");
    csv << "probe_subject,probe_impression,rank,subject,impression,score\n";
    for (std::size_t p = 0; p < probes.size(); ++p) {
        std::vector<float> probe(probes.row(p), probes.row(p) + probes.dim());
        auto hits = search(gallery, probe, a.top_k, a.threads);
        for (std::size_t r = 0; r < hits.size(); ++r)
            csv << probes.record(p).subject_id << "," << probes.record(p).impression_id << ","
                << r + 1 << "," << hits[r].subject_id << "," << hits[r].impression_id << ","
                << hits[r].score << "\n";
    }
    std::ostringstream cfg;
    cfg << "[search]\ngallery = " << a.gallery << "\nprobes = " << a.probes
        << "\ntop_k = " << a.top_k << "\nthreads = " << a.threads << "\n";
    write_provenance(a.out, "search", cfg.str(), timer.seconds());
    std::cout << "searched " << probes.size() << " probes against " << gallery.size()
              << " records\n";
    return 0;
}

// ---------------------------------------------------------------------------
// authenticate
// ---------------------------------------------------------------------------

struct AuthArgs {
    std::string store_a;
    std::string store_b;
    std::string fuse_weights = "0.7,0.3";
    bool fuse_normalize = false;
    std::string far_targets = "0.001,0.01";
    std::string out;
};

int cmd_authenticate(const AuthArgs& a) {
    ProvenanceTimer timer;
    std::vector<double> fars = parse_double_list(a.far_targets);
    if (fars.empty()) throw ConfigError("no FAR targets given");

    EmbeddingStore sa = EmbeddingStore::load(a.store_a);
    ScoreSet scores_a = enumerate_pairs(sa);

    nlohmann::json report;
    fs::create_directories(a.out);
    auto emit = [&](const std::string& name, const ScoreSet& scores) {
        auto points = tar_at_far(scores, fars);
        std::ofstream csv(fs::path(a.out) / (name + "_tar_far.csv"));
        csv << tar_far_csv(points);
        nlohmann::json rows = nlohmann::json::array();
        for (const TarFarPoint& p : points) {
            rows.push_back({{"far_target", p.far_target},
                            {"far_achieved", p.far_achieved},
                            {"tar", p.tar},
                            {"threshold", p.threshold},
                            {"resolution_warning", p.resolution_warning}});
            std::cout << name << ": TAR " << p.tar * 100.0 << "% @ FAR "
                      << p.far_target * 100.0 << "%\n";
        }
        report[name] = rows;
        report[name + "_counts"] = {{"genuine", scores.genuine.size()},
                                    {"imposter", scores.imposter.size()}};
    };

    emit("a", scores_a);

    if (!a.store_b.empty()) {
        EmbeddingStore sb = EmbeddingStore::load(a.store_b);
        if (sa.size() != sb.size())
            throw ProtocolError("fusion stores hold different impression sets");
        for (std::size_t i = 0; i < sa.size(); ++i)
            if (sa.record(i).subject_id != sb.record(i).subject_id ||
                sa.record(i).impression_id != sb.record(i).impression_id)
                throw ProtocolError("fusion stores disagree at record " + std::to_string(i));
        ScoreSet scores_b = enumerate_pairs(sb);
        emit("b", scores_b);

        auto weights = parse_double_list(a.fuse_weights);
        if (weights.size() != 2) throw ConfigError("--fuse expects w1,w2");
        ScoreSet fused;
        fused.genuine =
            fuse_scores(scores_a.genuine, scores_b.genuine, weights[0], weights[1], a.fuse_normalize);
        fused.imposter = fuse_scores(scores_a.imposter, scores_b.imposter, weights[0], weights[1],
                                     a.fuse_normalize);
        emit("fused", fused);
    }

    std::ofstream json_out(fs::path(a.out) / "authenticate_report.json");
    json_out << report.dump(2) << "\n";

    std::ostringstream cfg;
    cfg << "[authenticate]\nstore_a = " << a.store_a << "\nstore_b = " << a.store_b
        << "\nfuse = " << a.fuse_weights << "\nfar_targets = " << a.far_targets << "\n";
    write_provenance(a.out, "authenticate", cfg.str(), timer.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

struct IdentifyArgs {
    std::string gallery;
    std::string probes;
    std::string unmated;
    bool closed = false;
    bool open = false;
    int max_rank = 20;
    std::string thresholds;  // empty -> automatic grid
    int threads = 1;
    std::string out;
};

int cmd_identify(const IdentifyArgs& a) {
    ProvenanceTimer timer;
    if (a.closed == a.open) throw ConfigError("identify needs exactly one of --closed / --open");

    EmbeddingStore gallery = EmbeddingStore::load(a.gallery);
    EmbeddingStore probes = EmbeddingStore::load(a.probes);
    fs::create_directories(a.out);

    if (a.closed) {
        int max_rank = a.max_rank;
        CmcCurve curve = closed_set_search_eval(gallery, probes, max_rank, a.threads);
        std::ofstream csv(fs::path(a.out) / "cmc.csv");
        csv << cmc_csv(curve);
        std::cout << "rank-1: " << curve.hit_rate.front() * 100.0 << "%\n";
    } else {
        if (a.unmated.empty()) throw ConfigError("--open requires --unmated store");
        EmbeddingStore unmated = EmbeddingStore::load(a.unmated);
        std::vector<double> thresholds;
        if (!a.thresholds.empty()) {
            thresholds = parse_double_list(a.thresholds);
        } else {
            for (int i = 0; i <= 50; ++i) thresholds.push_back(-1.0 + 2.0 * i / 50.0);
        }
        auto det = open_set_search_eval(gallery, probes, unmated, thresholds, a.threads);
        std::ofstream csv(fs::path(a.out) / "det.csv");
        csv << det_csv(det);
        std::cout << "wrote " << det.size() << " DET points\n";
    }

    std::ostringstream cfg;
    cfg << "[identify]\ngallery = " << a.gallery << "\nprobes = " << a.probes
        << "\nmode = " << (a.closed ? "closed" : "open") << "\nthreads = " << a.threads << "\n";
    write_provenance(a.out, "identify", cfg.str(), timer.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    int dim = 384;
    std::size_t gallery_size = 1000000;
    int reps = 3;
    int threads = 0;
    std::string out;
};

int cmd_bench(const BenchArgs& a) {
    ProvenanceTimer timer;
    BenchReport report = bench_throughput(a.dim, a.gallery_size, a.reps, a.threads);
    std::cout << format_bench_report(report);
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        nlohmann::json j = {{"dim", report.dim},
                            {"gallery_size", report.gallery_size},
                            {"repetitions", report.repetitions},
                            {"threads", report.threads},
                            {"single_thread_cps", report.single_thread_cps},
                            {"multi_thread_cps", report.multi_thread_cps},
                            {"hardware", report.hardware}};
        std::ofstream out(fs::path(a.out) / "bench.json");
        out << j.dump(2) << "\n";
        std::ostringstream cfg;
        cfg << "[bench]\ndim = " << a.dim << "\ngallery_size = " << a.gallery_size
            << "\nreps = " << a.reps << "\n";
        write_provenance(a.out, "bench", cfg.str(), timer.seconds());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// saliency
// ---------------------------------------------------------------------------

struct SaliencyArgs {
    std::string checkpoint;
    std::string image;
    std::string minutiae;
    std::string target = "embedding-norm";
    int class_index = -1;
    std::string out;
};

int cmd_saliency(const SaliencyArgs& a) {
    ProvenanceTimer timer;
    Checkpoint ck = load_checkpoint(a.checkpoint);
    const ModelConfig& c = ck.params.config;

    Image img = read_pgm(a.image);
    MinutiaeSet minutiae =
        a.minutiae.empty() ? MinutiaeSet(img.width, img.height) : read_minutiae_file(a.minutiae);
    TokenSequence tokens = prepare_tokens(img, minutiae, c.image_side, c.patch_size,
                                          ck.pipeline.map_channels, ck.pipeline.map_sigma);

    SaliencyTarget target;
    if (a.target == "embedding-norm")
        target = SaliencyTarget::embedding_norm;
    else if (a.target == "logit")
        target = SaliencyTarget::class_logit;
    else
        throw ConfigError("saliency target must be embedding-norm or logit");

    Image map = saliency(ck.params, tokens, target, a.class_index);
    // render at capture resolution for side-by-side viewing
    write_pgm(resize_bilinear(map, img.width, img.height), a.out);

    std::ostringstream cfg;
    cfg << "[saliency]\ncheckpoint = " << a.checkpoint << "\nimage = " << a.image
        << "\ntarget = " << a.target << "\n";
    write_provenance(fs::path(a.out).parent_path().string(), "saliency", cfg.str(),
                     timer.seconds());
    std::cout << "wrote saliency map to " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fingerprint embedding toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* cgen = app.add_subcommand("generate", "render a synthetic labeled corpus");
    cgen->add_option("--identities", gen.identities, "number of identities");
    cgen->add_option("--impressions", gen.impressions, "impressions per identity");
    cgen->add_option("--seed", gen.seed, "corpus seed");
    cgen->add_option("--image-side", gen.image_side, "rendered image side in px");
    cgen->add_option("--out", gen.out, "output directory")->required();

    TrainArgs tr;
    auto* ctr = app.add_subcommand("train", "train an embedding model");
    ctr->add_option("--manifest", tr.manifest, "training corpus manifest")->required();
    ctr->add_option("--val-manifest", tr.val_manifest, "validation corpus manifest");
    ctr->add_option("--identity-filter", tr.id_filter, "lo:hi identity range (half-open)");
    ctr->add_option("--val-identity-filter", tr.val_id_filter, "validation identity range");
    ctr->add_option("--config", tr.config_path, "key = value config file");
    ctr->add_option("--init-from", tr.init_from, "warm-start checkpoint (pretrain -> finetune)");
    ctr->add_option("--out", tr.out, "output directory")->required();
    std::string tr_mode, tr_seed, tr_epochs, tr_threads, tr_lr;
    ctr->add_option("--mode", tr_mode, "concat | vanilla");
    ctr->add_option("--seed", tr_seed, "training + init seed");
    ctr->add_option("--epochs", tr_epochs, "training epochs");
    ctr->add_option("--threads", tr_threads, "batch-parallel threads");
    ctr->add_option("--peak-lr", tr_lr, "peak learning rate");

    EmbedArgs em;
    auto* cem = app.add_subcommand("embed", "extract embeddings into a store");
    cem->add_option("--checkpoint", em.checkpoint, "model checkpoint")->required();
    cem->add_option("--manifest", em.manifest, "corpus manifest")->required();
    cem->add_option("--identity-filter", em.id_filter, "lo:hi identity range");
    cem->add_option("--out", em.out, "output store file (.fpem)")->required();

    SearchArgs se;
    auto* cse = app.add_subcommand("search", "1:N search of probes against a gallery");
    cse->add_option("--gallery", se.gallery, "gallery store")->required();
    cse->add_option("--probes", se.probes, "probe store")->required();
    cse->add_option("--top-k", se.top_k, "hits per probe");
    cse->add_option("--threads", se.threads, "scan threads");
    cse->add_option("--out", se.out, "output directory")->required();

    AuthArgs au;
    auto* cau = app.add_subcommand("authenticate", "1:1 TAR@FAR evaluation, optional fusion");
    cau->add_option("--embeddings", au.store_a, "primary embedding store")->required();
    cau->add_option("--embeddings-b", au.store_b, "second store for score-level fusion");
    cau->add_option("--fusion-weights,--fuse", au.fuse_weights,
                    "fusion weights w1,w2 (default 0.7,0.3)");
    cau->add_flag("--fuse-normalize", au.fuse_normalize, "min-max normalize per source");
    cau->add_option("--far", au.far_targets, "FAR targets, comma separated");
    cau->add_option("--out", au.out, "output directory")->required();

    IdentifyArgs id;
    auto* cid = app.add_subcommand("identify", "1:N closed-set (CMC) or open-set (DET)");
    cid->add_option("--gallery", id.gallery, "gallery store")->required();
    cid->add_option("--probes", id.probes, "probe store (mated probes for --open)")->required();
    cid->add_option("--unmated", id.unmated, "unmated probe store (open-set)");
    cid->add_flag("--closed", id.closed, "closed-set CMC");
    cid->add_flag("--open", id.open, "open-set FPIR/FNIR");
    cid->add_option("--max-rank", id.max_rank, "CMC depth");
    cid->add_option("--thresholds", id.thresholds, "DET thresholds, comma separated");
    cid->add_option("--threads", id.threads, "scan threads");
    cid->add_option("--out", id.out, "output directory")->required();

    BenchArgs be;
    auto* cbe = app.add_subcommand("bench", "matcher throughput benchmark");
    cbe->add_option("--dim", be.dim, "embedding dimension");
    cbe->add_option("--gallery-size", be.gallery_size, "gallery record count");
    cbe->add_option("--reps", be.reps, "timed repetitions");
    cbe->add_option("--threads", be.threads, "scan threads (0 = all)");
    cbe->add_option("--out", be.out, "output directory (optional)");

    SaliencyArgs sa;
    auto* csa = app.add_subcommand("saliency", "input-gradient saliency heatmap");
    csa->add_option("--checkpoint", sa.checkpoint, "model checkpoint")->required();
    csa->add_option("--image", sa.image, "input PGM image")->required();
    csa->add_option("--minutiae", sa.minutiae, "input MNT minutiae file");
    csa->add_option("--target", sa.target, "embedding-norm | logit");
    csa->add_option("--class", sa.class_index, "class index for --target logit");
    csa->add_option("--out", sa.out, "output PGM heatmap")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (cgen->parsed()) return cmd_generate(gen);
        if (ctr->parsed()) {
            if (!tr_mode.empty()) tr.overrides["run.mode"] = tr_mode;
            if (!tr_seed.empty()) tr.overrides["run.seed"] = tr_seed;
            if (!tr_epochs.empty()) tr.overrides["train.epochs"] = tr_epochs;
            if (!tr_threads.empty()) tr.overrides["run.threads"] = tr_threads;
            if (!tr_lr.empty()) tr.overrides["train.peak_lr"] = tr_lr;
            return cmd_train(tr);
        }
        if (cem->parsed()) return cmd_embed(em);
        if (cse->parsed()) return cmd_search(se);
        if (cau->parsed()) return cmd_authenticate(au);
        if (cid->parsed()) return cmd_identify(id);
        if (cbe->parsed()) return cmd_bench(be);
        if (csa->parsed()) return cmd_saliency(sa);
    } catch (const ConfigError& e) {
        std::cerr << "fpvit: error: config: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "fpvit: error: numeric: " << e.what() << "\n";
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "fpvit: error: training: " << e.what() << "\n";
        return 3;
    } catch (const GenerationError& e) {
        std::cerr << "fpvit: error: generation: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "fpvit: error: data: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fpvit: error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
