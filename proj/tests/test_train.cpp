#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fpvit/error.hpp"
#include "fpvit/rng.hpp"
#include "fpvit/vit.hpp"

using namespace fpvit;

namespace {

ModelConfig tiny_config(int num_classes) {
    ModelConfig c;
    c.patch_size = 4;
    c.image_side = 8;
    c.in_dim_per_token = 4 * 4 * 3;
    c.embed_width = 16;
    c.depth = 2;
    c.heads = 2;
    c.mlp_ratio = 2.0;
    c.embedding_dim = 8;
    c.num_classes = num_classes;
    c.seed = 3;
    return c;
}

// Class-clustered token vectors: a per-class center plus small noise.
std::vector<TrainSample> clustered_samples(const ModelConfig& c, int per_class,
                                           std::uint64_t seed) {
    Rng rng(seed);
    std::size_t dim = static_cast<std::size_t>(c.num_patches()) * c.in_dim_per_token;
    std::vector<std::vector<float>> centers(c.num_classes);
    for (auto& center : centers) {
        center.resize(dim);
        for (auto& v : center) v = static_cast<float>(rng.uniform());
    }
    std::vector<TrainSample> samples;
    for (int k = 0; k < c.num_classes; ++k) {
        for (int i = 0; i < per_class; ++i) {
            TrainSample s;
            s.label = k;
            s.tokens.resize(dim);
            for (std::size_t j = 0; j < dim; ++j)
                s.tokens[j] = centers[k][j] + static_cast<float>(rng.uniform(-0.05, 0.05));
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

double train_accuracy(const ModelParams& params, const std::vector<TrainSample>& samples) {
    int hits = 0;
    for (const TrainSample& s : samples) {
        auto out = forward(params, s.tokens, false);
        int argmax = 0;
        for (std::size_t k = 1; k < out.logits.size(); ++k)
            if (out.logits[k] > out.logits[argmax]) argmax = static_cast<int>(k);
        hits += argmax == s.label;
    }
    return static_cast<double>(hits) / samples.size();
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("learning rate schedule endpoints") {
    TrainSchedule s;
    s.peak_lr = 2e-3;
    s.warmup_steps = 10;
    const long total = 100;
    CHECK(lr_at_step(s, 0, total) == 0.0);
    CHECK(lr_at_step(s, 5, total) == doctest::Approx(1e-3));
    CHECK(lr_at_step(s, 10, total) == doctest::Approx(2e-3));
    CHECK(lr_at_step(s, 55, total) == doctest::Approx(1e-3).epsilon(1e-9));  // cosine midpoint
    CHECK(lr_at_step(s, 100, total) == doctest::Approx(0.0).epsilon(1e-12));
    for (long t = 11; t <= 100; ++t)
        CHECK(lr_at_step(s, t, total) <= lr_at_step(s, t - 1, total) + 1e-15);
}

TEST_CASE("two-identity toy run: monotone loss after warmup, 100% train accuracy") {
    ModelConfig c = tiny_config(2);
    auto samples = clustered_samples(c, 20, 5);

    TrainSchedule sched;
    sched.epochs = 8;
    sched.batch_size = 8;      // 5 batches per epoch
    sched.warmup_steps = 5;    // exactly the first epoch
    sched.peak_lr = 3e-3;
    sched.seed = 5;
    TrainResult result = train(c, samples, {}, sched);
    REQUIRE(!result.diverged);
    REQUIRE(result.log.size() == 8);

    // epochs 1..6 are past warmup; loss decreases monotonically
    for (int e = 1; e + 1 <= 6; ++e)
        CHECK(result.log[e + 1].mean_loss < result.log[e].mean_loss);
    CHECK(train_accuracy(result.params, samples) == 1.0);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
    ModelConfig c = tiny_config(3);
    auto samples = clustered_samples(c, 6, 6);
    TrainSchedule sched;
    sched.epochs = 3;
    sched.batch_size = 6;
    sched.warmup_steps = 4;
    sched.seed = 7;

    TrainResult a = train(c, samples, {}, sched);
    TrainResult b = train(c, samples, {}, sched);
    auto la = tensor_list(a.params), lb = tensor_list(b.params);
    for (std::size_t i = 0; i < la.size(); ++i)
        CHECK(std::memcmp(la[i].data->data(), lb[i].data->data(),
                          la[i].data->size() * sizeof(float)) == 0);
    for (std::size_t e = 0; e < a.log.size(); ++e)
        CHECK(a.log[e].mean_loss == b.log[e].mean_loss);

    // multi-thread accumulation is deterministic for a fixed thread count
    sched.threads = 2;
    TrainResult t2a = train(c, samples, {}, sched);
    TrainResult t2b = train(c, samples, {}, sched);
    auto l2a = tensor_list(t2a.params), l2b = tensor_list(t2b.params);
    for (std::size_t i = 0; i < l2a.size(); ++i)
        CHECK(std::memcmp(l2a[i].data->data(), l2b[i].data->data(),
                          l2a[i].data->size() * sizeof(float)) == 0);
}

TEST_CASE("divergence aborts with the last good parameters") {
    ModelConfig c = tiny_config(2);
    auto samples = clustered_samples(c, 4, 8);
    TrainSchedule sched;
    sched.epochs = 4;
    sched.batch_size = 4;
    sched.warmup_steps = 1;
    sched.peak_lr = 1e14;  // guaranteed blow-up
    TrainResult result = train(c, samples, {}, sched);
    CHECK(result.diverged);
    CHECK(!result.diagnostics.empty());
    for (auto& t : tensor_list(result.params))
        for (float v : *t.data) CHECK(std::isfinite(v));
}

TEST_CASE("warm start copies the encoder and re-initializes the classifier") {
    ModelConfig src_cfg = tiny_config(3);
    auto samples = clustered_samples(src_cfg, 4, 9);
    TrainSchedule sched;
    sched.epochs = 1;
    sched.batch_size = 4;
    sched.warmup_steps = 2;
    TrainResult source = train(src_cfg, samples, {}, sched);

    ModelConfig dst_cfg = tiny_config(4);  // different identity count
    TrainSchedule none = sched;
    none.epochs = 0;  // just materialize the warm-started parameters
    TrainResult warmed = train(dst_cfg, clustered_samples(dst_cfg, 2, 10), {}, none,
                               &source.params);
    CHECK(warmed.params.config.num_classes == 4);
    CHECK(warmed.params.patch_weight == source.params.patch_weight);
    CHECK(warmed.params.blocks[0].wq == source.params.blocks[0].wq);
    CHECK(warmed.params.cls_weight.size() == static_cast<std::size_t>(8 * 4));

    ModelConfig bad = dst_cfg;
    bad.embed_width = 32;
    CHECK_THROWS_AS(train(bad, clustered_samples(bad, 2, 11), {}, none, &source.params),
                    ConfigError);
}

TEST_CASE("validation rank-1 is logged when a validation set is given") {
    ModelConfig c = tiny_config(2);
    auto samples = clustered_samples(c, 8, 12);
    auto val = clustered_samples(c, 3, 13);
    TrainSchedule sched;
    sched.epochs = 2;
    sched.batch_size = 8;
    sched.warmup_steps = 2;
    TrainResult result = train(c, samples, val, sched);
    for (const EpochLog& e : result.log) {
        CHECK(e.val_rank1 >= 0.0);
        CHECK(e.val_rank1 <= 1.0);
    }
}

TEST_CASE("trained embedding consumes the map channels") {
    ModelConfig c = tiny_config(2);
    auto samples = clustered_samples(c, 10, 14);
    TrainSchedule sched;
    sched.epochs = 4;
    sched.batch_size = 8;
    sched.warmup_steps = 3;
    TrainResult result = train(c, samples, {}, sched);

    TokenSequence tokens;
    tokens.num_tokens = c.num_patches();
    tokens.token_dim = c.in_dim_per_token;
    tokens.patch_size = c.patch_size;
    tokens.image_side = c.image_side;
    tokens.map_channels = 2;
    tokens.data = samples[0].tokens;

    std::vector<float> with_map = extract_embedding(result.params, tokens);

    // zero the two map planes of every token
    int per_plane = c.patch_size * c.patch_size;
    for (int t = 0; t < tokens.num_tokens; ++t)
        for (int e = per_plane; e < tokens.token_dim; ++e) tokens.at(t, e) = 0.0f;
    std::vector<float> without_map = extract_embedding(result.params, tokens);

    double cos = 0.0;
    for (std::size_t i = 0; i < with_map.size(); ++i)
        cos += static_cast<double>(with_map[i]) * without_map[i];
    CHECK(cos < 1.0 - 1e-6);
}

}  // TEST_SUITE
