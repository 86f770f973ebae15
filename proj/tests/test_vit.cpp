#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fpvit/error.hpp"
#include "fpvit/rng.hpp"
#include "fpvit/vit.hpp"

using namespace fpvit;

namespace {

// patch 4, side 8, width 16: small enough that finite differences over
// every tensor run in seconds.
ModelConfig grad_config() {
    ModelConfig c;
    c.patch_size = 4;
    c.image_side = 8;
    c.in_dim_per_token = 4 * 4 * 3;
    c.embed_width = 16;
    c.depth = 2;
    c.heads = 2;
    c.mlp_ratio = 2.0;
    c.embedding_dim = 8;
    c.num_classes = 5;
    c.seed = 21;
    return c;
}

template <typename T>
std::vector<T> random_tokens(const ModelConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<T> tokens(static_cast<std::size_t>(c.num_patches()) * c.in_dim_per_token);
    for (auto& v : tokens) v = static_cast<T>(rng.uniform());
    return tokens;
}

double rel_err(double a, double b, double floor) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

// Central finite differences against the analytic gradient on
// coords_per_tensor sampled coordinates of every tensor. Returns the worst
// relative error (floor 1e-3 turns the comparison absolute below that
// scale).
double gradcheck_worst(const ModelConfig& config, int coords_per_tensor, std::uint64_t seed) {
    ModelParamsT<double> params = init_params<double>(config);
    std::vector<double> tokens = random_tokens<double>(config, seed);
    const int label = 3;
    LossResultT<double> analytic = loss_and_backward(params, tokens, label);

    const double h = 1e-4;
    double worst = 0.0;
    Rng pick(seed ^ 0xfade);
    auto refs = tensor_list(params);
    auto grefs = tensor_list(analytic.grads);
    for (std::size_t t = 0; t < refs.size(); ++t) {
        std::vector<double>& data = *refs[t].data;
        std::vector<double>& grad = *grefs[t].data;
        int samples = std::min<int>(coords_per_tensor, static_cast<int>(data.size()));
        for (int s = 0; s < samples; ++s) {
            std::size_t i = data.size() <= static_cast<std::size_t>(coords_per_tensor)
                                ? static_cast<std::size_t>(s)
                                : pick.uniform_index(data.size());
            double keep = data[i];
            data[i] = keep + h;
            double up = loss_only(params, tokens, label);
            data[i] = keep - h;
            double down = loss_only(params, tokens, label);
            data[i] = keep;
            double fd = (up - down) / (2.0 * h);
            worst = std::max(worst, rel_err(grad[i], fd, 1e-3));
        }
    }
    return worst;
}

}  // namespace

TEST_SUITE("vit") {

TEST_CASE("config validation") {
    ModelConfig c = grad_config();
    c.validate();
    c.heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = grad_config();
    c.image_side = 9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = grad_config();
    c.embedding_dim = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("init is deterministic and follows the stated rules") {
    ModelConfig c = grad_config();
    ModelParams a = init_params<float>(c);
    ModelParams b = init_params<float>(c);
    auto la = tensor_list(a), lb = tensor_list(b);
    for (std::size_t i = 0; i < la.size(); ++i) {
        CHECK(std::memcmp(la[i].data->data(), lb[i].data->data(),
                          la[i].data->size() * sizeof(float)) == 0);
        if (la[i].kind == TensorKind::norm_scale)
            for (float v : *la[i].data) CHECK(v == 1.0f);
        if (la[i].kind == TensorKind::bias || la[i].kind == TensorKind::norm_offset)
            for (float v : *la[i].data) CHECK(v == 0.0f);
        if (la[i].kind == TensorKind::weight)
            for (float v : *la[i].data) {
                CHECK(v != 0.0f);
                CHECK(std::fabs(v) <= 0.04f);  // truncated at 2 sigma
            }
    }
    c.seed = 99;
    ModelParams other = init_params<float>(c);
    CHECK(other.patch_weight != a.patch_weight);
}

TEST_CASE("closed-form parameter count matches enumeration") {
    // the spec's tiny preset
    ModelConfig c;
    c.patch_size = 8;
    c.image_side = 32;
    c.in_dim_per_token = 8 * 8 * 3;
    c.embed_width = 64;
    c.depth = 2;
    c.heads = 4;
    c.mlp_ratio = 4.0;
    c.embedding_dim = 32;
    c.num_classes = 10;
    ModelParams p = init_params<float>(c);
    std::size_t enumerated = 0;
    for (auto& t : tensor_list(p)) enumerated += t.data->size();
    CHECK(parameter_count(c) == enumerated);

    ModelConfig full = ModelConfig::full_scale(100, 2);
    ModelParams fp = init_params<float>(full);
    enumerated = 0;
    for (auto& t : tensor_list(fp)) enumerated += t.data->size();
    CHECK(parameter_count(full) == enumerated);
}

TEST_CASE("forward output sizes, including the 384-d full-scale head") {
    ModelConfig desk = ModelConfig::desk_scale(7, 2);
    ModelParams p = init_params<float>(desk);
    auto tokens = random_tokens<float>(desk, 1);
    ForwardResultT<float> out = forward(p, tokens, false);
    CHECK(out.embedding_raw.size() == 32);
    CHECK(out.logits.size() == 7);
    CHECK(out.cache == nullptr);

    ModelConfig full = ModelConfig::full_scale(12, 2);
    CHECK(full.num_patches() == 196);
    CHECK(full.in_dim_per_token == 768);
    ModelParams fp = init_params<float>(full);
    auto ft = random_tokens<float>(full, 2);
    ForwardResultT<float> fout = forward(fp, ft, false);
    CHECK(fout.embedding_raw.size() == 384);
}

TEST_CASE("attention rows are probability distributions") {
    ModelConfig c = grad_config();
    ModelParams p = init_params<float>(c);
    auto tokens = random_tokens<float>(c, 3);
    ForwardResultT<float> out = forward(p, tokens, true);
    REQUIRE(out.cache != nullptr);
    int s = c.seq_len();
    for (const auto& block : out.cache->blocks) {
        for (int head = 0; head < c.heads; ++head) {
            for (int i = 0; i < s; ++i) {
                double sum = 0.0;
                for (int j = 0; j < s; ++j) {
                    float v = block.attn_probs[(static_cast<std::size_t>(head) * s + i) * s + j];
                    CHECK(v >= 0.0f);
                    sum += v;
                }
                CHECK(std::fabs(sum - 1.0) <= 1e-6);
            }
        }
    }
}

TEST_CASE("layer norm outputs are standardized before affine") {
    ModelConfig c = grad_config();
    ModelParams p = init_params<float>(c);  // scales 1, offsets 0 at init
    auto tokens = random_tokens<float>(c, 4);
    ForwardResultT<float> out = forward(p, tokens, true);
    int s = c.seq_len(), d = c.embed_width;
    for (const auto& block : out.cache->blocks) {
        for (int r = 0; r < s; ++r) {
            double mean = 0.0, var = 0.0;
            for (int e = 0; e < d; ++e) mean += block.ln1_out[static_cast<std::size_t>(r) * d + e];
            mean /= d;
            for (int e = 0; e < d; ++e) {
                double v = block.ln1_out[static_cast<std::size_t>(r) * d + e] - mean;
                var += v * v;
            }
            var /= d;
            CHECK(std::fabs(mean) <= 1e-6);
            CHECK(std::fabs(var - 1.0) <= 1e-5);
        }
    }
}

TEST_CASE("zero positional embeddings make the class embedding permutation-invariant") {
    ModelConfig c = grad_config();
    ModelParams p = init_params<float>(c);
    std::fill(p.pos_embed.begin(), p.pos_embed.end(), 0.0f);

    auto tokens = random_tokens<float>(c, 5);
    int n = c.num_patches(), dim = c.in_dim_per_token;
    ForwardResultT<float> base = forward(p, tokens, false);

    Rng rng(6);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<float> shuffled(tokens.size());
    for (int i = 0; i < n; ++i)
        std::copy(tokens.begin() + perm[i] * dim, tokens.begin() + (perm[i] + 1) * dim,
                  shuffled.begin() + static_cast<std::size_t>(i) * dim);
    ForwardResultT<float> permuted = forward(p, shuffled, false);
    for (std::size_t e = 0; e < base.embedding_raw.size(); ++e)
        CHECK(std::fabs(base.embedding_raw[e] - permuted.embedding_raw[e]) <= 1e-5);
}

TEST_CASE("zeroed blocks reduce the encoder to final-norm of the projected stream") {
    ModelConfig c = grad_config();
    ModelParams p = init_params<float>(c);
    for (auto& t : tensor_list(p)) {
        if (t.name.rfind("block", 0) == 0 && t.kind != TensorKind::norm_scale)
            std::fill(t.data->begin(), t.data->end(), 0.0f);
    }
    auto tokens = random_tokens<float>(c, 7);
    ForwardResultT<float> out = forward(p, tokens, true);
    const auto& cache = *out.cache;
    int s = c.seq_len(), d = c.embed_width;
    for (int r = 0; r < s; ++r) {
        // reference layer norm of seq0 row r
        double mean = 0.0, var = 0.0;
        for (int e = 0; e < d; ++e) mean += cache.seq0[static_cast<std::size_t>(r) * d + e];
        mean /= d;
        for (int e = 0; e < d; ++e) {
            double v = cache.seq0[static_cast<std::size_t>(r) * d + e] - mean;
            var += v * v;
        }
        var /= d;
        double rstd = 1.0 / std::sqrt(var + 1e-10);
        for (int e = 0; e < d; ++e) {
            double want =
                (cache.seq0[static_cast<std::size_t>(r) * d + e] - mean) * rstd *
                    p.final_scale[e] +
                p.final_offset[e];
            CHECK(std::fabs(cache.final_out[static_cast<std::size_t>(r) * d + e] - want) <= 1e-5);
        }
    }
}

TEST_CASE("uniform logits give ln K loss") {
    ModelConfig c = grad_config();
    c.num_classes = 10;
    ModelParamsT<double> p = init_params<double>(c);
    std::fill(p.cls_weight.begin(), p.cls_weight.end(), 0.0);
    std::fill(p.cls_bias.begin(), p.cls_bias.end(), 0.0);
    auto tokens = random_tokens<double>(c, 8);
    double loss = loss_only(p, tokens, 4);
    CHECK(loss == doctest::Approx(2.302585093).epsilon(1e-9));
}

TEST_CASE("saturated classifier has zero bias gradient") {
    ModelConfig c = grad_config();
    ModelParamsT<double> p = init_params<double>(c);
    std::fill(p.cls_weight.begin(), p.cls_weight.end(), 0.0);
    std::fill(p.cls_bias.begin(), p.cls_bias.end(), -50.0);
    p.cls_bias[0] = 50.0;  // the always-predicted single class
    auto tokens = random_tokens<double>(c, 9);
    LossResultT<double> r = loss_and_backward(p, tokens, 0);
    double norm = 0.0;
    for (double g : r.grads.cls_bias) norm += g * g;
    CHECK(std::sqrt(norm) <= 1e-8);
}

TEST_CASE("analytic gradients match finite differences (sampled)") {
    // 12 coordinates per tensor here; the acceptance suite runs >= 200.
    CHECK(gradcheck_worst(grad_config(), 12, 31) <= 1e-5);
}

TEST_CASE("input gradients match finite differences") {
    ModelConfig c = grad_config();
    ModelParamsT<double> params = init_params<double>(c);
    std::vector<double> tokens = random_tokens<double>(c, 10);
    const double h = 1e-4;

    auto norm_of = [&](const std::vector<double>& t) {
        ForwardResultT<double> out = forward(params, t, false);
        double sq = 0.0;
        for (double v : out.embedding_raw) sq += v * v;
        return std::sqrt(sq);
    };
    std::vector<double> grad =
        input_gradient(params, tokens, SaliencyTarget::embedding_norm, -1);
    REQUIRE(grad.size() == tokens.size());
    Rng pick(11);
    for (int s = 0; s < 25; ++s) {
        std::size_t i = pick.uniform_index(tokens.size());
        double keep = tokens[i];
        tokens[i] = keep + h;
        double up = norm_of(tokens);
        tokens[i] = keep - h;
        double down = norm_of(tokens);
        tokens[i] = keep;
        CHECK(rel_err(grad[i], (up - down) / (2.0 * h), 1e-3) <= 1e-4);
    }

    auto logit_of = [&](const std::vector<double>& t) {
        return forward(params, t, false).logits[2];
    };
    grad = input_gradient(params, tokens, SaliencyTarget::class_logit, 2);
    for (int s = 0; s < 25; ++s) {
        std::size_t i = pick.uniform_index(tokens.size());
        double keep = tokens[i];
        tokens[i] = keep + h;
        double up = logit_of(tokens);
        tokens[i] = keep - h;
        double down = logit_of(tokens);
        tokens[i] = keep;
        CHECK(rel_err(grad[i], (up - down) / (2.0 * h), 1e-3) <= 1e-4);
    }
}

TEST_CASE("saliency map is max-normalized and zeroable") {
    ModelConfig c = grad_config();
    ModelParams p = init_params<float>(c);
    TokenSequence tokens;
    tokens.num_tokens = c.num_patches();
    tokens.token_dim = c.in_dim_per_token;
    tokens.patch_size = c.patch_size;
    tokens.image_side = c.image_side;
    tokens.map_channels = 2;
    tokens.data = random_tokens<float>(c, 12);

    Image map = saliency(p, tokens, SaliencyTarget::embedding_norm);
    CHECK(map.width == c.image_side);
    float mx = 0.0f;
    for (float v : map.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        mx = std::max(mx, v);
    }
    CHECK(mx == 1.0f);

    std::fill(p.embed_weight.begin(), p.embed_weight.end(), 0.0f);
    std::fill(p.embed_bias.begin(), p.embed_bias.end(), 0.0f);
    Image zero_map = saliency(p, tokens, SaliencyTarget::embedding_norm);
    for (float v : zero_map.pixels) CHECK(v == 0.0f);
}

TEST_CASE("extract_embedding contract") {
    ModelConfig c = grad_config();
    ModelParams p = init_params<float>(c);
    TokenSequence tokens;
    tokens.num_tokens = c.num_patches();
    tokens.token_dim = c.in_dim_per_token;
    tokens.patch_size = c.patch_size;
    tokens.image_side = c.image_side;
    tokens.map_channels = 2;
    tokens.data = random_tokens<float>(c, 13);

    std::vector<float> e1 = extract_embedding(p, tokens);
    std::vector<float> e2 = extract_embedding(p, tokens);
    CHECK(e1 == e2);
    double norm = 0.0;
    for (float v : e1) norm += static_cast<double>(v) * v;
    CHECK(std::fabs(std::sqrt(norm) - 1.0) <= 1e-5);

    std::fill(p.embed_weight.begin(), p.embed_weight.end(), 0.0f);
    std::fill(p.embed_bias.begin(), p.embed_bias.end(), 0.0f);
    CHECK_THROWS_AS(extract_embedding(p, tokens), NumericError);

    tokens.token_dim = 1;
    tokens.data.resize(tokens.num_tokens);
    CHECK_THROWS_AS(extract_embedding(init_params<float>(c), tokens), ShapeError);
}

TEST_CASE("checkpoint round trip reproduces forward bit for bit") {
    ModelConfig c = grad_config();
    ModelParams p = init_params<float>(c);
    PipelineInfo info;
    info.mode = "concat";
    info.map_channels = 2;
    info.map_sigma = 1.5;

    std::string path =
        (std::filesystem::temp_directory_path() / "fpvit_test_ckpt.fpvt").string();
    save_checkpoint(path, p, info);
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.pipeline.mode == "concat");
    CHECK(ck.pipeline.map_sigma == 1.5);
    CHECK(ck.pipeline.input_norm == kInputNormContract);

    auto tokens = random_tokens<float>(c, 14);
    ForwardResultT<float> a = forward(p, tokens, false);
    ForwardResultT<float> b = forward(ck.params, tokens, false);
    CHECK(std::memcmp(a.logits.data(), b.logits.data(), a.logits.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(a.embedding_raw.data(), b.embedding_raw.data(),
                      a.embedding_raw.size() * sizeof(float)) == 0);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects bad files") {
    std::string path =
        (std::filesystem::temp_directory_path() / "fpvit_test_badckpt.fpvt").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    ModelConfig c = grad_config();
    save_checkpoint(path, init_params<float>(c), PipelineInfo{});
    // truncate the tensor section
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

}  // TEST_SUITE
