#include "fpvit/vit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "fpvit/error.hpp"
#include "fpvit/kernels.hpp"
#include "fpvit/rng.hpp"

namespace fpvit {

namespace {

constexpr double kLnEps = 1e-10;

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2))) +
           x * T(inv_sqrt_2pi) * std::exp(x * x * T(-0.5));
}

// rows x dim, per-row softmax with max subtraction.
template <typename T>
void softmax_rows(T* data, int rows, int dim) {
    for (int r = 0; r < rows; ++r) {
        T* row = data + static_cast<std::size_t>(r) * dim;
        T mx = row[0];
        for (int d = 1; d < dim; ++d) mx = std::max(mx, row[d]);
        T sum = 0;
        for (int d = 0; d < dim; ++d) {
            row[d] = std::exp(row[d] - mx);
            sum += row[d];
        }
        T inv = T(1) / sum;
        for (int d = 0; d < dim; ++d) row[d] *= inv;
    }
}

template <typename T>
void layer_norm_forward(const T* x, int rows, int dim, const T* scale, const T* offset, T* out,
                        T* mean, T* rstd) {
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<std::size_t>(r) * dim;
        T* yr = out + static_cast<std::size_t>(r) * dim;
        T mu = 0;
        for (int d = 0; d < dim; ++d) mu += xr[d];
        mu /= T(dim);
        T var = 0;
        for (int d = 0; d < dim; ++d) var += (xr[d] - mu) * (xr[d] - mu);
        var /= T(dim);
        T rs = T(1) / std::sqrt(var + T(kLnEps));
        mean[r] = mu;
        rstd[r] = rs;
        for (int d = 0; d < dim; ++d) yr[d] = (xr[d] - mu) * rs * scale[d] + offset[d];
    }
}

// dx is written (not accumulated); d_scale/d_offset are accumulated.
template <typename T>
void layer_norm_backward(const T* x, const T* dy, int rows, int dim, const T* scale,
                         const T* mean, const T* rstd, T* dx, T* d_scale, T* d_offset) {
    std::vector<T> dxhat(dim);
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<std::size_t>(r) * dim;
        const T* dyr = dy + static_cast<std::size_t>(r) * dim;
        T* dxr = dx + static_cast<std::size_t>(r) * dim;
        T mu = mean[r], rs = rstd[r];
        T m1 = 0, m2 = 0;
        for (int d = 0; d < dim; ++d) {
            T xhat = (xr[d] - mu) * rs;
            d_scale[d] += dyr[d] * xhat;
            d_offset[d] += dyr[d];
            dxhat[d] = dyr[d] * scale[d];
            m1 += dxhat[d];
            m2 += dxhat[d] * xhat;
        }
        m1 /= T(dim);
        m2 /= T(dim);
        for (int d = 0; d < dim; ++d) {
            T xhat = (xr[d] - mu) * rs;
            dxr[d] = rs * (dxhat[d] - m1 - xhat * m2);
        }
    }
}

template <typename T>
void add_bias_rows(T* data, int rows, int dim, const T* bias) {
    for (int r = 0; r < rows; ++r) {
        T* row = data + static_cast<std::size_t>(r) * dim;
        for (int d = 0; d < dim; ++d) row[d] += bias[d];
    }
}

template <typename T>
void column_sums_into(const T* data, int rows, int dim, T* acc) {
    for (int r = 0; r < rows; ++r) {
        const T* row = data + static_cast<std::size_t>(r) * dim;
        for (int d = 0; d < dim; ++d) acc[d] += row[d];
    }
}

template <typename T>
void allocate_block(BlockParamsT<T>& b, const ModelConfig& c) {
    int d = c.embed_width, dm = c.mlp_dim();
    b.ln1_scale.assign(d, T(0));
    b.ln1_offset.assign(d, T(0));
    b.wq.assign(static_cast<std::size_t>(d) * d, T(0));
    b.wk.assign(static_cast<std::size_t>(d) * d, T(0));
    b.wv.assign(static_cast<std::size_t>(d) * d, T(0));
    b.wo.assign(static_cast<std::size_t>(d) * d, T(0));
    b.bq.assign(d, T(0));
    b.bk.assign(d, T(0));
    b.bv.assign(d, T(0));
    b.bo.assign(d, T(0));
    b.ln2_scale.assign(d, T(0));
    b.ln2_offset.assign(d, T(0));
    b.mlp_w1.assign(static_cast<std::size_t>(d) * dm, T(0));
    b.mlp_b1.assign(dm, T(0));
    b.mlp_w2.assign(static_cast<std::size_t>(dm) * d, T(0));
    b.mlp_b2.assign(d, T(0));
}

template <typename T>
ModelParamsT<T> allocate_params(const ModelConfig& c) {
    ModelParamsT<T> p;
    p.config = c;
    int d = c.embed_width;
    p.patch_weight.assign(static_cast<std::size_t>(c.in_dim_per_token) * d, T(0));
    p.patch_bias.assign(d, T(0));
    p.cls_token.assign(d, T(0));
    p.pos_embed.assign(static_cast<std::size_t>(c.seq_len()) * d, T(0));
    p.blocks.resize(c.depth);
    for (auto& b : p.blocks) allocate_block(b, c);
    p.final_scale.assign(d, T(0));
    p.final_offset.assign(d, T(0));
    p.embed_weight.assign(static_cast<std::size_t>(d) * c.embedding_dim, T(0));
    p.embed_bias.assign(c.embedding_dim, T(0));
    p.cls_weight.assign(static_cast<std::size_t>(c.embedding_dim) * c.num_classes, T(0));
    p.cls_bias.assign(c.num_classes, T(0));
    return p;
}

}  // namespace

void ModelConfig::validate() const {
    if (patch_size <= 0 || image_side <= 0) throw ConfigError("patch_size and image_side must be positive");
    if (image_side % patch_size != 0)
        throw ConfigError("image_side " + std::to_string(image_side) +
                          " not divisible by patch_size " + std::to_string(patch_size));
    if (in_dim_per_token <= 0) throw ConfigError("in_dim_per_token must be positive");
    if (embed_width <= 0 || depth <= 0 || heads <= 0) throw ConfigError("embed_width, depth, heads must be positive");
    if (embed_width % heads != 0)
        throw ConfigError("embed_width " + std::to_string(embed_width) +
                          " not divisible by heads " + std::to_string(heads));
    if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
    if (embedding_dim <= 0) throw ConfigError("embedding_dim must be positive");
    if (num_classes <= 0) throw ConfigError("num_classes must be positive");
}

ModelConfig ModelConfig::desk_scale(int num_classes, int map_channels, std::uint64_t seed) {
    ModelConfig c;
    c.patch_size = 8;
    c.image_side = 32;
    c.in_dim_per_token = 8 * 8 * (1 + map_channels);
    c.embed_width = 64;
    c.depth = 2;
    c.heads = 4;
    c.mlp_ratio = 4.0;
    c.embedding_dim = 32;
    c.num_classes = num_classes;
    c.seed = seed;
    return c;
}

ModelConfig ModelConfig::full_scale(int num_classes, int map_channels, std::uint64_t seed) {
    ModelConfig c;
    c.patch_size = 16;
    c.image_side = 224;
    c.in_dim_per_token = 16 * 16 * (1 + map_channels);
    c.embed_width = 384;
    c.depth = 12;
    c.heads = 6;
    c.mlp_ratio = 4.0;
    c.embedding_dim = 384;
    c.num_classes = num_classes;
    c.seed = seed;
    return c;
}

std::size_t parameter_count(const ModelConfig& c) {
    std::size_t d = c.embed_width, dm = c.mlp_dim(), e = c.embedding_dim;
    std::size_t per_block = 2 * d                       // ln1
                            + 4 * (d * d + d)           // q, k, v, o
                            + 2 * d                     // ln2
                            + d * dm + dm + dm * d + d; // mlp
    return static_cast<std::size_t>(c.in_dim_per_token) * d + d  // patch projection
           + d                                                   // class token
           + static_cast<std::size_t>(c.seq_len()) * d           // positional
           + static_cast<std::size_t>(c.depth) * per_block
           + 2 * d                                               // final norm
           + d * e + e                                           // embedding head
           + e * c.num_classes + c.num_classes;                  // classifier
}

template <typename T>
std::vector<TensorRef<T>> tensor_list(ModelParamsT<T>& p) {
    const ModelConfig& c = p.config;
    int d = c.embed_width, dm = c.mlp_dim();
    std::vector<TensorRef<T>> list;
    list.push_back({"patch_proj.w", TensorKind::weight, &p.patch_weight, {c.in_dim_per_token, d}});
    list.push_back({"patch_proj.b", TensorKind::bias, &p.patch_bias, {d}});
    list.push_back({"cls_token", TensorKind::embedding, &p.cls_token, {d}});
    list.push_back({"pos_embed", TensorKind::embedding, &p.pos_embed, {c.seq_len(), d}});
    for (int i = 0; i < c.depth; ++i) {
        BlockParamsT<T>& b = p.blocks[i];
        std::string prefix = "block" + std::to_string(i) + ".";
        list.push_back({prefix + "ln1.scale", TensorKind::norm_scale, &b.ln1_scale, {d}});
        list.push_back({prefix + "ln1.offset", TensorKind::norm_offset, &b.ln1_offset, {d}});
        list.push_back({prefix + "attn.wq", TensorKind::weight, &b.wq, {d, d}});
        list.push_back({prefix + "attn.bq", TensorKind::bias, &b.bq, {d}});
        list.push_back({prefix + "attn.wk", TensorKind::weight, &b.wk, {d, d}});
        list.push_back({prefix + "attn.bk", TensorKind::bias, &b.bk, {d}});
        list.push_back({prefix + "attn.wv", TensorKind::weight, &b.wv, {d, d}});
        list.push_back({prefix + "attn.bv", TensorKind::bias, &b.bv, {d}});
        list.push_back({prefix + "attn.wo", TensorKind::weight, &b.wo, {d, d}});
        list.push_back({prefix + "attn.bo", TensorKind::bias, &b.bo, {d}});
        list.push_back({prefix + "ln2.scale", TensorKind::norm_scale, &b.ln2_scale, {d}});
        list.push_back({prefix + "ln2.offset", TensorKind::norm_offset, &b.ln2_offset, {d}});
        list.push_back({prefix + "mlp.w1", TensorKind::weight, &b.mlp_w1, {d, dm}});
        list.push_back({prefix + "mlp.b1", TensorKind::bias, &b.mlp_b1, {dm}});
        list.push_back({prefix + "mlp.w2", TensorKind::weight, &b.mlp_w2, {dm, d}});
        list.push_back({prefix + "mlp.b2", TensorKind::bias, &b.mlp_b2, {d}});
    }
    list.push_back({"final_ln.scale", TensorKind::norm_scale, &p.final_scale, {d}});
    list.push_back({"final_ln.offset", TensorKind::norm_offset, &p.final_offset, {d}});
    list.push_back({"embed_head.w", TensorKind::weight, &p.embed_weight, {d, c.embedding_dim}});
    list.push_back({"embed_head.b", TensorKind::bias, &p.embed_bias, {c.embedding_dim}});
    list.push_back({"classifier.w", TensorKind::weight, &p.cls_weight, {c.embedding_dim, c.num_classes}});
    list.push_back({"classifier.b", TensorKind::bias, &p.cls_bias, {c.num_classes}});
    return list;
}

template <typename T>
ModelParamsT<T> init_params(const ModelConfig& config) {
    config.validate();
    ModelParamsT<T> p = allocate_params<T>(config);
    Rng rng(config.seed);
    for (TensorRef<T>& t : tensor_list(p)) {
        switch (t.kind) {
            case TensorKind::weight:
            case TensorKind::embedding:
                for (T& v : *t.data) v = static_cast<T>(rng.truncated_normal(0.02));
                break;
            case TensorKind::norm_scale:
                std::fill(t.data->begin(), t.data->end(), T(1));
                break;
            case TensorKind::bias:
            case TensorKind::norm_offset:
                break;  // already zero
        }
    }
    return p;
}

template <typename T>
ModelParamsT<T> zeros_like(const ModelParamsT<T>& params) {
    return allocate_params<T>(params.config);
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename T>
ForwardResultT<T> forward(const ModelParamsT<T>& params, const std::vector<T>& tokens,
                          bool keep_cache) {
    const ModelConfig& c = params.config;
    int n = c.num_patches(), s = c.seq_len(), d = c.embed_width;
    int h = c.heads, dh = c.head_dim(), dm = c.mlp_dim();
    if (tokens.size() != static_cast<std::size_t>(n) * c.in_dim_per_token)
        throw ShapeError("token buffer has " + std::to_string(tokens.size()) +
                         " elements, expected " + std::to_string(n) + " x " +
                         std::to_string(c.in_dim_per_token));

    auto cache = std::make_shared<ForwardCacheT<T>>();
    cache->tokens = tokens;

    // Projection, class token, positional embeddings.
    std::vector<T>& seq0 = cache->seq0;
    seq0.assign(static_cast<std::size_t>(s) * d, T(0));
    kernels::gemm(tokens.data(), params.patch_weight.data(), seq0.data() + d, n,
                  c.in_dim_per_token, d, false);
    add_bias_rows(seq0.data() + d, n, d, params.patch_bias.data());
    std::copy(params.cls_token.begin(), params.cls_token.end(), seq0.begin());
    for (std::size_t i = 0; i < seq0.size(); ++i) seq0[i] += params.pos_embed[i];

    std::vector<T> x = seq0;
    cache->blocks.resize(c.depth);
    T alpha = T(1) / std::sqrt(T(dh));

    for (int bi = 0; bi < c.depth; ++bi) {
        const BlockParamsT<T>& bp = params.blocks[bi];
        BlockCacheT<T>& bc = cache->blocks[bi];
        bc.x_in = x;

        bc.ln1_mean.resize(s);
        bc.ln1_rstd.resize(s);
        bc.ln1_out.resize(x.size());
        layer_norm_forward(x.data(), s, d, bp.ln1_scale.data(), bp.ln1_offset.data(),
                           bc.ln1_out.data(), bc.ln1_mean.data(), bc.ln1_rstd.data());

        bc.q.resize(x.size());
        bc.k.resize(x.size());
        bc.v.resize(x.size());
        kernels::gemm(bc.ln1_out.data(), bp.wq.data(), bc.q.data(), s, d, d, false);
        kernels::gemm(bc.ln1_out.data(), bp.wk.data(), bc.k.data(), s, d, d, false);
        kernels::gemm(bc.ln1_out.data(), bp.wv.data(), bc.v.data(), s, d, d, false);
        add_bias_rows(bc.q.data(), s, d, bp.bq.data());
        add_bias_rows(bc.k.data(), s, d, bp.bk.data());
        add_bias_rows(bc.v.data(), s, d, bp.bv.data());

        bc.attn_probs.assign(static_cast<std::size_t>(h) * s * s, T(0));
        bc.ctx.assign(x.size(), T(0));
        for (int head = 0; head < h; ++head) {
            T* probs = bc.attn_probs.data() + static_cast<std::size_t>(head) * s * s;
            int off = head * dh;
            for (int i = 0; i < s; ++i) {
                const T* qi = bc.q.data() + static_cast<std::size_t>(i) * d + off;
                for (int j = 0; j < s; ++j) {
                    const T* kj = bc.k.data() + static_cast<std::size_t>(j) * d + off;
                    T acc = 0;
                    for (int e = 0; e < dh; ++e) acc += qi[e] * kj[e];
                    probs[i * s + j] = acc * alpha;
                }
            }
            softmax_rows(probs, s, s);
            for (int i = 0; i < s; ++i) {
                T* ci = bc.ctx.data() + static_cast<std::size_t>(i) * d + off;
                for (int j = 0; j < s; ++j) {
                    const T* vj = bc.v.data() + static_cast<std::size_t>(j) * d + off;
                    T p = probs[i * s + j];
                    for (int e = 0; e < dh; ++e) ci[e] += p * vj[e];
                }
            }
        }

        bc.x_mid.resize(x.size());
        kernels::gemm(bc.ctx.data(), bp.wo.data(), bc.x_mid.data(), s, d, d, false);
        add_bias_rows(bc.x_mid.data(), s, d, bp.bo.data());
        for (std::size_t i = 0; i < x.size(); ++i) bc.x_mid[i] += x[i];

        bc.ln2_mean.resize(s);
        bc.ln2_rstd.resize(s);
        bc.ln2_out.resize(x.size());
        layer_norm_forward(bc.x_mid.data(), s, d, bp.ln2_scale.data(), bp.ln2_offset.data(),
                           bc.ln2_out.data(), bc.ln2_mean.data(), bc.ln2_rstd.data());

        bc.mlp_pre.assign(static_cast<std::size_t>(s) * dm, T(0));
        kernels::gemm(bc.ln2_out.data(), bp.mlp_w1.data(), bc.mlp_pre.data(), s, d, dm, false);
        add_bias_rows(bc.mlp_pre.data(), s, dm, bp.mlp_b1.data());
        bc.mlp_act.resize(bc.mlp_pre.size());
        for (std::size_t i = 0; i < bc.mlp_pre.size(); ++i) bc.mlp_act[i] = gelu(bc.mlp_pre[i]);

        kernels::gemm(bc.mlp_act.data(), bp.mlp_w2.data(), x.data(), s, dm, d, false);
        add_bias_rows(x.data(), s, d, bp.mlp_b2.data());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += bc.x_mid[i];
    }

    cache->final_in = x;
    cache->final_mean.resize(s);
    cache->final_rstd.resize(s);
    cache->final_out.resize(x.size());
    layer_norm_forward(x.data(), s, d, params.final_scale.data(), params.final_offset.data(),
                       cache->final_out.data(), cache->final_mean.data(),
                       cache->final_rstd.data());

    ForwardResultT<T> out;
    out.embedding_raw.assign(c.embedding_dim, T(0));
    kernels::gemm(cache->final_out.data(), params.embed_weight.data(), out.embedding_raw.data(),
                  1, d, c.embedding_dim, false);
    for (int e = 0; e < c.embedding_dim; ++e) out.embedding_raw[e] += params.embed_bias[e];

    out.logits.assign(c.num_classes, T(0));
    kernels::gemm(out.embedding_raw.data(), params.cls_weight.data(), out.logits.data(), 1,
                  c.embedding_dim, c.num_classes, false);
    for (int k = 0; k < c.num_classes; ++k) out.logits[k] += params.cls_bias[k];

    if (keep_cache) out.cache = std::move(cache);
    return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> backward(const ModelParamsT<T>& params, const ForwardCacheT<T>& cache,
                        const std::vector<T>& embedding_raw, const BackwardSeedT<T>& seed,
                        ModelParamsT<T>& grads) {
    const ModelConfig& c = params.config;
    int n = c.num_patches(), s = c.seq_len(), d = c.embed_width;
    int h = c.heads, dh = c.head_dim(), dm = c.mlp_dim();
    T alpha = T(1) / std::sqrt(T(dh));

    // Output heads.
    std::vector<T> d_emb(c.embedding_dim, T(0));
    if (!seed.d_embedding_raw.empty()) d_emb = seed.d_embedding_raw;
    if (!seed.d_logits.empty()) {
        const std::vector<T>& dl = seed.d_logits;
        kernels::gemm_at_b(embedding_raw.data(), dl.data(), grads.cls_weight.data(), 1,
                           c.embedding_dim, c.num_classes, true);
        for (int k = 0; k < c.num_classes; ++k) grads.cls_bias[k] += dl[k];
        kernels::gemm_a_bt(dl.data(), params.cls_weight.data(), d_emb.data(), 1, c.num_classes,
                           c.embedding_dim, true);
    }

    const T* s_cls = cache.final_out.data();  // row 0
    kernels::gemm_at_b(s_cls, d_emb.data(), grads.embed_weight.data(), 1, d, c.embedding_dim,
                       true);
    for (int e = 0; e < c.embedding_dim; ++e) grads.embed_bias[e] += d_emb[e];

    std::vector<T> d_final_out(static_cast<std::size_t>(s) * d, T(0));
    kernels::gemm_a_bt(d_emb.data(), params.embed_weight.data(), d_final_out.data(), 1,
                       c.embedding_dim, d, true);  // writes row 0 only

    std::vector<T> dx(static_cast<std::size_t>(s) * d, T(0));
    layer_norm_backward(cache.final_in.data(), d_final_out.data(), s, d,
                        params.final_scale.data(), cache.final_mean.data(),
                        cache.final_rstd.data(), dx.data(), grads.final_scale.data(),
                        grads.final_offset.data());

    // Encoder blocks in reverse.
    std::vector<T> d_ln(static_cast<std::size_t>(s) * d);
    std::vector<T> d_tmp(static_cast<std::size_t>(s) * d);
    std::vector<T> d_pre(static_cast<std::size_t>(s) * dm);
    std::vector<T> d_q(static_cast<std::size_t>(s) * d);
    std::vector<T> d_k(static_cast<std::size_t>(s) * d);
    std::vector<T> d_v(static_cast<std::size_t>(s) * d);
    std::vector<T> d_ctx(static_cast<std::size_t>(s) * d);
    std::vector<T> dp(static_cast<std::size_t>(s) * s);
    std::vector<T> ds(static_cast<std::size_t>(s) * s);

    for (int bi = c.depth - 1; bi >= 0; --bi) {
        const BlockParamsT<T>& bp = params.blocks[bi];
        BlockParamsT<T>& bg = grads.blocks[bi];
        const BlockCacheT<T>& bc = cache.blocks[bi];

        // MLP path; dx is d(block output).
        kernels::gemm_at_b(bc.mlp_act.data(), dx.data(), bg.mlp_w2.data(), s, dm, d, true);
        column_sums_into(dx.data(), s, d, bg.mlp_b2.data());
        kernels::gemm_a_bt(dx.data(), bp.mlp_w2.data(), d_pre.data(), s, d, dm, false);
        for (std::size_t i = 0; i < d_pre.size(); ++i) d_pre[i] *= gelu_grad(bc.mlp_pre[i]);
        kernels::gemm_at_b(bc.ln2_out.data(), d_pre.data(), bg.mlp_w1.data(), s, d, dm, true);
        column_sums_into(d_pre.data(), s, dm, bg.mlp_b1.data());
        kernels::gemm_a_bt(d_pre.data(), bp.mlp_w1.data(), d_ln.data(), s, dm, d, false);

        // d(x_mid) = residual dx + LN2 backward of the MLP branch.
        layer_norm_backward(bc.x_mid.data(), d_ln.data(), s, d, bp.ln2_scale.data(),
                            bc.ln2_mean.data(), bc.ln2_rstd.data(), d_tmp.data(),
                            bg.ln2_scale.data(), bg.ln2_offset.data());
        std::vector<T>& d_x_mid = dx;  // reuse: d_x_mid = dx + d_tmp
        for (std::size_t i = 0; i < dx.size(); ++i) d_x_mid[i] += d_tmp[i];

        // Attention output projection.
        kernels::gemm_at_b(bc.ctx.data(), d_x_mid.data(), bg.wo.data(), s, d, d, true);
        column_sums_into(d_x_mid.data(), s, d, bg.bo.data());
        kernels::gemm_a_bt(d_x_mid.data(), bp.wo.data(), d_ctx.data(), s, d, d, false);

        std::fill(d_q.begin(), d_q.end(), T(0));
        std::fill(d_k.begin(), d_k.end(), T(0));
        std::fill(d_v.begin(), d_v.end(), T(0));
        for (int head = 0; head < h; ++head) {
            const T* probs = bc.attn_probs.data() + static_cast<std::size_t>(head) * s * s;
            int off = head * dh;
            for (int i = 0; i < s; ++i) {
                const T* dci = d_ctx.data() + static_cast<std::size_t>(i) * d + off;
                for (int j = 0; j < s; ++j) {
                    const T* vj = bc.v.data() + static_cast<std::size_t>(j) * d + off;
                    T* dvj = d_v.data() + static_cast<std::size_t>(j) * d + off;
                    T acc = 0;
                    T p = probs[i * s + j];
                    for (int e = 0; e < dh; ++e) {
                        acc += dci[e] * vj[e];
                        dvj[e] += p * dci[e];
                    }
                    dp[i * s + j] = acc;
                }
                // softmax row backward
                T inner = 0;
                for (int j = 0; j < s; ++j) inner += dp[i * s + j] * probs[i * s + j];
                for (int j = 0; j < s; ++j)
                    ds[i * s + j] = probs[i * s + j] * (dp[i * s + j] - inner);
            }
            for (int i = 0; i < s; ++i) {
                const T* qi = bc.q.data() + static_cast<std::size_t>(i) * d + off;
                T* dqi = d_q.data() + static_cast<std::size_t>(i) * d + off;
                for (int j = 0; j < s; ++j) {
                    const T* kj = bc.k.data() + static_cast<std::size_t>(j) * d + off;
                    T* dkj = d_k.data() + static_cast<std::size_t>(j) * d + off;
                    T g = ds[i * s + j] * alpha;
                    for (int e = 0; e < dh; ++e) {
                        dqi[e] += g * kj[e];
                        dkj[e] += g * qi[e];
                    }
                }
            }
        }

        kernels::gemm_at_b(bc.ln1_out.data(), d_q.data(), bg.wq.data(), s, d, d, true);
        column_sums_into(d_q.data(), s, d, bg.bq.data());
        kernels::gemm_at_b(bc.ln1_out.data(), d_k.data(), bg.wk.data(), s, d, d, true);
        column_sums_into(d_k.data(), s, d, bg.bk.data());
        kernels::gemm_at_b(bc.ln1_out.data(), d_v.data(), bg.wv.data(), s, d, d, true);
        column_sums_into(d_v.data(), s, d, bg.bv.data());

        kernels::gemm_a_bt(d_q.data(), bp.wq.data(), d_ln.data(), s, d, d, false);
        kernels::gemm_a_bt(d_k.data(), bp.wk.data(), d_ln.data(), s, d, d, true);
        kernels::gemm_a_bt(d_v.data(), bp.wv.data(), d_ln.data(), s, d, d, true);

        layer_norm_backward(bc.x_in.data(), d_ln.data(), s, d, bp.ln1_scale.data(),
                            bc.ln1_mean.data(), bc.ln1_rstd.data(), d_tmp.data(),
                            bg.ln1_scale.data(), bg.ln1_offset.data());
        // d(block input) = d_x_mid (residual) + LN1 branch.
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d_tmp[i];
    }

    // Projection and embeddings. dx now holds d(seq0).
    for (std::size_t i = 0; i < dx.size(); ++i) grads.pos_embed[i] += dx[i];
    for (int e = 0; e < d; ++e) grads.cls_token[e] += dx[e];

    const T* d_proj = dx.data() + d;  // rows 1..N
    kernels::gemm_at_b(cache.tokens.data(), d_proj, grads.patch_weight.data(), n,
                       c.in_dim_per_token, d, true);
    column_sums_into(d_proj, n, d, grads.patch_bias.data());

    std::vector<T> d_tokens(static_cast<std::size_t>(n) * c.in_dim_per_token, T(0));
    kernels::gemm_a_bt(d_proj, params.patch_weight.data(), d_tokens.data(), n, d,
                       c.in_dim_per_token, false);
    return d_tokens;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T cross_entropy(const std::vector<T>& logits, int label, std::vector<T>* d_logits) {
    int k = static_cast<int>(logits.size());
    T mx = logits[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    T sum = 0;
    for (int i = 0; i < k; ++i) sum += std::exp(logits[i] - mx);
    T loss = std::log(sum) - (logits[label] - mx);
    if (d_logits) {
        d_logits->resize(k);
        T inv = T(1) / sum;
        for (int i = 0; i < k; ++i) (*d_logits)[i] = std::exp(logits[i] - mx) * inv;
        (*d_logits)[label] -= T(1);
    }
    return loss;
}

}  // namespace

template <typename T>
T loss_only(const ModelParamsT<T>& params, const std::vector<T>& tokens, int label) {
    if (label < 0 || label >= params.config.num_classes)
        throw ValidationError("label " + std::to_string(label) + " out of range");
    ForwardResultT<T> out = forward(params, tokens, false);
    return cross_entropy<T>(out.logits, label, nullptr);
}

template <typename T>
LossResultT<T> loss_and_backward(const ModelParamsT<T>& params, const std::vector<T>& tokens,
                                 int label) {
    if (label < 0 || label >= params.config.num_classes)
        throw ValidationError("label " + std::to_string(label) + " out of range");
    ForwardResultT<T> out = forward(params, tokens, true);
    BackwardSeedT<T> seed;
    T loss = cross_entropy<T>(out.logits, label, &seed.d_logits);
    if (!std::isfinite(static_cast<double>(loss)))
        throw TrainingError("non-finite loss (label " + std::to_string(label) + ", logit[0] " +
                            std::to_string(static_cast<double>(out.logits[0])) + ")");
    LossResultT<T> result{loss, zeros_like(params)};
    backward(params, *out.cache, out.embedding_raw, seed, result.grads);
    return result;
}

std::vector<float> extract_embedding(const ModelParams& params, const TokenSequence& tokens) {
    if (tokens.token_dim != params.config.in_dim_per_token)
        throw ShapeError("token dim " + std::to_string(tokens.token_dim) +
                         " does not match model input dim " +
                         std::to_string(params.config.in_dim_per_token));
    ForwardResultT<float> out = forward(params, tokens.data, false);
    double norm_sq = 0.0;
    for (float v : out.embedding_raw) norm_sq += static_cast<double>(v) * v;
    double norm = std::sqrt(norm_sq);
    if (norm < 1e-12) throw NumericError("zero-norm raw embedding");
    float inv = static_cast<float>(1.0 / norm);
    for (float& v : out.embedding_raw) v *= inv;
    return out.embedding_raw;
}

template <typename T>
std::vector<T> input_gradient(const ModelParamsT<T>& params, const std::vector<T>& tokens,
                              SaliencyTarget target, int class_index) {
    ForwardResultT<T> out = forward(params, tokens, true);
    BackwardSeedT<T> seed;
    if (target == SaliencyTarget::embedding_norm) {
        double norm_sq = 0.0;
        for (T v : out.embedding_raw) norm_sq += static_cast<double>(v) * v;
        double norm = std::sqrt(norm_sq);
        if (norm < 1e-12)
            return std::vector<T>(tokens.size(), T(0));
        seed.d_embedding_raw.resize(out.embedding_raw.size());
        for (std::size_t i = 0; i < out.embedding_raw.size(); ++i)
            seed.d_embedding_raw[i] = out.embedding_raw[i] / T(norm);
    } else {
        if (class_index < 0 || class_index >= params.config.num_classes)
            throw ValidationError("saliency class index " + std::to_string(class_index) +
                                  " out of range");
        seed.d_logits.assign(params.config.num_classes, T(0));
        seed.d_logits[class_index] = T(1);
    }
    ModelParamsT<T> scratch = zeros_like(params);
    return backward(params, *out.cache, out.embedding_raw, seed, scratch);
}

Image saliency(const ModelParams& params, const TokenSequence& tokens, SaliencyTarget target,
               int class_index) {
    std::vector<float> grad = input_gradient(params, tokens.data, target, class_index);
    TokenSequence grad_tokens = tokens;
    grad_tokens.data = std::move(grad);
    for (float& v : grad_tokens.data) v = std::fabs(v);
    Image map = detokenize_plane(grad_tokens, -1);
    float mx = 0.0f;
    for (float v : map.pixels) mx = std::max(mx, v);
    if (mx > 0.0f) {
        float inv = 1.0f / mx;
        for (float& v : map.pixels) v *= inv;
    }
    return map;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

double lr_at_step(const TrainSchedule& schedule, long step, long total_steps) {
    if (schedule.warmup_steps > 0 && step < schedule.warmup_steps)
        return schedule.peak_lr * static_cast<double>(step) / schedule.warmup_steps;
    long decay_steps = std::max(1L, total_steps - schedule.warmup_steps);
    long into = std::min(step - schedule.warmup_steps, decay_steps);
    return schedule.peak_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(into) / decay_steps));
}

namespace {

double leave_one_out_rank1(const ModelParams& params, const std::vector<TrainSample>& val_set) {
    if (val_set.size() < 2) return -1.0;
    int n = static_cast<int>(val_set.size());
    int e = params.config.embedding_dim;
    std::vector<float> embs(static_cast<std::size_t>(n) * e);
    for (int i = 0; i < n; ++i) {
        ForwardResultT<float> out = forward(params, val_set[i].tokens, false);
        double norm = 0.0;
        for (float v : out.embedding_raw) norm += static_cast<double>(v) * v;
        norm = std::sqrt(std::max(norm, 1e-24));
        for (int j = 0; j < e; ++j)
            embs[static_cast<std::size_t>(i) * e + j] =
                static_cast<float>(out.embedding_raw[j] / norm);
    }
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        int best = -1;
        float best_score = -2.0f;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            float sc = kernels::dot(embs.data() + static_cast<std::size_t>(i) * e,
                                    embs.data() + static_cast<std::size_t>(j) * e, e);
            if (sc > best_score) {
                best_score = sc;
                best = j;
            }
        }
        if (best >= 0 && val_set[best].label == val_set[i].label) ++hits;
    }
    return static_cast<double>(hits) / n;
}

}  // namespace

TrainResult train(const ModelConfig& config, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainSchedule& schedule,
                  const ModelParams* init_from) {
    config.validate();
    if (config.num_classes < 2) throw ConfigError("training needs num_classes >= 2");
    if (train_set.empty()) throw ValidationError("empty training set");
    for (std::size_t i = 0; i < train_set.size(); ++i)
        if (train_set[i].label < 0 || train_set[i].label >= config.num_classes)
            throw ValidationError("training sample " + std::to_string(i) + " has label " +
                                  std::to_string(train_set[i].label) + " outside [0, " +
                                  std::to_string(config.num_classes) + ")");

    ModelParams params;
    if (init_from) {
        const ModelConfig& o = init_from->config;
        bool same_arch = o.patch_size == config.patch_size && o.image_side == config.image_side &&
                         o.in_dim_per_token == config.in_dim_per_token &&
                         o.embed_width == config.embed_width && o.depth == config.depth &&
                         o.heads == config.heads && o.mlp_ratio == config.mlp_ratio &&
                         o.embedding_dim == config.embedding_dim;
        if (!same_arch)
            throw ConfigError("warm-start checkpoint architecture does not match the run config");
        params = init_params<float>(config);
        // Copy the encoder; the classifier is re-initialized when the class
        // count changed (pretrain on one identity set, fine-tune on another).
        ModelParams source = *init_from;
        auto dst = tensor_list(params);
        auto src = tensor_list(source);
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (dst[i].name.rfind("classifier.", 0) == 0 && o.num_classes != config.num_classes)
                continue;
            *dst[i].data = *src[i].data;
        }
    } else {
        params = init_params<float>(config);
    }

    int batch = std::max(1, schedule.batch_size);
    long batches_per_epoch = (static_cast<long>(train_set.size()) + batch - 1) / batch;
    long total_steps = batches_per_epoch * schedule.epochs;

    ModelParams moment1 = zeros_like(params);
    ModelParams moment2 = zeros_like(params);
    auto p_list = tensor_list(params);
    auto m_list = tensor_list(moment1);
    auto v_list = tensor_list(moment2);

    int threads = std::max(1, schedule.threads);
    std::vector<ModelParams> grad_bufs;
    for (int t = 0; t < threads; ++t) grad_bufs.push_back(zeros_like(params));
    std::vector<std::vector<TensorRef<float>>> g_lists;
    for (auto& g : grad_bufs) g_lists.push_back(tensor_list(g));

    Rng rng(schedule.seed);
    std::vector<int> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainResult result;
    ModelParams last_good = params;
    long step = 0;

    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_samples = 0;

        for (long b = 0; b < batches_per_epoch; ++b) {
            std::size_t begin = static_cast<std::size_t>(b) * batch;
            std::size_t end = std::min(begin + batch, train_set.size());
            int bs = static_cast<int>(end - begin);

            for (auto& gl : g_lists)
                for (auto& t : gl) std::fill(t.data->begin(), t.data->end(), 0.0f);

            std::vector<double> losses(threads, 0.0);
            std::vector<std::string> failures(threads);
            auto worker = [&](int tid, std::size_t lo, std::size_t hi) {
                try {
                    for (std::size_t i = lo; i < hi; ++i) {
                        const TrainSample& sample = train_set[order[i]];
                        ForwardResultT<float> out = forward(params, sample.tokens, true);
                        BackwardSeedT<float> seed;
                        float loss = cross_entropy<float>(out.logits, sample.label, &seed.d_logits);
                        if (!std::isfinite(loss)) {
                            failures[tid] = "non-finite loss at epoch " + std::to_string(epoch) +
                                            " step " + std::to_string(step) + " sample " +
                                            std::to_string(order[i]);
                            return;
                        }
                        losses[tid] += loss;
                        backward(params, *out.cache, out.embedding_raw, seed, grad_bufs[tid]);
                    }
                } catch (const std::exception& e) {
                    failures[tid] = e.what();
                }
            };

            if (threads == 1) {
                worker(0, begin, end);
            } else {
                std::vector<std::thread> pool;
                std::size_t chunk = (static_cast<std::size_t>(bs) + threads - 1) / threads;
                for (int t = 0; t < threads; ++t) {
                    std::size_t lo = begin + static_cast<std::size_t>(t) * chunk;
                    std::size_t hi = std::min(lo + chunk, end);
                    if (lo >= hi) break;
                    pool.emplace_back(worker, t, lo, hi);
                }
                for (auto& th : pool) th.join();
            }

            for (int t = 0; t < threads; ++t) {
                if (!failures[t].empty()) {
                    result.params = last_good;
                    result.diverged = true;
                    result.diagnostics = failures[t];
                    return result;
                }
            }

            // Ordered reduction: thread 0 buffer accumulates the rest in
            // thread-index order, so results depend only on the thread count.
            for (int t = 1; t < threads; ++t)
                for (std::size_t ti = 0; ti < g_lists[0].size(); ++ti)
                    kernels::axpy(1.0f, g_lists[t][ti].data->data(),
                                  g_lists[0][ti].data->data(), g_lists[0][ti].data->size());

            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            epoch_loss += batch_loss;
            epoch_samples += bs;

            ++step;
            double lr = lr_at_step(schedule, step - 1, total_steps);
            double bc1 = 1.0 - std::pow(schedule.beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(schedule.beta2, static_cast<double>(step));
            float inv_bs = 1.0f / static_cast<float>(bs);

            for (std::size_t ti = 0; ti < p_list.size(); ++ti) {
                std::vector<float>& p = *p_list[ti].data;
                std::vector<float>& g = *g_lists[0][ti].data;
                std::vector<float>& m = *m_list[ti].data;
                std::vector<float>& v = *v_list[ti].data;
                bool decay = p_list[ti].kind == TensorKind::weight;
                for (std::size_t i = 0; i < p.size(); ++i) {
                    double gi = static_cast<double>(g[i]) * inv_bs;
                    double mi = schedule.beta1 * m[i] + (1.0 - schedule.beta1) * gi;
                    double vi = schedule.beta2 * v[i] + (1.0 - schedule.beta2) * gi * gi;
                    m[i] = static_cast<float>(mi);
                    v[i] = static_cast<float>(vi);
                    double update = (mi / bc1) / (std::sqrt(vi / bc2) + schedule.adam_eps);
                    if (decay) update += schedule.weight_decay * p[i];
                    p[i] = static_cast<float>(p[i] - lr * update);
                }
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.mean_loss = epoch_loss / std::max(1L, epoch_samples);
        log.val_rank1 = leave_one_out_rank1(params, val_set);
        result.log.push_back(log);
        last_good = params;
    }

    result.params = std::move(params);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'P', 'V', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const std::string& path) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw FormatError("truncated checkpoint: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const PipelineInfo& pipeline) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);

    const ModelConfig& c = params.config;
    nlohmann::json header;
    header["config"] = {{"patch_size", c.patch_size},
                        {"image_side", c.image_side},
                        {"in_dim_per_token", c.in_dim_per_token},
                        {"embed_width", c.embed_width},
                        {"depth", c.depth},
                        {"heads", c.heads},
                        {"mlp_ratio", c.mlp_ratio},
                        {"embedding_dim", c.embedding_dim},
                        {"num_classes", c.num_classes},
                        {"seed", c.seed}};
    header["pipeline"] = {{"mode", pipeline.mode},
                          {"map_channels", pipeline.map_channels},
                          {"map_sigma", pipeline.map_sigma},
                          {"input_norm", pipeline.input_norm}};
    std::string header_text = header.dump();

    out.write(kCheckpointMagic, 4);
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    ModelParams& mutable_params = const_cast<ModelParams&>(params);
    for (TensorRef<float>& t : tensor_list(mutable_params)) {
        write_pod(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod(out, static_cast<std::uint8_t>(t.dims.size()));
        for (int dim : t.dims) write_pod(out, static_cast<std::uint32_t>(dim));
        out.write(reinterpret_cast<const char*>(t.data->data()),
                  static_cast<std::streamsize>(t.data->size() * sizeof(float)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path);
    auto version = read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          path);

    auto header_len = read_pod<std::uint32_t>(in, path);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (!in) throw FormatError("truncated checkpoint header: " + path);

    nlohmann::json header = nlohmann::json::parse(header_text, nullptr, false);
    if (header.is_discarded()) throw FormatError("malformed checkpoint header JSON: " + path);

    Checkpoint ck;
    try {
        const auto& jc = header.at("config");
        ModelConfig c;
        c.patch_size = jc.at("patch_size").get<int>();
        c.image_side = jc.at("image_side").get<int>();
        c.in_dim_per_token = jc.at("in_dim_per_token").get<int>();
        c.embed_width = jc.at("embed_width").get<int>();
        c.depth = jc.at("depth").get<int>();
        c.heads = jc.at("heads").get<int>();
        c.mlp_ratio = jc.at("mlp_ratio").get<double>();
        c.embedding_dim = jc.at("embedding_dim").get<int>();
        c.num_classes = jc.at("num_classes").get<int>();
        c.seed = jc.at("seed").get<std::uint64_t>();
        c.validate();
        ck.params = allocate_params<float>(c);

        const auto& jp = header.at("pipeline");
        ck.pipeline.mode = jp.at("mode").get<std::string>();
        ck.pipeline.map_channels = jp.at("map_channels").get<int>();
        ck.pipeline.map_sigma = jp.at("map_sigma").get<double>();
        ck.pipeline.input_norm = jp.at("input_norm").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid checkpoint header: ") + e.what());
    }

    for (TensorRef<float>& t : tensor_list(ck.params)) {
        auto name_len = read_pod<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in || name != t.name)
            throw FormatError("checkpoint tensor mismatch: expected " + t.name + ", got " + name);
        auto rank = read_pod<std::uint8_t>(in, path);
        if (rank != t.dims.size())
            throw FormatError("checkpoint tensor " + name + " has unexpected rank");
        for (int dim : t.dims) {
            auto got = read_pod<std::uint32_t>(in, path);
            if (got != static_cast<std::uint32_t>(dim))
                throw FormatError("checkpoint tensor " + name + " has unexpected shape");
        }
        in.read(reinterpret_cast<char*>(t.data->data()),
                static_cast<std::streamsize>(t.data->size() * sizeof(float)));
        if (!in) throw FormatError("truncated checkpoint tensor data: " + path);
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template std::vector<TensorRef<float>> tensor_list(ModelParamsT<float>&);
template std::vector<TensorRef<double>> tensor_list(ModelParamsT<double>&);
template ModelParamsT<float> init_params<float>(const ModelConfig&);
template ModelParamsT<double> init_params<double>(const ModelConfig&);
template ModelParamsT<float> zeros_like(const ModelParamsT<float>&);
template ModelParamsT<double> zeros_like(const ModelParamsT<double>&);
template ForwardResultT<float> forward(const ModelParamsT<float>&, const std::vector<float>&, bool);
template ForwardResultT<double> forward(const ModelParamsT<double>&, const std::vector<double>&, bool);
template std::vector<float> backward(const ModelParamsT<float>&, const ForwardCacheT<float>&,
                                     const std::vector<float>&, const BackwardSeedT<float>&,
                                     ModelParamsT<float>&);
template std::vector<double> backward(const ModelParamsT<double>&, const ForwardCacheT<double>&,
                                      const std::vector<double>&, const BackwardSeedT<double>&,
                                      ModelParamsT<double>&);
template float loss_only(const ModelParamsT<float>&, const std::vector<float>&, int);
template double loss_only(const ModelParamsT<double>&, const std::vector<double>&, int);
template LossResultT<float> loss_and_backward(const ModelParamsT<float>&,
                                              const std::vector<float>&, int);
template LossResultT<double> loss_and_backward(const ModelParamsT<double>&,
                                               const std::vector<double>&, int);
template std::vector<float> input_gradient(const ModelParamsT<float>&, const std::vector<float>&,
                                           SaliencyTarget, int);
template std::vector<double> input_gradient(const ModelParamsT<double>&,
                                            const std::vector<double>&, SaliencyTarget, int);

}  // namespace fpvit
