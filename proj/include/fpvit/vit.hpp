#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fpvit/image.hpp"
#include "fpvit/tokenizer.hpp"

namespace fpvit {

// Transformer encoder hyper-parameters. embedding_dim is the output
// representation size and is independent of embed_width (the internal
// stream width); a dedicated head maps between them.
struct ModelConfig {
    int patch_size = 8;
    int image_side = 32;
    int in_dim_per_token = 192;  // patch_size^2 * (1 + map channels)
    int embed_width = 64;
    int depth = 2;
    int heads = 4;
    double mlp_ratio = 4.0;
    int embedding_dim = 32;
    int num_classes = 10;
    std::uint64_t seed = 0;

    int grid() const { return image_side / patch_size; }
    int num_patches() const { return grid() * grid(); }
    int seq_len() const { return num_patches() + 1; }  // +1 class token
    int head_dim() const { return embed_width / heads; }
    int mlp_dim() const { return static_cast<int>(mlp_ratio * embed_width + 0.5); }

    void validate() const;

    // Small preset that trains in seconds on a CPU.
    static ModelConfig desk_scale(int num_classes, int map_channels, std::uint64_t seed = 0);
    // ViT-Small-like preset: width 384, depth 12, heads 6, 384-d output.
    static ModelConfig full_scale(int num_classes, int map_channels, std::uint64_t seed = 0);
};

std::size_t parameter_count(const ModelConfig& config);

enum class TensorKind { weight, embedding, bias, norm_scale, norm_offset };

template <typename T>
struct BlockParamsT {
    std::vector<T> ln1_scale, ln1_offset;       // D
    std::vector<T> wq, wk, wv, wo;              // D x D
    std::vector<T> bq, bk, bv, bo;              // D
    std::vector<T> ln2_scale, ln2_offset;       // D
    std::vector<T> mlp_w1;                      // D x Dm
    std::vector<T> mlp_b1;                      // Dm
    std::vector<T> mlp_w2;                      // Dm x D
    std::vector<T> mlp_b2;                      // D
};

template <typename T>
struct ModelParamsT {
    ModelConfig config;
    std::vector<T> patch_weight;                // in_dim x D
    std::vector<T> patch_bias;                  // D
    std::vector<T> cls_token;                   // D
    std::vector<T> pos_embed;                   // (N+1) x D
    std::vector<BlockParamsT<T>> blocks;
    std::vector<T> final_scale, final_offset;   // D
    std::vector<T> embed_weight;                // D x E
    std::vector<T> embed_bias;                  // E
    std::vector<T> cls_weight;                  // E x C
    std::vector<T> cls_bias;                    // C
};

using ModelParams = ModelParamsT<float>;

template <typename T>
struct TensorRef {
    std::string name;
    TensorKind kind;
    std::vector<T>* data;
    std::vector<int> dims;
};

// Canonical tensor order. Everything that walks the parameter set
// (init, optimizer, checkpoints, gradient checks) iterates this list so
// the order is identical everywhere.
template <typename T>
std::vector<TensorRef<T>> tensor_list(ModelParamsT<T>& params);

// Truncated normal (std 0.02) for projections and token embeddings, zeros
// for biases and norm offsets, ones for norm scales. Deterministic in
// config.seed.
template <typename T>
ModelParamsT<T> init_params(const ModelConfig& config);

template <typename T>
ModelParamsT<T> zeros_like(const ModelParamsT<T>& params);

template <typename T>
struct BlockCacheT {
    std::vector<T> x_in;                 // S x D
    std::vector<T> ln1_mean, ln1_rstd;   // S
    std::vector<T> ln1_out;              // S x D
    std::vector<T> q, k, v;              // S x D
    std::vector<T> attn_probs;           // heads x S x S, rows sum to 1
    std::vector<T> ctx;                  // S x D
    std::vector<T> x_mid;                // S x D
    std::vector<T> ln2_mean, ln2_rstd;   // S
    std::vector<T> ln2_out;              // S x D
    std::vector<T> mlp_pre, mlp_act;     // S x Dm
};

template <typename T>
struct ForwardCacheT {
    std::vector<T> tokens;               // N x in_dim
    std::vector<T> seq0;                 // S x D after projection + cls + pos
    std::vector<BlockCacheT<T>> blocks;
    std::vector<T> final_in;             // S x D
    std::vector<T> final_mean, final_rstd;
    std::vector<T> final_out;            // S x D
};

template <typename T>
struct ForwardResultT {
    std::vector<T> embedding_raw;        // E, pre-normalization
    std::vector<T> logits;               // C
    std::shared_ptr<ForwardCacheT<T>> cache;  // null unless keep_cache
};

template <typename T>
ForwardResultT<T> forward(const ModelParamsT<T>& params, const std::vector<T>& tokens,
                          bool keep_cache = false);

// Gradient seeds for the output heads. Either side may be empty (treated
// as zero).
template <typename T>
struct BackwardSeedT {
    std::vector<T> d_logits;             // C
    std::vector<T> d_embedding_raw;      // E
};

// Accumulates parameter gradients into `grads` and returns the gradient
// with respect to the input tokens (N x in_dim).
template <typename T>
std::vector<T> backward(const ModelParamsT<T>& params, const ForwardCacheT<T>& cache,
                        const std::vector<T>& embedding_raw, const BackwardSeedT<T>& seed,
                        ModelParamsT<T>& grads);

// Softmax cross-entropy on the class logits.
template <typename T>
T loss_only(const ModelParamsT<T>& params, const std::vector<T>& tokens, int label);

template <typename T>
struct LossResultT {
    T loss;
    ModelParamsT<T> grads;
};

template <typename T>
LossResultT<T> loss_and_backward(const ModelParamsT<T>& params, const std::vector<T>& tokens,
                                 int label);

// Unit-L2 embedding; throws NumericError on a zero-norm raw embedding.
std::vector<float> extract_embedding(const ModelParams& params, const TokenSequence& tokens);

enum class SaliencyTarget { embedding_norm, class_logit };

// Signed d(target)/d(token element), N x in_dim. For embedding_norm the
// target is the L2 norm of the raw embedding; a zero-norm embedding yields
// an all-zero gradient.
template <typename T>
std::vector<T> input_gradient(const ModelParamsT<T>& params, const std::vector<T>& tokens,
                              SaliencyTarget target, int class_index = -1);

// |input gradient| of the image plane, de-tokenized and max-normalized to
// [0, 1].
Image saliency(const ModelParams& params, const TokenSequence& tokens, SaliencyTarget target,
               int class_index = -1);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainSchedule {
    int epochs = 30;
    int batch_size = 32;
    double peak_lr = 1e-3;
    int warmup_steps = 100;
    double weight_decay = 0.01;  // decoupled, weight matrices only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    int threads = 1;  // batch-parallel gradient accumulation, ordered reduction
};

// Linear warmup from 0 to peak_lr, then cosine decay to 0.
double lr_at_step(const TrainSchedule& schedule, long step, long total_steps);

struct TrainSample {
    std::vector<float> tokens;
    int label = 0;
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_rank1 = -1.0;  // leave-one-out 1-NN on val embeddings; -1 if no val set
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
    bool diverged = false;
    std::string diagnostics;
};

// Mini-batch AdamW with the schedule above. Deterministic under fixed seed
// and a fixed thread count (per-thread partial gradients are reduced in
// thread order). On a non-finite loss the last epoch-end parameters are
// returned with diverged set.
TrainResult train(const ModelConfig& config, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainSchedule& schedule,
                  const ModelParams* init_from = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// How inputs must be prepared for this model; stored in the checkpoint
// header so embedding extraction reproduces training-time preprocessing.
struct PipelineInfo {
    std::string mode = "concat";  // "concat" | "vanilla"
    int map_channels = 2;
    double map_sigma = 1.0;
    std::string input_norm = kInputNormContract;
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const PipelineInfo& pipeline);

struct Checkpoint {
    ModelParams params;
    PipelineInfo pipeline;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace fpvit
