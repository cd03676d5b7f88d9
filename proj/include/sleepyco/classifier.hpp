#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sleepyco/backbone.hpp"
#include "sleepyco/nn.hpp"

namespace sleepyco {

// Eq. 4 as printed uses frequency exponent k/d_m; `Paired` switches to the
// conventional 2*floor(k/2)/d_m so sin/cos at adjacent k share a frequency.
enum class PeExponent { Printed, Paired };
enum class PoolActivation { Tanh, Identity };
enum class CrlRepresentation { C5, F5 };

struct ModelConfig {
    std::size_t L = 10;
    std::size_t n_classes = 5;
    std::size_t d_f = 128;
    std::size_t d_m = 128;
    std::size_t d_ff = 128;
    std::size_t n_heads = 8;
    std::size_t n_layers = 6;
    std::size_t d_z = 128;
    std::size_t R = 5;
    double tau = 0.07;
    double dropout = 0.1;
    std::vector<int> taps{3, 4, 5};
    PeExponent pe_exponent = PeExponent::Printed;
    PoolActivation pool_activation = PoolActivation::Tanh;
    CrlRepresentation crl_representation = CrlRepresentation::C5;

    void validate() const;
};

// Effective absolute position a coarse-level index encodes:
// t*R^(stage-3) + floor(R^(stage-3)/2).
long hopped_position(int stage, long t, long R);

// [T, d_m] sinusoidal table with hopped temporal indices; degenerates to the
// plain sinusoidal encoding at stage 3.
Tensor positional_encoding(int stage, std::size_t T, std::size_t d_m,
                           std::size_t R, PeExponent pe);

// Mode plus the RNG plumbing dropout needs during training.
struct ForwardCtx {
    Mode mode = Mode::Eval;
    RngStream* drop_rng = nullptr;
    std::uint64_t attn_key = 0;
};

class TransformerEncoderLayer {
public:
    LinearLayer wq, wk, wv, wo, ff1, ff2;
    LayerNormLayer ln1, ln2;
    std::size_t n_heads = 8;
    double dropout_rate = 0.1;
    std::size_t index = 0;

    TransformerEncoderLayer() = default;
    TransformerEncoderLayer(const std::string& prefix, std::size_t d_m,
                            std::size_t d_ff, std::size_t n_heads, double dropout,
                            std::size_t index, RngStream& rng);

    // x: [B, T, d_m]; `salt` distinguishes attention-dropout streams between
    // call sites sharing one ctx (pyramid levels).
    Tensor forward(const Tensor& x, const ForwardCtx& ctx, std::uint64_t salt) const;

    void params(std::vector<Parameter*>& out);
};

class AttentionPool {
public:
    LinearLayer proj;     // d_m -> d_m
    LinearLayer score;    // d_m -> 1, no bias (the scoring weights W_att)
    PoolActivation activation = PoolActivation::Tanh;

    AttentionPool() = default;
    AttentionPool(const std::string& prefix, std::size_t d_m, PoolActivation act,
                  RngStream& rng);

    // h: [B, T, d_m] -> pooled [B, d_m]
    Tensor forward(const Tensor& h) const;
    // convenience for tests: also expose the attention weights [B, T]
    Tensor attention_weights(const Tensor& h) const;

    void params(std::vector<Parameter*>& out);
};

// Lateral connections, shared embedding with hopped positional encoding,
// transformer encoder, attention pooling and the shared per-level head.
class SleepClassifier {
public:
    ModelConfig cfg;
    std::map<int, Conv1dLayer> lateral;
    LinearLayer shared_fc;
    PReLULayer shared_act;
    std::vector<TransformerEncoderLayer> encoder;
    AttentionPool pool;
    LinearLayer head;

    SleepClassifier(const ModelConfig& cfg, const BackboneConfig& bcfg,
                    RngStream& rng);

    Tensor lateral_connect(int stage, const Tensor& c) const;

    // F: [B, T, d_f] -> Z = PReLU(F W + b) + P_stage  [B, T, d_m]
    Tensor embed_sequence(int stage, const Tensor& f) const;

    Tensor transformer_encode(const Tensor& z, const ForwardCtx& ctx,
                              std::uint64_t salt = 0) const;

    Tensor stage_logits(const Tensor& pooled) const;

    // Per-level logits o_i, ordered by stage. Each is [B, n_classes].
    std::vector<Tensor> forward_logits(const FeatureSequenceSet& feats,
                                       const ForwardCtx& ctx) const;

    void params(std::vector<Parameter*>& out);
};

// argmax of the elementwise sum of the per-level logits; ties break to the
// lowest stage index. NaN logits are rejected.
int predict_stage(const std::vector<std::vector<double>>& per_level_logits);

// Batch version over [B, n_classes] logit tensors.
std::vector<int> predict_stages(const std::vector<Tensor>& per_level_logits);

}  // namespace sleepyco
