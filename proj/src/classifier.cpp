#include "sleepyco/classifier.hpp"

#include <cmath>
#include <stdexcept>

namespace sleepyco {

void ModelConfig::validate() const {
    if (d_m % n_heads != 0)
        throw std::invalid_argument("model: d_m must be divisible by n_heads");
    if (taps.empty()) throw std::invalid_argument("model: need at least one tap");
    if (n_classes < 2) throw std::invalid_argument("model: need >= 2 classes");
}

long hopped_position(int stage, long t, long R) {
    if (stage < 3) throw std::invalid_argument("hopped_position: stage must be >= 3");
    long hop = 1;
    for (int i = 3; i < stage; ++i) hop *= R;
    return t * hop + hop / 2;
}

Tensor positional_encoding(int stage, std::size_t T, std::size_t d_m,
                           std::size_t R, PeExponent pe) {
    std::vector<double> data(T * d_m);
    for (std::size_t t = 0; t < T; ++t) {
        const double pos = static_cast<double>(
            hopped_position(stage, static_cast<long>(t), static_cast<long>(R)));
        for (std::size_t k = 0; k < d_m; ++k) {
            const double expo =
                pe == PeExponent::Printed
                    ? static_cast<double>(k) / static_cast<double>(d_m)
                    : static_cast<double>(2 * (k / 2)) / static_cast<double>(d_m);
            const double arg = pos / std::pow(10000.0, expo);
            data[t * d_m + k] = (k % 2 == 0) ? std::sin(arg) : std::cos(arg);
        }
    }
    return Tensor::from_data({T, d_m}, std::move(data));
}

// ---------------------------------------------------------------------------
// TransformerEncoderLayer
// ---------------------------------------------------------------------------

TransformerEncoderLayer::TransformerEncoderLayer(const std::string& prefix,
                                                 std::size_t d_m, std::size_t d_ff,
                                                 std::size_t heads, double dropout,
                                                 std::size_t idx, RngStream& rng)
    : n_heads(heads), dropout_rate(dropout), index(idx) {
    wq = LinearLayer(prefix + ".attn.wq", d_m, d_m, rng, true, 1.0);
    wk = LinearLayer(prefix + ".attn.wk", d_m, d_m, rng, true, 1.0);
    wv = LinearLayer(prefix + ".attn.wv", d_m, d_m, rng, true, 1.0);
    wo = LinearLayer(prefix + ".attn.wo", d_m, d_m, rng, true, 1.0);
    ff1 = LinearLayer(prefix + ".ffn.fc1", d_m, d_ff, rng, true, std::sqrt(2.0));
    ff2 = LinearLayer(prefix + ".ffn.fc2", d_ff, d_m, rng, true, 1.0);
    ln1 = LayerNormLayer(prefix + ".ln1", d_m);
    ln2 = LayerNormLayer(prefix + ".ln2", d_m);
}

Tensor TransformerEncoderLayer::forward(const Tensor& x, const ForwardCtx& ctx,
                                        std::uint64_t salt) const {
    const Shape& s = x.shape();
    if (s.size() != 3) throw std::invalid_argument("encoder: expected [B,T,d_m]");
    const std::size_t B = s[0], T = s[1], D = s[2];
    const std::size_t dh = D / n_heads;
    const bool train = ctx.mode == Mode::Train;
    if (train && dropout_rate > 0.0 && ctx.drop_rng == nullptr)
        throw std::invalid_argument("encoder: train mode needs a dropout stream");

    auto split_heads = [&](const Tensor& t) {
        return permute(reshape(t, {B, T, n_heads, dh}), {0, 2, 1, 3});
    };
    Tensor q = split_heads(wq.forward(x));
    Tensor k = split_heads(wk.forward(x));
    Tensor v = split_heads(wv.forward(x));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::uint64_t attn_key = derive_key(ctx.attn_key, index, salt);
    Tensor att = attention_core(q, k, v, scale, dropout_rate,
                                train ? Mode::Train : Mode::Eval, attn_key);
    Tensor merged = reshape(permute(att, {0, 2, 1, 3}), {B, T, D});
    Tensor o = wo.forward(merged);
    if (train && dropout_rate > 0.0)
        o = dropout(o, dropout_rate, *ctx.drop_rng, Mode::Train);
    Tensor h = ln1.forward(add(x, o));

    Tensor f = ff2.forward(relu(ff1.forward(h)));
    if (train && dropout_rate > 0.0)
        f = dropout(f, dropout_rate, *ctx.drop_rng, Mode::Train);
    return ln2.forward(add(h, f));
}

void TransformerEncoderLayer::params(std::vector<Parameter*>& out) {
    wq.params(out);
    wk.params(out);
    wv.params(out);
    wo.params(out);
    ff1.params(out);
    ff2.params(out);
    ln1.params(out);
    ln2.params(out);
}

// ---------------------------------------------------------------------------
// AttentionPool
// ---------------------------------------------------------------------------

AttentionPool::AttentionPool(const std::string& prefix, std::size_t d_m,
                             PoolActivation act, RngStream& rng)
    : activation(act) {
    proj = LinearLayer(prefix + ".proj", d_m, d_m, rng, true, 1.0);
    score = LinearLayer(prefix + ".w_att", d_m, 1, rng, false, 1.0);
}

Tensor AttentionPool::forward(const Tensor& h) const {
    const Shape& s = h.shape();
    if (s.size() != 3) throw std::invalid_argument("attention_pool: expected [B,T,d]");
    if (s[1] == 0) throw std::invalid_argument("attention_pool: empty time axis");
    Tensor a = proj.forward(h);
    if (activation == PoolActivation::Tanh) a = tanh(a);
    Tensor w = softmax(reshape(score.forward(a), {s[0], s[1]}), 1);  // [B,T]
    Tensor weighted = mul(a, reshape(w, {s[0], s[1], 1}));
    return sum(weighted, {1});  // [B, d]
}

Tensor AttentionPool::attention_weights(const Tensor& h) const {
    const Shape& s = h.shape();
    Tensor a = proj.forward(h);
    if (activation == PoolActivation::Tanh) a = tanh(a);
    return softmax(reshape(score.forward(a), {s[0], s[1]}), 1);
}

void AttentionPool::params(std::vector<Parameter*>& out) {
    proj.params(out);
    score.params(out);
}

// ---------------------------------------------------------------------------
// SleepClassifier
// ---------------------------------------------------------------------------

SleepClassifier::SleepClassifier(const ModelConfig& cfg_, const BackboneConfig& bcfg,
                                 RngStream& rng)
    : cfg(cfg_) {
    cfg.validate();
    for (int stage : cfg.taps) {
        lateral.emplace(stage,
                        Conv1dLayer("lateral." + std::to_string(stage),
                                    bcfg.stage_channels(stage), cfg.d_f, 1, 1, 0,
                                    rng, 1.0));
    }
    shared_fc = LinearLayer("shared_fc", cfg.d_f, cfg.d_m, rng);
    shared_act = PReLULayer("shared_fc.prelu", cfg.d_m, 2);
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
        encoder.emplace_back("encoder.layer" + std::to_string(i), cfg.d_m, cfg.d_ff,
                             cfg.n_heads, cfg.dropout, i, rng);
    pool = AttentionPool("attnpool", cfg.d_m, cfg.pool_activation, rng);
    head = LinearLayer("head", cfg.d_m, cfg.n_classes, rng, true, 1.0);
}

Tensor SleepClassifier::lateral_connect(int stage, const Tensor& c) const {
    auto it = lateral.find(stage);
    if (it == lateral.end())
        throw std::invalid_argument("lateral_connect: unknown stage index " +
                                    std::to_string(stage));
    return it->second.forward(c);
}

Tensor SleepClassifier::embed_sequence(int stage, const Tensor& f) const {
    const Shape& s = f.shape();
    if (s.size() != 3 || s[2] != cfg.d_f)
        throw std::invalid_argument("embed_sequence: expected [B,T," +
                                    std::to_string(cfg.d_f) + "], got " +
                                    shape_str(s));
    Tensor z = shared_act.forward(shared_fc.forward(f));
    Tensor p = positional_encoding(stage, s[1], cfg.d_m, cfg.R, cfg.pe_exponent);
    return add(z, p);
}

Tensor SleepClassifier::transformer_encode(const Tensor& z, const ForwardCtx& ctx,
                                           std::uint64_t salt) const {
    Tensor h = z;
    for (const auto& layer : encoder) h = layer.forward(h, ctx, salt);
    return h;
}

Tensor SleepClassifier::stage_logits(const Tensor& pooled) const {
    return head.forward(pooled);
}

std::vector<Tensor> SleepClassifier::forward_logits(const FeatureSequenceSet& feats,
                                                    const ForwardCtx& ctx) const {
    std::vector<Tensor> logits;
    for (int stage : cfg.taps) {
        auto it = feats.taps.find(stage);
        if (it == feats.taps.end())
            throw std::invalid_argument("forward_logits: backbone did not tap stage " +
                                        std::to_string(stage));
        Tensor f = lateral_connect(stage, it->second);        // [B, d_f, T]
        f = permute(f, {0, 2, 1});                            // [B, T, d_f]
        Tensor z = embed_sequence(stage, f);
        Tensor h = transformer_encode(z, ctx, static_cast<std::uint64_t>(stage));
        logits.push_back(stage_logits(pool.forward(h)));
    }
    return logits;
}

void SleepClassifier::params(std::vector<Parameter*>& out) {
    for (auto& [stage, conv] : lateral) conv.params(out);
    shared_fc.params(out);
    shared_act.params(out);
    for (auto& layer : encoder) layer.params(out);
    pool.params(out);
    head.params(out);
}

// ---------------------------------------------------------------------------
// prediction
// ---------------------------------------------------------------------------

int predict_stage(const std::vector<std::vector<double>>& per_level_logits) {
    if (per_level_logits.empty())
        throw std::invalid_argument("predict_stage: no logits");
    const std::size_t n = per_level_logits.front().size();
    std::vector<double> total(n, 0.0);
    for (const auto& o : per_level_logits) {
        if (o.size() != n)
            throw std::invalid_argument("predict_stage: logit length mismatch");
        for (std::size_t j = 0; j < n; ++j) {
            if (std::isnan(o[j]))
                throw std::invalid_argument("predict_stage: NaN logit");
            total[j] += o[j];
        }
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (total[j] > total[best]) best = j;  // strict: ties keep lowest index
    return static_cast<int>(best);
}

std::vector<int> predict_stages(const std::vector<Tensor>& per_level_logits) {
    if (per_level_logits.empty())
        throw std::invalid_argument("predict_stages: no logits");
    const Shape& s = per_level_logits.front().shape();
    if (s.size() != 2)
        throw std::invalid_argument("predict_stages: expected [B,n_classes] logits");
    const std::size_t B = s[0], n = s[1];
    std::vector<int> preds(B);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<std::vector<double>> per_level;
        for (const Tensor& t : per_level_logits) {
            const double* row = t.data().data() + b * n;
            per_level.emplace_back(row, row + n);
        }
        preds[b] = predict_stage(per_level);
    }
    return preds;
}

}  // namespace sleepyco
