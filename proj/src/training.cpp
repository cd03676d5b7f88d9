#include "sleepyco/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sleepyco {

namespace {

const std::uint64_t kSaltInit = hash_string("model-init");
const std::uint64_t kSaltOrder = hash_string("sample-order");
const std::uint64_t kSaltAug = hash_string("train-augment");
const std::uint64_t kSaltValAug = hash_string("val-augment");
const std::uint64_t kSaltValSubset = hash_string("val-subset");
const std::uint64_t kSaltDropout = hash_string("dropout");
const std::uint64_t kSaltAttn = hash_string("attn-dropout");

// Reshuffled-each-pass uniform sampler over a fixed ref list.
template <class Ref>
class EpochSampler {
public:
    EpochSampler(std::vector<Ref> refs, std::uint64_t seed, std::uint64_t salt)
        : refs_(std::move(refs)), seed_(seed), salt_(salt) {
        reshuffle();
    }

    std::vector<Ref> next(std::size_t n) {
        std::vector<Ref> out;
        out.reserve(n);
        while (out.size() < n) {
            if (cursor_ == refs_.size()) {
                ++pass_;
                reshuffle();
            }
            out.push_back(refs_[cursor_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        RngStream rng = keyed_stream(seed_, kSaltOrder, salt_, pass_);
        for (std::size_t i = refs_.size(); i > 1; --i)
            std::swap(refs_[i - 1],
                      refs_[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
        cursor_ = 0;
    }

    std::vector<Ref> refs_;
    std::uint64_t seed_, salt_;
    std::uint64_t pass_ = 0;
    std::size_t cursor_ = 0;
};

template <class Ref>
std::vector<Ref> pick_validation_subset(std::vector<Ref> refs, std::uint64_t seed,
                                        int cap) {
    if (cap <= 0 || static_cast<std::size_t>(cap) >= refs.size()) return refs;
    RngStream rng = keyed_stream(seed, kSaltValSubset);
    for (std::size_t i = refs.size(); i > 1; --i)
        std::swap(refs[i - 1],
                  refs[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
    refs.resize(static_cast<std::size_t>(cap));
    return refs;
}

}  // namespace

void TrainConfig::validate() const {
    if (psi1 < 1 || psi2 < 1 || phi < 0)
        throw std::invalid_argument("train: psi1/psi2 must be >= 1 and phi >= 0");
    if (batch_crl < 2 || batch_mtcl < 1)
        throw std::invalid_argument("train: batch sizes too small");
    if (L < 1) throw std::invalid_argument("train: L must be >= 1");
    if (eta <= 0.0) throw std::invalid_argument("train: eta must be > 0");
    if (mtcl_bn != "eval" && mtcl_bn != "train")
        throw std::invalid_argument("train: mtcl_bn must be \"eval\" or \"train\"");
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor mtcl_loss(const std::vector<Tensor>& per_level_logits, const Tensor& onehot) {
    if (per_level_logits.empty())
        throw std::invalid_argument("mtcl_loss: no logits");
    const Shape& s = onehot.shape();
    if (s.size() != 2) throw std::invalid_argument("mtcl_loss: onehot must be [B,N_c]");
    Tensor total;
    for (const Tensor& o : per_level_logits) {
        if (o.shape() != s)
            throw std::invalid_argument("mtcl_loss: logit shape " +
                                        shape_str(o.shape()) + " vs labels " +
                                        shape_str(s));
        Tensor ce = neg(sum(mul(onehot, log_softmax(o, 1))));
        total = total.defined() ? add(total, ce) : ce;
    }
    return mul_scalar(total, 1.0 / static_cast<double>(s[0]));
}

// ---------------------------------------------------------------------------
// early stopping
// ---------------------------------------------------------------------------

EarlyStopDecision early_stop_update(EarlyStopState& state, double val_loss,
                                    int phi) {
    if (std::isnan(val_loss))
        throw std::invalid_argument("early_stop_update: NaN validation loss");
    EarlyStopDecision d;
    if (val_loss < state.best_val_loss) {
        state.best_val_loss = val_loss;
        state.best_index = state.n_validations;
        state.p = 0;
        d.improved = true;
    } else {
        ++state.p;
    }
    ++state.n_validations;
    d.stop = state.p > phi;
    return d;
}

// ---------------------------------------------------------------------------
// state dicts
// ---------------------------------------------------------------------------

Checkpoint make_state_dict(std::vector<Parameter*>& params,
                           std::vector<BufferRef>& buffers) {
    Checkpoint ckpt;
    for (Parameter* p : params)
        ckpt.add(p->name, p->tensor.shape(), p->tensor.data());
    for (BufferRef& b : buffers) ckpt.add(b.name, b.shape, *b.data);
    return ckpt;
}

void load_state_dict(const Checkpoint& ckpt, std::vector<Parameter*>& params,
                     std::vector<BufferRef>& buffers,
                     const std::vector<std::string>& ignore_prefixes) {
    std::vector<std::string> diff;
    std::vector<std::string> consumed;
    auto fetch = [&](const std::string& name, const Shape& shape)
        -> const CheckpointEntry* {
        if (!ckpt.has(name)) {
            diff.push_back("missing in checkpoint: " + name);
            return nullptr;
        }
        const CheckpointEntry& e = ckpt.get(name);
        if (e.shape != shape) {
            diff.push_back("shape mismatch for " + name + ": model " +
                           shape_str(shape) + " vs checkpoint " + shape_str(e.shape));
            return nullptr;
        }
        consumed.push_back(name);
        return &e;
    };
    for (Parameter* p : params) {
        if (const CheckpointEntry* e = fetch(p->name, p->tensor.shape()))
            p->tensor.data() = e->data;
    }
    for (BufferRef& b : buffers) {
        if (const CheckpointEntry* e = fetch(b.name, b.shape)) {
            *b.data = e->data;
            if (b.init_flag) *b.init_flag = true;
        }
    }
    for (const auto& e : ckpt.entries()) {
        bool ignored = false;
        for (const auto& pre : ignore_prefixes)
            if (e.name.rfind(pre, 0) == 0) {
                ignored = true;
                break;
            }
        if (!ignored &&
            std::find(consumed.begin(), consumed.end(), e.name) == consumed.end())
            diff.push_back("unused checkpoint entry: " + e.name);
    }
    if (!diff.empty()) {
        std::ostringstream os;
        os << "checkpoint/architecture mismatch (" << diff.size() << " fields):";
        for (const auto& d : diff) os << "\n  " << d;
        throw std::runtime_error(os.str());
    }
}

// ---------------------------------------------------------------------------
// SleepModel
// ---------------------------------------------------------------------------

SleepModel::SleepModel(const ModelConfig& mcfg, const BackboneConfig& bcfg,
                       std::uint64_t seed)
    : SleepModel(mcfg, bcfg, keyed_stream(seed, kSaltInit, 2)) {}

SleepModel::SleepModel(const ModelConfig& mcfg, const BackboneConfig& bcfg,
                       RngStream rng)
    : backbone(bcfg, rng), classifier(mcfg, bcfg, rng) {}

std::vector<Tensor> SleepModel::forward(const Tensor& x, Mode backbone_mode,
                                        const ForwardCtx& ctx) {
    FeatureSequenceSet feats = backbone.forward(x, backbone_mode);
    return classifier.forward_logits(feats, ctx);
}

void SleepModel::params(std::vector<Parameter*>& out) {
    backbone.params(out);
    classifier.params(out);
}

void SleepModel::buffers(std::vector<BufferRef>& out) { backbone.buffers(out); }

Checkpoint SleepModel::state_dict() {
    std::vector<Parameter*> ps;
    std::vector<BufferRef> bs;
    params(ps);
    buffers(bs);
    return make_state_dict(ps, bs);
}

// ---------------------------------------------------------------------------
// logging
// ---------------------------------------------------------------------------

TrainLog::TrainLog(const std::string& path) : file_(path, std::ios::trunc) {
    if (!file_) throw std::runtime_error("cannot write training log " + path);
    file_ << "iteration,split,loss,accuracy\n";
}

void TrainLog::row(long iteration, const std::string& split, double loss,
                   double accuracy) {
    file_ << iteration << "," << split << "," << loss << ",";
    if (!std::isnan(accuracy)) file_ << accuracy;
    file_ << "\n";
    file_.flush();
}

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

Tensor build_sequence_batch(const DatasetView& view,
                            const std::vector<SequenceRef>& refs, int L) {
    const std::size_t span = static_cast<std::size_t>(L) * kEpochSamples;
    std::vector<double> data(refs.size() * span);
    for (std::size_t i = 0; i < refs.size(); ++i)
        materialize_sequence(view, refs[i], L, data.data() + i * span);
    return Tensor::from_data({refs.size(), 1, span}, std::move(data));
}

Tensor build_onehot(const std::vector<int>& labels, int n_classes) {
    std::vector<double> data(labels.size() * static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw std::invalid_argument("build_onehot: label out of range");
        data[i * static_cast<std::size_t>(n_classes) +
             static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::from_data({labels.size(), static_cast<std::size_t>(n_classes)},
                             std::move(data));
}

// ---------------------------------------------------------------------------
// CRL
// ---------------------------------------------------------------------------

namespace {

// Two augmented views per source epoch, interleaved (2p-1, 2p share a label).
Tensor build_multiview_batch(const DatasetView& view,
                             const std::vector<SampleRef>& refs,
                             const AugmentationConfig& aug, std::uint64_t seed,
                             std::uint64_t salt, std::uint64_t index_base,
                             std::vector<int>& labels_out) {
    const std::size_t n = refs.size();
    std::vector<double> data(2 * n * kEpochSamples);
    labels_out.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& sub = view.base->subjects[static_cast<std::size_t>(refs[i].subject)];
        const auto& epoch = sub.epochs[static_cast<std::size_t>(refs[i].epoch)];
        const int label = static_cast<int>(sub.stages[static_cast<std::size_t>(refs[i].epoch)]);
        for (std::size_t v = 0; v < 2; ++v) {
            RngStream rng = keyed_stream(seed, salt, index_base + i, v);
            std::vector<double> x = apply_pipeline(epoch, aug, rng);
            std::copy(x.begin(), x.end(),
                      data.begin() + (2 * i + v) * kEpochSamples);
            labels_out[2 * i + v] = label;
        }
    }
    return Tensor::from_data({2 * n, 1, kEpochSamples}, std::move(data));
}

double crl_validation_loss(CrlModel& model, const DatasetView& val_view,
                           const std::vector<SampleRef>& val_refs,
                           const AugmentationConfig& aug, const ModelConfig& mcfg,
                           const TrainConfig& tcfg) {
    double total = 0.0;
    std::size_t items = 0;
    for (std::size_t start = 0; start < val_refs.size();
         start += static_cast<std::size_t>(tcfg.batch_crl)) {
        const std::size_t end = std::min(
            val_refs.size(), start + static_cast<std::size_t>(tcfg.batch_crl));
        std::vector<SampleRef> chunk(val_refs.begin() + start, val_refs.begin() + end);
        if (chunk.size() < 2 && val_refs.size() > 2) break;  // skip degenerate tail
        std::vector<int> labels;
        Tensor x = build_multiview_batch(val_view, chunk, aug, tcfg.seed, kSaltValAug,
                                         start, labels);
        Tensor z = model.embed(x, Mode::Eval);
        total += supcon_loss(z, labels, mcfg.tau).item();
        items += labels.size();
    }
    if (items == 0)
        throw std::runtime_error("crl validation: empty validation split");
    return total / static_cast<double>(items);  // per-sample mean for comparability
}

}  // namespace

TrainResult run_crl(const DatasetView& train, const DatasetView& val,
                    const ModelConfig& mcfg, const BackboneConfig& bcfg,
                    const TrainConfig& tcfg, const AugmentationConfig& aug,
                    TrainLog* log) {
    tcfg.validate();
    mcfg.validate();
    aug.validate();
    std::vector<SampleRef> train_refs = all_epochs(train);
    if (train_refs.empty())
        throw std::invalid_argument("run_crl: empty training set");
    std::vector<SampleRef> val_refs = pick_validation_subset(
        all_epochs(val), tcfg.seed, tcfg.val_max_items);
    if (val_refs.empty())
        throw std::invalid_argument("run_crl: empty validation set");

    RngStream init_rng = keyed_stream(tcfg.seed, kSaltInit, 1);
    CrlModel model(mcfg, bcfg, init_rng);
    std::vector<Parameter*> params;
    model.params(params);
    std::vector<BufferRef> buffers;
    model.buffers(buffers);

    AdamState adam;
    adam.eta = tcfg.eta;
    adam.beta1 = tcfg.beta1;
    adam.beta2 = tcfg.beta2;
    adam.eps = tcfg.eps;
    adam.weight_decay = tcfg.weight_decay;

    EpochSampler<SampleRef> sampler(train_refs, tcfg.seed, 1);
    EarlyStopState stop_state;
    TrainResult result;

    for (long it = 1;; ++it) {
        std::vector<SampleRef> batch =
            sampler.next(static_cast<std::size_t>(tcfg.batch_crl));
        std::vector<int> labels;
        Tensor x = build_multiview_batch(train, batch, aug, tcfg.seed, kSaltAug,
                                         static_cast<std::uint64_t>(it) << 20, labels);
        Tensor z = model.embed(x, Mode::Train);
        if (count_zero_positive(labels) > 0) ++result.zero_positive_batches;
        Tensor loss = supcon_loss(z, labels, mcfg.tau);
        zero_grads(params);
        backward(loss);
        adam_step(params, adam);
        result.iterations = it;
        if (log)
            log->row(it, "train",
                     loss.item() / static_cast<double>(labels.size()),
                     std::nan(""));

        const bool budget_hit = tcfg.max_iters_crl > 0 && it >= tcfg.max_iters_crl;
        if (it % tcfg.psi1 == 0 || budget_hit) {
            const double val_loss =
                crl_validation_loss(model, val, val_refs, aug, mcfg, tcfg);
            EarlyStopDecision d = early_stop_update(stop_state, val_loss, tcfg.phi);
            if (log) log->row(it, "val", val_loss, std::nan(""));
            if (d.improved) result.best_checkpoint = make_state_dict(params, buffers);
            result.val_losses.push_back(val_loss);
            if (d.stop || budget_hit) break;
        }
    }
    result.best_val_loss = stop_state.best_val_loss;
    result.best_val_index = stop_state.best_index;
    return result;
}

// ---------------------------------------------------------------------------
// MTCL
// ---------------------------------------------------------------------------

namespace {

struct MtclEval {
    double loss = 0.0;
    double accuracy = 0.0;
};

MtclEval mtcl_validation(SleepModel& model, const DatasetView& view,
                         const std::vector<SequenceRef>& refs,
                         const ModelConfig& mcfg, const TrainConfig& tcfg) {
    double total_loss = 0.0;
    long correct = 0;
    std::size_t items = 0;
    ForwardCtx ctx;  // eval: no dropout
    for (std::size_t start = 0; start < refs.size();
         start += static_cast<std::size_t>(tcfg.batch_mtcl)) {
        const std::size_t end =
            std::min(refs.size(), start + static_cast<std::size_t>(tcfg.batch_mtcl));
        std::vector<SequenceRef> chunk(refs.begin() + start, refs.begin() + end);
        Tensor x = build_sequence_batch(view, chunk, tcfg.L);
        std::vector<int> labels(chunk.size());
        for (std::size_t i = 0; i < chunk.size(); ++i)
            labels[i] = static_cast<int>(sequence_label(view, chunk[i]));
        std::vector<Tensor> logits = model.forward(x, Mode::Eval, ctx);
        Tensor loss = mtcl_loss(logits, build_onehot(labels, mcfg.n_classes));
        total_loss += loss.item() * static_cast<double>(chunk.size());
        std::vector<int> preds = predict_stages(logits);
        for (std::size_t i = 0; i < chunk.size(); ++i)
            if (preds[i] == labels[i]) ++correct;
        items += chunk.size();
    }
    if (items == 0) throw std::runtime_error("mtcl validation: empty split");
    return {total_loss / static_cast<double>(items),
            static_cast<double>(correct) / static_cast<double>(items)};
}

}  // namespace

TrainResult run_mtcl(const DatasetView& train, const DatasetView& val,
                     const Checkpoint& crl_checkpoint, const ModelConfig& mcfg,
                     const BackboneConfig& bcfg, const TrainConfig& tcfg,
                     TrainLog* log) {
    tcfg.validate();
    mcfg.validate();
    SleepModel model(mcfg, bcfg, tcfg.seed);

    // Restore the pretrained backbone, then freeze it. Projector entries in
    // the pretraining checkpoint are dropped here.
    {
        std::vector<Parameter*> bp;
        std::vector<BufferRef> bb;
        model.backbone.params(bp);
        model.backbone.buffers(bb);
        load_state_dict(crl_checkpoint, bp, bb, {"projector."});
        model.backbone.freeze();
    }
    const Mode backbone_mode = tcfg.mtcl_bn == "train" ? Mode::Train : Mode::Eval;

    std::vector<SequenceRef> train_refs =
        all_sequences(train, tcfg.L, tcfg.pad_head);
    if (train_refs.empty())
        throw std::invalid_argument("run_mtcl: empty training set");
    std::vector<SequenceRef> val_refs = pick_validation_subset(
        all_sequences(val, tcfg.L, tcfg.pad_head), tcfg.seed, tcfg.val_max_items);
    if (val_refs.empty())
        throw std::invalid_argument("run_mtcl: empty validation set");

    std::vector<Parameter*> trainable;
    model.classifier.params(trainable);
    std::vector<Parameter*> all_params;
    std::vector<BufferRef> all_buffers;
    model.params(all_params);
    model.buffers(all_buffers);

    AdamState adam;
    adam.eta = tcfg.eta;
    adam.beta1 = tcfg.beta1;
    adam.beta2 = tcfg.beta2;
    adam.eps = tcfg.eps;
    adam.weight_decay = tcfg.weight_decay;

    EpochSampler<SequenceRef> sampler(train_refs, tcfg.seed, 2);
    EarlyStopState stop_state;
    TrainResult result;

    for (long it = 1;; ++it) {
        std::vector<SequenceRef> batch =
            sampler.next(static_cast<std::size_t>(tcfg.batch_mtcl));
        Tensor x = build_sequence_batch(train, batch, tcfg.L);
        std::vector<int> labels(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i)
            labels[i] = static_cast<int>(sequence_label(train, batch[i]));

        RngStream drop_rng = keyed_stream(tcfg.seed, kSaltDropout,
                                          static_cast<std::uint64_t>(it));
        ForwardCtx ctx;
        ctx.mode = Mode::Train;
        ctx.drop_rng = &drop_rng;
        ctx.attn_key = derive_key(tcfg.seed, kSaltAttn, static_cast<std::uint64_t>(it));
        std::vector<Tensor> logits = model.forward(x, backbone_mode, ctx);
        Tensor loss = mtcl_loss(logits, build_onehot(labels, mcfg.n_classes));
        zero_grads(trainable);
        backward(loss);
        adam_step(trainable, adam);
        result.iterations = it;
        if (log) {
            std::vector<int> preds = predict_stages(logits);
            long correct = 0;
            for (std::size_t i = 0; i < batch.size(); ++i)
                if (preds[i] == labels[i]) ++correct;
            log->row(it, "train", loss.item(),
                     static_cast<double>(correct) / static_cast<double>(batch.size()));
        }

        const bool budget_hit = tcfg.max_iters_mtcl > 0 && it >= tcfg.max_iters_mtcl;
        if (it % tcfg.psi2 == 0 || budget_hit) {
            MtclEval ev = mtcl_validation(model, val, val_refs, mcfg, tcfg);
            EarlyStopDecision d = early_stop_update(stop_state, ev.loss, tcfg.phi);
            if (log) log->row(it, "val", ev.loss, ev.accuracy);
            if (d.improved)
                result.best_checkpoint = make_state_dict(all_params, all_buffers);
            result.val_losses.push_back(ev.loss);
            if (d.stop || budget_hit) break;
        }
    }
    result.best_val_loss = stop_state.best_val_loss;
    result.best_val_index = stop_state.best_index;
    return result;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate_model(SleepModel& model, const DatasetView& data,
                          const ModelConfig& mcfg, const TrainConfig& tcfg) {
    EvalResult out;
    std::vector<SequenceRef> refs = all_sequences(data, tcfg.L, tcfg.pad_head);
    if (refs.empty()) throw std::invalid_argument("evaluate_model: empty dataset");
    double total_loss = 0.0;
    ForwardCtx ctx;
    for (std::size_t start = 0; start < refs.size();
         start += static_cast<std::size_t>(tcfg.batch_mtcl)) {
        const std::size_t end =
            std::min(refs.size(), start + static_cast<std::size_t>(tcfg.batch_mtcl));
        std::vector<SequenceRef> chunk(refs.begin() + start, refs.begin() + end);
        Tensor x = build_sequence_batch(data, chunk, tcfg.L);
        std::vector<int> labels(chunk.size());
        for (std::size_t i = 0; i < chunk.size(); ++i)
            labels[i] = static_cast<int>(sequence_label(data, chunk[i]));
        std::vector<Tensor> logits = model.forward(x, Mode::Eval, ctx);
        total_loss += mtcl_loss(logits, build_onehot(labels, mcfg.n_classes)).item() *
                      static_cast<double>(chunk.size());
        std::vector<int> preds = predict_stages(logits);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            out.labels.push_back(stage_from_index(labels[i]));
            out.predictions.push_back(stage_from_index(preds[i]));
        }
    }
    out.cm = confusion(out.predictions, out.labels);
    out.mean_loss = total_loss / static_cast<double>(refs.size());
    return out;
}

}  // namespace sleepyco
