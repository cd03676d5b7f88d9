#pragma once

#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "sleepyco/augment.hpp"
#include "sleepyco/checkpoint.hpp"
#include "sleepyco/classifier.hpp"
#include "sleepyco/contrastive.hpp"
#include "sleepyco/metrics.hpp"
#include "sleepyco/signal.hpp"

namespace sleepyco {

struct TrainConfig {
    double eta = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
    int batch_crl = 1024;
    int batch_mtcl = 64;
    int psi1 = 50;   // validation period during pretraining (iterations)
    int psi2 = 500;  // validation period during fine-tuning
    int phi = 20;    // early-stopping patience
    int L = 10;
    std::uint64_t seed = 1;
    int max_iters_crl = 0;   // 0 = run until early stopping fires
    int max_iters_mtcl = 0;
    int val_max_items = 0;   // 0 = score the whole validation split
    std::string mtcl_bn = "eval";  // frozen batch-norm statistics source
    PadHead pad_head = PadHead::Repeat;

    void validate() const;
};

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Eq.-13 objective: cross entropy summed over the per-level logits, averaged
// over the batch. `onehot` is [B, N_c].
Tensor mtcl_loss(const std::vector<Tensor>& per_level_logits, const Tensor& onehot);

// ---------------------------------------------------------------------------
// early stopping
// ---------------------------------------------------------------------------

struct EarlyStopState {
    double best_val_loss = std::numeric_limits<double>::infinity();
    int p = 0;                // consecutive non-improvements
    int best_index = -1;      // validation index of the stored best
    int n_validations = 0;
};

struct EarlyStopDecision {
    bool improved = false;
    bool stop = false;
};

// Strict improvement stores and resets the counter; otherwise the counter
// increments, stopping once p exceeds phi.
EarlyStopDecision early_stop_update(EarlyStopState& state, double val_loss,
                                    int phi);

// ---------------------------------------------------------------------------
// state dicts
// ---------------------------------------------------------------------------

Checkpoint make_state_dict(std::vector<Parameter*>& params,
                           std::vector<BufferRef>& buffers);

// Loads by name with shape verification; every target must be found and every
// non-ignored checkpoint entry must be consumed. Mismatches are reported as a
// field-level diff.
void load_state_dict(const Checkpoint& ckpt, std::vector<Parameter*>& params,
                     std::vector<BufferRef>& buffers,
                     const std::vector<std::string>& ignore_prefixes = {});

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

// Full scoring model: frozen-able backbone plus pyramid classifier.
class SleepModel {
public:
    Backbone backbone;
    SleepClassifier classifier;

    SleepModel(const ModelConfig& mcfg, const BackboneConfig& bcfg,
               std::uint64_t seed);
    SleepModel(const ModelConfig& mcfg, const BackboneConfig& bcfg, RngStream rng);

    std::vector<Tensor> forward(const Tensor& x, Mode backbone_mode,
                                const ForwardCtx& ctx);

    void params(std::vector<Parameter*>& out);
    void buffers(std::vector<BufferRef>& out);
    Checkpoint state_dict();
};

// ---------------------------------------------------------------------------
// logging
// ---------------------------------------------------------------------------

class TrainLog {
public:
    explicit TrainLog(const std::string& path);
    void row(long iteration, const std::string& split, double loss, double accuracy);

private:
    std::ofstream file_;
};

// ---------------------------------------------------------------------------
// training runs
// ---------------------------------------------------------------------------

struct TrainResult {
    Checkpoint best_checkpoint;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<double> val_losses;
    int best_val_index = -1;
    long iterations = 0;
    long zero_positive_batches = 0;  // supcon batches containing positive-less samples
};

// Contrastive pretraining over single augmented epochs; returns the
// lowest-validation-loss backbone (+projector) state.
TrainResult run_crl(const DatasetView& train, const DatasetView& val,
                    const ModelConfig& mcfg, const BackboneConfig& bcfg,
                    const TrainConfig& tcfg, const AugmentationConfig& aug,
                    TrainLog* log = nullptr);

// Temporal-context fine-tuning on L-epoch sequences with the restored
// backbone frozen; returns the lowest-validation-loss full-model state.
TrainResult run_mtcl(const DatasetView& train, const DatasetView& val,
                     const Checkpoint& crl_checkpoint, const ModelConfig& mcfg,
                     const BackboneConfig& bcfg, const TrainConfig& tcfg,
                     TrainLog* log = nullptr);

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    ConfusionMatrix cm;
    std::vector<SleepStage> labels;
    std::vector<SleepStage> predictions;
    double mean_loss = 0.0;
};

EvalResult evaluate_model(SleepModel& model, const DatasetView& data,
                          const ModelConfig& mcfg, const TrainConfig& tcfg);

// Assembles [B, 1, 3000*L] input for a set of sequence refs.
Tensor build_sequence_batch(const DatasetView& view,
                            const std::vector<SequenceRef>& refs, int L);
Tensor build_onehot(const std::vector<int>& labels, int n_classes);

}  // namespace sleepyco
