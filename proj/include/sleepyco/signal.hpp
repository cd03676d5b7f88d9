#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sleepyco {

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

enum class SleepStage { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };
inline constexpr int kNumStages = 5;

const char* stage_name(SleepStage s);
SleepStage stage_from_index(int i);

// Annotation vocabulary as found in R&K / AASM scored recordings.
enum class RawStage { W, N1, N2, N3, N4, REM, Movement, Unknown };
RawStage parse_raw_stage(const std::string& text);

// N4 merges into N3; MOVEMENT/UNKNOWN epochs are masked out.
struct LabelMapResult {
    std::vector<SleepStage> stages;  // kept epochs only
    std::vector<bool> keep;          // per input epoch
};
LabelMapResult map_labels(const std::vector<RawStage>& raw);
LabelMapResult map_labels(const std::vector<std::string>& raw);

// ---------------------------------------------------------------------------
// recordings
// ---------------------------------------------------------------------------

struct Recording {
    std::string subject_id;
    std::vector<double> samples;  // microvolts
    int sample_rate = 0;          // Hz
    std::string channel;
};

// Minimal EDF reader: fixed-offset ASCII header (256 bytes global + 256 per
// signal), 16-bit little-endian samples scaled to physical units.
Recording read_edf(const std::vector<unsigned char>& bytes,
                   const std::string& channel);

// Anti-alias low-pass (cutoff below 50 Hz) followed by integer decimation.
// Only integer ratios are supported.
Recording resample_100hz(const Recording& rec);

// ---------------------------------------------------------------------------
// epochs and sequences
// ---------------------------------------------------------------------------

inline constexpr int kEpochSamples = 3000;  // 30 s at 100 Hz

struct PreparedSubject {
    std::string id;
    std::vector<std::vector<double>> epochs;  // each kEpochSamples long
    std::vector<SleepStage> stages;
};

struct Dataset {
    std::vector<PreparedSubject> subjects;
    const PreparedSubject& subject(int i) const { return subjects[i]; }
};

// Keep range after removing boundary wake beyond `cap` epochs on each side.
// All-wake recordings are rejected.
std::pair<std::size_t, std::size_t> trim_wake_range(
    const std::vector<SleepStage>& stages, std::size_t cap = 60);
void trim_wake(PreparedSubject& subject, std::size_t cap = 60);

enum class PadHead { Repeat, Skip };

struct EpochSequence {
    std::vector<double> signal;  // 3000*L samples
    SleepStage label;            // stage of the final (target) epoch
    int L = 1;
    std::string subject_id;
};

// Epoch indices feeding the window that targets epoch `target` (0-based):
// [target-L+1 .. target] clamped to 0, i.e. the head is padded by repeating
// the first epoch.
std::vector<int> window_epoch_indices(int target, int L);

std::vector<EpochSequence> make_sequences(
    const std::vector<std::vector<double>>& epochs,
    const std::vector<SleepStage>& stages, int L, PadHead pad = PadHead::Repeat);

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

struct FoldSplit {
    int fold_index = 0;
    int k = 0;
    std::vector<std::string> train, validation, test;
};

// Test subjects rotate block-wise over sorted ids; validation subjects are a
// seeded shuffle of the remainder.
std::vector<FoldSplit> kfold_split(std::vector<std::string> subject_ids, int k,
                                   int n_val, std::uint64_t seed);

// ---------------------------------------------------------------------------
// training views and refs
// ---------------------------------------------------------------------------

struct DatasetView {
    const Dataset* base = nullptr;
    std::vector<int> subjects;
};
DatasetView view_of(const Dataset& ds, const std::vector<std::string>& ids);
DatasetView view_all(const Dataset& ds);

struct SampleRef {
    int subject = 0;
    int epoch = 0;
};
struct SequenceRef {
    int subject = 0;
    int target = 0;
};

std::vector<SampleRef> all_epochs(const DatasetView& view);
std::vector<SequenceRef> all_sequences(const DatasetView& view, int L, PadHead pad);

// Copies the 3000*L window for `ref` into `out`.
void materialize_sequence(const DatasetView& view, SequenceRef ref, int L,
                          double* out);
SleepStage sequence_label(const DatasetView& view, SequenceRef ref);

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

// Band-coded stages: per-stage sinusoid mixtures following the AASM frequency
// characteristics, stitched into a plausible hypnogram cycle.
struct SynthConfig {
    int n_subjects = 12;
    int epochs_per_subject = 300;
    double noise_sigma = 4.0;  // microvolts
    int sample_rate = 100;
};

PreparedSubject synth_subject(std::uint64_t seed, const std::string& id,
                              const SynthConfig& cfg);
Dataset synth_dataset(std::uint64_t seed, const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// on-disk dataset layout: <root>/<subject>/signal.{raw|edf} + labels.csv
// ---------------------------------------------------------------------------

void write_raw_signal(const std::string& path, const std::vector<double>& samples,
                      std::uint32_t sample_rate);
Recording read_raw_signal(const std::string& path, const std::string& subject_id);

void write_labels_csv(const std::string& path,
                      const std::vector<std::string>& stages);
std::vector<std::string> read_labels_csv(const std::string& path);

struct DatasetLoadOptions {
    std::string format = "auto";  // auto | raw | edf
    std::string channel;          // for EDF
    std::size_t wake_trim_cap = 60;
};

Dataset load_dataset(const std::string& root, const DatasetLoadOptions& opts);
void write_synth_dataset(const std::string& root, std::uint64_t seed,
                         const SynthConfig& cfg);

}  // namespace sleepyco
