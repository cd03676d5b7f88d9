#pragma once

#include <array>
#include <string>
#include <vector>

#include "sleepyco/signal.hpp"

namespace sleepyco {

// 5x5 counts, rows = actual class, columns = predicted class.
struct ConfusionMatrix {
    std::array<std::array<long, kNumStages>, kNumStages> counts{};

    void add(SleepStage actual, SleepStage predicted) {
        ++counts[static_cast<int>(actual)][static_cast<int>(predicted)];
    }
    long total() const;
    long row_sum(int r) const;
    long col_sum(int c) const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const std::vector<SleepStage>& predictions,
                          const std::vector<SleepStage>& labels);

struct MetricsReport {
    double acc = 0.0;
    double mf1 = 0.0;
    double kappa = 0.0;
    double pe = 0.0;  // chance agreement
    std::array<double, kNumStages> per_class_f1{};
    std::array<double, kNumStages> per_class_precision{};
    std::array<double, kNumStages> per_class_recall{};
};

// ACC, macro F1, Cohen's kappa and per-class precision/recall/F1. Classes
// with no support and no predictions contribute F1 = 0 to the macro average.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

struct FoldResult {
    int fold_index = 0;
    ConfusionMatrix cm;
    MetricsReport metrics;
    std::vector<SleepStage> labels;       // concatenated test epochs
    std::vector<SleepStage> predictions;  // aligned with labels
};

// Writes metrics.csv / metrics.json, per-fold and pooled confusion CSVs, and
// SVG confusion heatmaps plus predicted-vs-true hypnograms. The aggregate
// pools confusion counts across folds before computing metrics.
void render_report(const std::vector<FoldResult>& folds,
                   const std::string& out_dir);

// metrics.csv round-trip helper (exact: values are printed with 17 significant
// digits).
std::vector<std::pair<std::string, MetricsReport>> parse_metrics_csv(
    const std::string& path);

}  // namespace sleepyco
