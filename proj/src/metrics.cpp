#include "sleepyco/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace sleepyco {

namespace fs = std::filesystem;

long ConfusionMatrix::total() const {
    long n = 0;
    for (const auto& row : counts)
        for (long v : row) n += v;
    return n;
}

long ConfusionMatrix::row_sum(int r) const {
    long n = 0;
    for (long v : counts[r]) n += v;
    return n;
}

long ConfusionMatrix::col_sum(int c) const {
    long n = 0;
    for (const auto& row : counts) n += row[c];
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (int r = 0; r < kNumStages; ++r)
        for (int c = 0; c < kNumStages; ++c) counts[r][c] += other.counts[r][c];
    return *this;
}

ConfusionMatrix confusion(const std::vector<SleepStage>& predictions,
                          const std::vector<SleepStage>& labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("confusion: " + std::to_string(predictions.size()) +
                                    " predictions vs " +
                                    std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
    return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    const long n = cm.total();
    if (n == 0) throw std::invalid_argument("compute_metrics: empty confusion matrix");
    const double nd = static_cast<double>(n);

    MetricsReport r;
    double trace = 0.0;
    for (int j = 0; j < kNumStages; ++j) trace += static_cast<double>(cm.counts[j][j]);
    r.acc = trace / nd;

    double f1_sum = 0.0;
    for (int j = 0; j < kNumStages; ++j) {
        const double tp = static_cast<double>(cm.counts[j][j]);
        const double col = static_cast<double>(cm.col_sum(j));  // tp + fp
        const double row = static_cast<double>(cm.row_sum(j));  // tp + fn
        const double pr = col > 0.0 ? tp / col : 0.0;
        const double re = row > 0.0 ? tp / row : 0.0;
        const double f1 = (pr + re) > 0.0 ? 2.0 * pr * re / (pr + re) : 0.0;
        r.per_class_precision[j] = pr;
        r.per_class_recall[j] = re;
        r.per_class_f1[j] = f1;
        f1_sum += f1;
    }
    r.mf1 = f1_sum / kNumStages;

    double pe = 0.0;
    for (int j = 0; j < kNumStages; ++j)
        pe += static_cast<double>(cm.row_sum(j)) * static_cast<double>(cm.col_sum(j));
    pe /= nd * nd;
    r.pe = pe;
    // A degenerate pe of 1 means a constant predictor (all mass in one cell).
    r.kappa = pe < 1.0 ? (r.acc - pe) / (1.0 - pe) : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// report files
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "";
    for (int c = 0; c < kNumStages; ++c)
        f << "," << stage_name(static_cast<SleepStage>(c));
    f << "\n";
    for (int r = 0; r < kNumStages; ++r) {
        f << stage_name(static_cast<SleepStage>(r));
        for (int c = 0; c < kNumStages; ++c) f << "," << cm.counts[r][c];
        f << "\n";
    }
}

void write_confusion_svg(const ConfusionMatrix& cm, const std::string& path) {
    const int cell = 72, margin = 60;
    const int w = margin + kNumStages * cell + 20;
    const int h = margin + kNumStages * cell + 20;
    long mx = 1;
    for (const auto& row : cm.counts)
        for (long v : row) mx = std::max(mx, v);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
      << h << "\">\n";
    f << "<text x=\"8\" y=\"20\" font-size=\"13\">actual \\ predicted</text>\n";
    for (int c = 0; c < kNumStages; ++c)
        f << "<text x=\"" << margin + c * cell + cell / 2 - 10 << "\" y=\""
          << margin - 8 << "\" font-size=\"13\">"
          << stage_name(static_cast<SleepStage>(c)) << "</text>\n";
    for (int r = 0; r < kNumStages; ++r) {
        f << "<text x=\"12\" y=\"" << margin + r * cell + cell / 2 + 4
          << "\" font-size=\"13\">" << stage_name(static_cast<SleepStage>(r))
          << "</text>\n";
        for (int c = 0; c < kNumStages; ++c) {
            const double frac =
                static_cast<double>(cm.counts[r][c]) / static_cast<double>(mx);
            const int shade = 255 - static_cast<int>(std::lround(frac * 200.0));
            f << "<rect x=\"" << margin + c * cell << "\" y=\"" << margin + r * cell
              << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
              << shade << "," << shade << ",255)\" stroke=\"black\"/>\n";
            f << "<text x=\"" << margin + c * cell + 6 << "\" y=\""
              << margin + r * cell + cell / 2 + 4 << "\" font-size=\"12\">"
              << cm.counts[r][c] << "</text>\n";
        }
    }
    f << "</svg>\n";
}

void write_hypnogram_svg(const std::vector<SleepStage>& labels,
                         const std::vector<SleepStage>& preds,
                         const std::string& path) {
    const int w = 960, h = 260, left = 50, top = 24;
    const int plot_w = w - left - 10;
    const int row_h = 36;
    const std::size_t n = labels.size();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
      << h << "\">\n";
    for (int s = 0; s < kNumStages; ++s)
        f << "<text x=\"6\" y=\"" << top + s * row_h + 4 << "\" font-size=\"12\">"
          << stage_name(static_cast<SleepStage>(s)) << "</text>\n";
    auto emit = [&](const std::vector<SleepStage>& seq, const char* color) {
        if (seq.empty()) return;
        f << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const double x =
                left + static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n - 1, 1)) * plot_w;
            const int y = top + static_cast<int>(seq[i]) * row_h;
            if (i) {
                // step plot: horizontal then vertical
                const double xp =
                    left + static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n - 1, 1)) * plot_w;
                const int yp = top + static_cast<int>(seq[i - 1]) * row_h;
                f << fmt(xp) << "," << yp << " ";
            }
            f << fmt(x) << "," << y << " ";
        }
        f << "\"/>\n";
    };
    emit(labels, "black");
    emit(preds, "crimson");
    f << "<text x=\"" << left << "\" y=\"" << h - 10
      << "\" font-size=\"12\">black: annotated, crimson: predicted (epoch index "
         "left to right)</text>\n";
    f << "</svg>\n";
}

nlohmann::json metrics_to_json(const MetricsReport& m) {
    nlohmann::json j;
    j["acc"] = m.acc;
    j["mf1"] = m.mf1;
    j["kappa"] = m.kappa;
    j["pe"] = m.pe;
    for (int s = 0; s < kNumStages; ++s) {
        const std::string name = stage_name(static_cast<SleepStage>(s));
        j["f1"][name] = m.per_class_f1[s];
        j["precision"][name] = m.per_class_precision[s];
        j["recall"][name] = m.per_class_recall[s];
    }
    return j;
}

}  // namespace

void render_report(const std::vector<FoldResult>& folds, const std::string& out_dir) {
    if (folds.empty()) throw std::invalid_argument("render_report: no fold results");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw std::runtime_error("render_report: cannot create directory " + out_dir);

    ConfusionMatrix pooled;
    std::ofstream csv(fs::path(out_dir) / "metrics.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("render_report: cannot write metrics.csv");
    csv << "fold,acc,mf1,kappa,f1_W,f1_N1,f1_N2,f1_N3,f1_REM\n";
    nlohmann::json jfolds = nlohmann::json::array();
    auto emit_row = [&](const std::string& tag, const MetricsReport& m) {
        csv << tag << "," << fmt(m.acc) << "," << fmt(m.mf1) << "," << fmt(m.kappa);
        for (int s = 0; s < kNumStages; ++s) csv << "," << fmt(m.per_class_f1[s]);
        csv << "\n";
    };
    for (const FoldResult& fr : folds) {
        pooled += fr.cm;
        emit_row(std::to_string(fr.fold_index), fr.metrics);
        nlohmann::json j = metrics_to_json(fr.metrics);
        j["fold"] = fr.fold_index;
        jfolds.push_back(j);
        const std::string suffix = "_fold" + std::to_string(fr.fold_index);
        write_confusion_csv(fr.cm,
                            (fs::path(out_dir) / ("confusion" + suffix + ".csv")).string());
        write_confusion_svg(fr.cm,
                            (fs::path(out_dir) / ("confusion" + suffix + ".svg")).string());
        write_hypnogram_svg(
            fr.labels, fr.predictions,
            (fs::path(out_dir) / ("hypnogram" + suffix + ".svg")).string());
    }
    const MetricsReport agg = compute_metrics(pooled);
    emit_row("pooled", agg);
    write_confusion_csv(pooled, (fs::path(out_dir) / "confusion.csv").string());
    write_confusion_svg(pooled, (fs::path(out_dir) / "confusion.svg").string());

    nlohmann::json top;
    top["folds"] = jfolds;
    top["pooled"] = metrics_to_json(agg);
    std::ofstream js(fs::path(out_dir) / "metrics.json", std::ios::trunc);
    js << top.dump(2) << "\n";
}

std::vector<std::pair<std::string, MetricsReport>> parse_metrics_csv(
    const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) ||
        line != "fold,acc,mf1,kappa,f1_W,f1_N1,f1_N2,f1_N3,f1_REM")
        throw std::runtime_error("metrics.csv: unexpected header");
    std::vector<std::pair<std::string, MetricsReport>> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 9)
            throw std::runtime_error("metrics.csv: malformed row: " + line);
        MetricsReport m;
        m.acc = std::stod(cells[1]);
        m.mf1 = std::stod(cells[2]);
        m.kappa = std::stod(cells[3]);
        for (int s = 0; s < kNumStages; ++s) m.per_class_f1[s] = std::stod(cells[4 + s]);
        out.emplace_back(cells[0], m);
    }
    return out;
}

}  // namespace sleepyco
