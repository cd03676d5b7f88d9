#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "sleepyco/rng.hpp"
#include "sleepyco/signal.hpp"

using namespace sleepyco;
namespace fs = std::filesystem;

namespace {

// single-bin discrete Fourier magnitude (amplitude of a pure tone)
double dft_amplitude(const std::vector<double>& x, double freq_hz, double fs) {
    double re = 0.0, im = 0.0;
    const double w = 2.0 * M_PI * freq_hz / fs;
    for (std::size_t t = 0; t < x.size(); ++t) {
        re += x[t] * std::cos(w * static_cast<double>(t));
        im -= x[t] * std::sin(w * static_cast<double>(t));
    }
    const double n = static_cast<double>(x.size());
    return 2.0 * std::sqrt(re * re + im * im) / n;
}

// sums squared magnitudes over the exact DFT bins inside [lo, hi]
double band_power(const std::vector<double>& x, double lo, double hi, double fs) {
    const double n = static_cast<double>(x.size());
    const long k_lo = static_cast<long>(std::ceil(lo * n / fs));
    const long k_hi = static_cast<long>(std::floor(hi * n / fs));
    double p = 0.0;
    for (long k = k_lo; k <= k_hi; ++k) {
        double re = 0.0, im = 0.0;
        const double w = 2.0 * M_PI * static_cast<double>(k) / n;
        for (std::size_t t = 0; t < x.size(); ++t) {
            re += x[t] * std::cos(w * static_cast<double>(t));
            im -= x[t] * std::sin(w * static_cast<double>(t));
        }
        p += re * re + im * im;
    }
    return p;
}

void put_field(std::vector<unsigned char>& buf, std::size_t off, std::size_t width,
               const std::string& text) {
    for (std::size_t i = 0; i < width; ++i)
        buf[off + i] = i < text.size() ? static_cast<unsigned char>(text[i]) : ' ';
}

struct EdfSignalSpec {
    std::string label;
    double phys_min, phys_max;
    double dig_min, dig_max;
    std::vector<std::int16_t> samples_per_record;
};

std::vector<unsigned char> build_edf(const std::vector<EdfSignalSpec>& sigs,
                                     int n_records, const std::string& duration) {
    const int ns = static_cast<int>(sigs.size());
    std::size_t record_bytes = 0;
    for (const auto& s : sigs) record_bytes += s.samples_per_record.size() * 2;
    const std::size_t header = 256 + 256 * static_cast<std::size_t>(ns);
    std::vector<unsigned char> buf(header + record_bytes * n_records, ' ');

    put_field(buf, 0, 8, "0");
    put_field(buf, 184, 8, std::to_string(header));
    put_field(buf, 236, 8, std::to_string(n_records));
    put_field(buf, 244, 8, duration);
    put_field(buf, 252, 4, std::to_string(ns) + "   ");

    auto fmtnum = [](double v) {
        std::string s = std::to_string(v);
        return s.substr(0, 8);
    };
    for (int i = 0; i < ns; ++i) {
        const auto& s = sigs[i];
        put_field(buf, 256 + 0 * ns + 16 * i, 16, s.label);
        put_field(buf, 256 + 104 * ns + 8 * i, 8, fmtnum(s.phys_min));
        put_field(buf, 256 + 112 * ns + 8 * i, 8, fmtnum(s.phys_max));
        put_field(buf, 256 + 120 * ns + 8 * i, 8, fmtnum(s.dig_min));
        put_field(buf, 256 + 128 * ns + 8 * i, 8, fmtnum(s.dig_max));
        put_field(buf, 256 + 216 * ns + 8 * i, 8,
                  std::to_string(s.samples_per_record.size()));
    }
    std::size_t o = header;
    for (int r = 0; r < n_records; ++r)
        for (const auto& s : sigs)
            for (std::int16_t v : s.samples_per_record) {
                buf[o++] = static_cast<unsigned char>(v & 0xff);
                buf[o++] = static_cast<unsigned char>((v >> 8) & 0xff);
            }
    return buf;
}

std::vector<double> make_epoch(double value) {
    return std::vector<double>(kEpochSamples, value);
}

}  // namespace

TEST_CASE("read_edf applies the physical/digital scaling") {
    EdfSignalSpec sig{"EEG Fpz-Cz", -100, 100, -10, 10, {1, -5, 10, 0}};
    auto bytes = build_edf({sig}, 1, "1");
    Recording rec = read_edf(bytes, "EEG Fpz-Cz");
    REQUIRE(rec.samples.size() == 4);
    CHECK(rec.samples[0] == doctest::Approx(10.0));
    CHECK(rec.samples[1] == doctest::Approx(-50.0));
    CHECK(rec.samples[2] == doctest::Approx(100.0));
    CHECK(rec.samples[3] == doctest::Approx(0.0));
    CHECK(rec.sample_rate == 4);
}

TEST_CASE("read_edf parses multiple signals and selects by label") {
    EdfSignalSpec a{"EEG A", -100, 100, -100, 100, {1, 2}};
    EdfSignalSpec b{"EEG B", -100, 100, -100, 100, {7, 8}};
    auto bytes = build_edf({a, b}, 2, "1");
    Recording rec = read_edf(bytes, "EEG B");
    REQUIRE(rec.samples.size() == 4);
    CHECK(rec.samples[0] == doctest::Approx(7.0));
    CHECK(rec.samples[2] == doctest::Approx(7.0));
}

TEST_CASE("read_edf error paths are distinct") {
    EdfSignalSpec sig{"C", -1, 1, -10, 10, {0}};
    auto bytes = build_edf({sig}, 1, "1");

    CHECK_THROWS_WITH_AS(
        read_edf(std::vector<unsigned char>(bytes.begin(), bytes.begin() + 100), "C"),
        doctest::Contains("truncated"), std::runtime_error);

    CHECK_THROWS_WITH_AS(read_edf(bytes, "Z"),
                         doctest::Contains("available channels"),
                         std::runtime_error);

    auto corrupt = bytes;
    put_field(corrupt, 252, 4, "abcd");  // number of signals
    CHECK_THROWS_WITH_AS(read_edf(corrupt, "C"), doctest::Contains("non-numeric"),
                         std::runtime_error);
}

TEST_CASE("resample_100hz is identity at 100 Hz and rejects non-integer ratios") {
    Recording rec;
    rec.sample_rate = 100;
    rec.samples = {1, 2, 3};
    CHECK(resample_100hz(rec).samples == rec.samples);
    rec.sample_rate = 150;
    CHECK_THROWS_AS(resample_100hz(rec), std::invalid_argument);
    rec.sample_rate = 50;
    CHECK_THROWS_AS(resample_100hz(rec), std::invalid_argument);
}

TEST_CASE("resample_100hz keeps in-band tones and kills fold-back") {
    const int fs = 200;
    const int n = fs * 30;
    Recording in_band;
    in_band.sample_rate = fs;
    for (int t = 0; t < n; ++t)
        in_band.samples.push_back(std::sin(2.0 * M_PI * 10.0 * t / fs));
    Recording out = resample_100hz(in_band);
    CHECK(out.sample_rate == 100);
    CHECK(out.samples.size() == in_band.samples.size() / 2);
    // spectral peak stays at 10 Hz
    double best_f = 0.0, best_a = 0.0;
    std::vector<double> mid(out.samples.begin() + 200, out.samples.end() - 200);
    for (double f = 1.0; f < 49.5; f += 1.0) {
        const double a = dft_amplitude(mid, f, 100.0);
        if (a > best_a) {
            best_a = a;
            best_f = f;
        }
    }
    CHECK(best_f == doctest::Approx(10.0));
    CHECK(best_a == doctest::Approx(1.0).epsilon(0.05));

    Recording alias;
    alias.sample_rate = fs;
    for (int t = 0; t < n; ++t)
        alias.samples.push_back(std::sin(2.0 * M_PI * 70.0 * t / fs));
    Recording out2 = resample_100hz(alias);
    // 70 Hz folds to 30 Hz after decimation by 2; it must be attenuated
    std::vector<double> mid2(out2.samples.begin() + 200, out2.samples.end() - 200);
    const double residual = dft_amplitude(mid2, 30.0, 100.0);
    CHECK(20.0 * std::log10(1.0 / std::max(residual, 1e-300)) >= 20.0);
}

TEST_CASE("map_labels merges N4 and drops MOVEMENT/UNKNOWN") {
    LabelMapResult r = map_labels(std::vector<std::string>{
        "W", "N4", "MOVEMENT", "N3", "REM", "UNKNOWN", "N1", "N2"});
    CHECK(r.stages == std::vector<SleepStage>{SleepStage::W, SleepStage::N3,
                                              SleepStage::N3, SleepStage::REM,
                                              SleepStage::N1, SleepStage::N2});
    CHECK(r.keep == std::vector<bool>{true, true, false, true, true, false, true,
                                      true});
    CHECK_THROWS_AS(map_labels(std::vector<std::string>{"SLEEPWALK"}),
                    std::invalid_argument);
}

TEST_CASE("trim_wake caps boundary wake at 60 epochs") {
    auto wake_run = [](int n) {
        return std::vector<SleepStage>(static_cast<std::size_t>(n), SleepStage::W);
    };
    std::vector<SleepStage> stages = wake_run(100);
    stages.push_back(SleepStage::N1);
    stages.push_back(SleepStage::N2);
    auto [b, e] = trim_wake_range(stages);
    CHECK(b == 40);  // 60 leading W retained
    CHECK(e == stages.size());

    std::vector<SleepStage> few = wake_run(10);
    few.push_back(SleepStage::N2);
    auto [b2, e2] = trim_wake_range(few);
    CHECK(b2 == 0);  // under the cap: everything retained
    CHECK(e2 == few.size());

    std::vector<SleepStage> trailing{SleepStage::N2};
    auto tail = wake_run(200);
    trailing.insert(trailing.end(), tail.begin(), tail.end());
    auto [b3, e3] = trim_wake_range(trailing);
    CHECK(b3 == 0);
    CHECK(e3 == 61);  // target epoch + 60 trailing W; last 140 removed

    CHECK_THROWS_AS(trim_wake_range(wake_run(30)), std::runtime_error);

    // never drops a non-wake epoch, never leaves more than 60 boundary W
    RngStream rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<SleepStage> s;
        const int lead = static_cast<int>(rng.uniform_int(0, 150));
        const int sleep = static_cast<int>(rng.uniform_int(1, 40));
        const int trail = static_cast<int>(rng.uniform_int(0, 150));
        for (int i = 0; i < lead; ++i) s.push_back(SleepStage::W);
        for (int i = 0; i < sleep; ++i) s.push_back(SleepStage::N2);
        for (int i = 0; i < trail; ++i) s.push_back(SleepStage::W);
        auto [lo, hi] = trim_wake_range(s);
        CHECK(lo <= static_cast<std::size_t>(lead));
        CHECK(hi >= static_cast<std::size_t>(lead + sleep));
        CHECK(static_cast<std::size_t>(lead) - lo <= 60);
        CHECK(hi - static_cast<std::size_t>(lead + sleep) <= 60);
    }
}

TEST_CASE("make_sequences windows and pads the head") {
    std::vector<std::vector<double>> epochs;
    std::vector<SleepStage> stages;
    for (int i = 0; i < 12; ++i) {
        epochs.push_back(make_epoch(i));
        stages.push_back(static_cast<SleepStage>(i % kNumStages));
    }
    auto seqs = make_sequences(epochs, stages, 10);
    REQUIRE(seqs.size() == 12);
    const EpochSequence& last = seqs.back();
    CHECK(last.signal.size() == 30000);
    CHECK(last.signal.front() == 2.0);  // window for target 12 spans epochs 3..12
    CHECK(last.signal.back() == 11.0);
    CHECK(last.label == stages.back());

    const EpochSequence& first = seqs.front();
    for (int j = 0; j < 10; ++j)
        CHECK(first.signal[static_cast<std::size_t>(j) * kEpochSamples] == 0.0);

    auto singles = make_sequences(epochs, stages, 1);
    CHECK(singles.size() == 12);
    CHECK(singles[3].signal.size() == 3000);

    auto skipped = make_sequences(epochs, stages, 10, PadHead::Skip);
    CHECK(skipped.size() == 3);  // only targets with a full history

    CHECK_THROWS_AS(make_sequences(epochs, stages, 0), std::invalid_argument);
}

TEST_CASE("kfold_split rotates test subjects and stays subject-disjoint") {
    std::vector<std::string> ids;
    for (int i = 0; i < 79; ++i) ids.push_back("subj" + std::to_string(1000 + i));
    auto folds = kfold_split(ids, 10, 7, 42);
    REQUIRE(folds.size() == 10);

    std::multiset<std::string> all_test;
    for (const auto& f : folds) {
        CHECK((f.test.size() == 7 || f.test.size() == 8));
        CHECK(f.validation.size() == 7);
        CHECK(f.train.size() + f.validation.size() + f.test.size() == ids.size());
        std::set<std::string> seen;
        for (const auto& id : f.train) CHECK(seen.insert(id).second);
        for (const auto& id : f.validation) CHECK(seen.insert(id).second);
        for (const auto& id : f.test) CHECK(seen.insert(id).second);
        all_test.insert(f.test.begin(), f.test.end());
    }
    // test sets partition the subject pool
    CHECK(all_test.size() == ids.size());
    CHECK(std::set<std::string>(all_test.begin(), all_test.end()).size() ==
          ids.size());

    auto again = kfold_split(ids, 10, 7, 42);
    for (std::size_t i = 0; i < folds.size(); ++i) {
        CHECK(folds[i].train == again[i].train);
        CHECK(folds[i].validation == again[i].validation);
        CHECK(folds[i].test == again[i].test);
    }

    CHECK_THROWS_AS(kfold_split(ids, 1, 7, 0), std::invalid_argument);
    std::vector<std::string> tiny{"a", "b", "c"};
    CHECK_THROWS_AS(kfold_split(tiny, 2, 2, 0), std::invalid_argument);
}

TEST_CASE("synthetic stages carry their frequency signatures") {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.epochs_per_subject = 120;
    Dataset ds = synth_dataset(7, cfg);
    REQUIRE(ds.subjects.size() == 2);

    Dataset again = synth_dataset(7, cfg);
    CHECK(ds.subjects[0].epochs == again.subjects[0].epochs);  // bit-identical
    CHECK(ds.subjects[0].stages == again.subjects[0].stages);

    std::set<SleepStage> seen;
    int checked_n3 = 0, checked_w = 0;
    for (const auto& sub : ds.subjects)
        for (std::size_t e = 0; e < sub.epochs.size(); ++e) {
            seen.insert(sub.stages[e]);
            if (sub.stages[e] == SleepStage::N3 && checked_n3 < 10) {
                CHECK(band_power(sub.epochs[e], 0.5, 2.0, 100.0) >
                      band_power(sub.epochs[e], 8.0, 13.0, 100.0));
                ++checked_n3;
            }
            if (sub.stages[e] == SleepStage::W && checked_w < 10) {
                CHECK(band_power(sub.epochs[e], 8.0, 13.0, 100.0) >
                      band_power(sub.epochs[e], 0.5, 2.0, 100.0));
                ++checked_w;
            }
        }
    CHECK(seen.size() == 5);
    CHECK(checked_n3 > 0);
    CHECK(checked_w > 0);
}

TEST_CASE("dataset directory round trip") {
    const fs::path root = fs::temp_directory_path() / "sleepyco_ds_test";
    fs::remove_all(root);
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.epochs_per_subject = 90;
    write_synth_dataset(root.string(), 11, cfg);

    CHECK(fs::exists(root / "S00" / "signal.raw"));
    CHECK(fs::exists(root / "S00" / "labels.csv"));

    DatasetLoadOptions opts;
    Dataset ds = load_dataset(root.string(), opts);
    REQUIRE(ds.subjects.size() == 2);
    CHECK(ds.subjects[0].id == "S00");
    for (const auto& sub : ds.subjects) {
        CHECK(!sub.epochs.empty());
        CHECK(sub.epochs.size() == sub.stages.size());
        for (const auto& ep : sub.epochs) CHECK(ep.size() == kEpochSamples);
    }

    // every materialized window is exactly 3000*L samples
    DatasetView view = view_all(ds);
    auto refs = all_sequences(view, 4, PadHead::Repeat);
    std::vector<double> buf(4 * kEpochSamples);
    materialize_sequence(view, refs.front(), 4, buf.data());
    CHECK(buf.size() == 12000);

    auto labels = read_labels_csv((root / "S00" / "labels.csv").string());
    CHECK(labels.size() == 90);
}
