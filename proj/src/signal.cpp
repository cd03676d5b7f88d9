#include "sleepyco/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sleepyco/rng.hpp"

namespace sleepyco {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

const char* stage_name(SleepStage s) {
    switch (s) {
        case SleepStage::W: return "W";
        case SleepStage::N1: return "N1";
        case SleepStage::N2: return "N2";
        case SleepStage::N3: return "N3";
        case SleepStage::REM: return "REM";
    }
    throw std::invalid_argument("stage_name: bad stage value");
}

SleepStage stage_from_index(int i) {
    if (i < 0 || i >= kNumStages)
        throw std::invalid_argument("stage_from_index: index out of range: " +
                                    std::to_string(i));
    return static_cast<SleepStage>(i);
}

RawStage parse_raw_stage(const std::string& text) {
    if (text == "W" || text == "WAKE") return RawStage::W;
    if (text == "N1") return RawStage::N1;
    if (text == "N2") return RawStage::N2;
    if (text == "N3") return RawStage::N3;
    if (text == "N4") return RawStage::N4;
    if (text == "REM") return RawStage::REM;
    if (text == "MOVEMENT") return RawStage::Movement;
    if (text == "UNKNOWN") return RawStage::Unknown;
    throw std::invalid_argument("unrecognized sleep-stage label \"" + text + "\"");
}

LabelMapResult map_labels(const std::vector<RawStage>& raw) {
    LabelMapResult out;
    out.keep.reserve(raw.size());
    for (RawStage r : raw) {
        switch (r) {
            case RawStage::W: out.stages.push_back(SleepStage::W); break;
            case RawStage::N1: out.stages.push_back(SleepStage::N1); break;
            case RawStage::N2: out.stages.push_back(SleepStage::N2); break;
            case RawStage::N3:
            case RawStage::N4: out.stages.push_back(SleepStage::N3); break;
            case RawStage::REM: out.stages.push_back(SleepStage::REM); break;
            case RawStage::Movement:
            case RawStage::Unknown:
                out.keep.push_back(false);
                continue;
        }
        out.keep.push_back(true);
    }
    return out;
}

LabelMapResult map_labels(const std::vector<std::string>& raw) {
    std::vector<RawStage> parsed;
    parsed.reserve(raw.size());
    for (const auto& s : raw) parsed.push_back(parse_raw_stage(s));
    return map_labels(parsed);
}

// ---------------------------------------------------------------------------
// EDF
// ---------------------------------------------------------------------------

namespace {

std::string edf_field(const std::vector<unsigned char>& bytes, std::size_t offset,
                      std::size_t width) {
    if (offset + width > bytes.size())
        throw std::runtime_error("EDF: truncated header");
    std::string s(reinterpret_cast<const char*>(bytes.data()) + offset, width);
    const auto first = s.find_first_not_of(' ');
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(' ');
    return s.substr(first, last - first + 1);
}

double edf_number(const std::vector<unsigned char>& bytes, std::size_t offset,
                  std::size_t width, const std::string& what) {
    const std::string s = edf_field(bytes, offset, width);
    if (s.empty())
        throw std::runtime_error("EDF: empty numeric field: " + what);
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("EDF: non-numeric value \"" + s + "\" in field " +
                                 what);
    }
    if (pos != s.size())
        throw std::runtime_error("EDF: non-numeric value \"" + s + "\" in field " +
                                 what);
    return v;
}

}  // namespace

Recording read_edf(const std::vector<unsigned char>& bytes,
                   const std::string& channel) {
    if (bytes.size() < 256) throw std::runtime_error("EDF: truncated header");
    const long n_records_hdr =
        static_cast<long>(edf_number(bytes, 236, 8, "number of data records"));
    const double record_duration =
        edf_number(bytes, 244, 8, "duration of a data record");
    const int ns = static_cast<int>(edf_number(bytes, 252, 4, "number of signals"));
    if (ns <= 0) throw std::runtime_error("EDF: no signals in header");
    const std::size_t header_size = 256 + 256 * static_cast<std::size_t>(ns);
    if (bytes.size() < header_size) throw std::runtime_error("EDF: truncated header");

    auto sig_off = [&](std::size_t block_off, std::size_t width, int i) {
        return 256 + block_off * ns + width * static_cast<std::size_t>(i);
    };
    std::vector<std::string> labels(ns);
    for (int i = 0; i < ns; ++i) labels[i] = edf_field(bytes, sig_off(0, 16, i), 16);

    int target = -1;
    for (int i = 0; i < ns; ++i)
        if (labels[i] == channel) {
            target = i;
            break;
        }
    if (target < 0) {
        std::string avail;
        for (int i = 0; i < ns; ++i) {
            if (i) avail += ", ";
            avail += "\"" + labels[i] + "\"";
        }
        throw std::runtime_error("EDF: channel \"" + channel +
                                 "\" not present; available channels: " + avail);
    }

    // Field block offsets within the signal header region, in bytes per signal:
    // label 16, transducer 80, physical dimension 8, physical min 8,
    // physical max 8, digital min 8, digital max 8, prefiltering 80,
    // samples per record 8, reserved 32.
    const std::size_t off_label = 0;
    const std::size_t off_phys_min = off_label + 16 + 80 + 8;
    const std::size_t off_phys_max = off_phys_min + 8;
    const std::size_t off_dig_min = off_phys_max + 8;
    const std::size_t off_dig_max = off_dig_min + 8;
    const std::size_t off_samples = off_dig_max + 8 + 80;

    const double phys_min =
        edf_number(bytes, sig_off(off_phys_min, 8, target), 8, "physical minimum");
    const double phys_max =
        edf_number(bytes, sig_off(off_phys_max, 8, target), 8, "physical maximum");
    const double dig_min =
        edf_number(bytes, sig_off(off_dig_min, 8, target), 8, "digital minimum");
    const double dig_max =
        edf_number(bytes, sig_off(off_dig_max, 8, target), 8, "digital maximum");
    if (dig_max == dig_min)
        throw std::runtime_error("EDF: digital min equals digital max");

    std::vector<long> samples_per_record(ns);
    std::size_t record_values = 0;
    for (int i = 0; i < ns; ++i) {
        samples_per_record[i] = static_cast<long>(
            edf_number(bytes, sig_off(off_samples, 8, i), 8, "samples per record"));
        if (samples_per_record[i] <= 0)
            throw std::runtime_error("EDF: non-positive samples-per-record");
        record_values += static_cast<std::size_t>(samples_per_record[i]);
    }
    const std::size_t record_bytes = record_values * 2;

    long n_records = n_records_hdr;
    if (n_records < 0)
        n_records = static_cast<long>((bytes.size() - header_size) / record_bytes);
    if (bytes.size() <
        header_size + static_cast<std::size_t>(n_records) * record_bytes)
        throw std::runtime_error("EDF: file shorter than header promises");

    if (record_duration <= 0.0)
        throw std::runtime_error("EDF: non-positive record duration");
    const double rate = samples_per_record[target] / record_duration;
    if (std::abs(rate - std::round(rate)) > 1e-9)
        throw std::runtime_error("EDF: non-integer sample rate");

    const double gain = (phys_max - phys_min) / (dig_max - dig_min);

    Recording rec;
    rec.channel = channel;
    rec.sample_rate = static_cast<int>(std::round(rate));
    rec.samples.reserve(static_cast<std::size_t>(n_records) *
                        static_cast<std::size_t>(samples_per_record[target]));
    std::size_t target_skip = 0;
    for (int i = 0; i < target; ++i)
        target_skip += static_cast<std::size_t>(samples_per_record[i]) * 2;
    for (long r = 0; r < n_records; ++r) {
        const std::size_t base =
            header_size + static_cast<std::size_t>(r) * record_bytes + target_skip;
        for (long sidx = 0; sidx < samples_per_record[target]; ++sidx) {
            const std::size_t o = base + static_cast<std::size_t>(sidx) * 2;
            const std::int16_t d = static_cast<std::int16_t>(
                static_cast<std::uint16_t>(bytes[o]) |
                (static_cast<std::uint16_t>(bytes[o + 1]) << 8));
            rec.samples.push_back((d - dig_min) * gain + phys_min);
        }
    }
    return rec;
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

Recording resample_100hz(const Recording& rec) {
    if (rec.sample_rate <= 0) throw std::invalid_argument("resample: bad rate");
    if (rec.sample_rate == 100) return rec;
    if (rec.sample_rate < 100 || rec.sample_rate % 100 != 0)
        throw std::invalid_argument(
            "resample: only integer decimation to 100 Hz is supported, got " +
            std::to_string(rec.sample_rate) + " Hz");
    const int ratio = rec.sample_rate / 100;
    const double fs = rec.sample_rate;
    const double cutoff = 42.5;  // below the 50 Hz output Nyquist
    const int taps = 24 * ratio + 1;
    const int center = (taps - 1) / 2;

    std::vector<double> h(taps);
    double norm = 0.0;
    for (int n = 0; n < taps; ++n) {
        const double m = n - center;
        const double x = 2.0 * cutoff / fs * m;
        const double sinc = m == 0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
        const double window =
            0.54 - 0.46 * std::cos(2.0 * M_PI * n / (taps - 1));  // Hamming
        h[n] = 2.0 * cutoff / fs * sinc * window;
        norm += h[n];
    }
    for (double& v : h) v /= norm;  // unity DC gain

    const std::size_t T = rec.samples.size();
    const std::size_t To = (T + ratio - 1) / ratio;
    Recording out;
    out.subject_id = rec.subject_id;
    out.channel = rec.channel;
    out.sample_rate = 100;
    out.samples.resize(To);
    for (std::size_t j = 0; j < To; ++j) {
        const long pos = static_cast<long>(j) * ratio + center;
        double acc = 0.0;
        for (int n = 0; n < taps; ++n) {
            const long i = pos - n;
            if (i >= 0 && i < static_cast<long>(T)) acc += h[n] * rec.samples[i];
        }
        out.samples[j] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// trimming / sequences
// ---------------------------------------------------------------------------

std::pair<std::size_t, std::size_t> trim_wake_range(
    const std::vector<SleepStage>& stages, std::size_t cap) {
    std::size_t first_sleep = stages.size();
    for (std::size_t i = 0; i < stages.size(); ++i)
        if (stages[i] != SleepStage::W) {
            first_sleep = i;
            break;
        }
    if (first_sleep == stages.size())
        throw std::runtime_error("trim_wake: recording contains only wake epochs");
    std::size_t last_sleep = 0;
    for (std::size_t i = stages.size(); i-- > 0;)
        if (stages[i] != SleepStage::W) {
            last_sleep = i;
            break;
        }
    const std::size_t begin = first_sleep > cap ? first_sleep - cap : 0;
    const std::size_t end = std::min(stages.size(), last_sleep + 1 + cap);
    return {begin, end};
}

void trim_wake(PreparedSubject& subject, std::size_t cap) {
    auto [b, e] = trim_wake_range(subject.stages, cap);
    if (b == 0 && e == subject.stages.size()) return;
    subject.epochs = {subject.epochs.begin() + static_cast<long>(b),
                      subject.epochs.begin() + static_cast<long>(e)};
    subject.stages = {subject.stages.begin() + static_cast<long>(b),
                      subject.stages.begin() + static_cast<long>(e)};
}

std::vector<int> window_epoch_indices(int target, int L) {
    if (L < 1) throw std::invalid_argument("window_epoch_indices: L must be >= 1");
    std::vector<int> idx(L);
    for (int j = 0; j < L; ++j) idx[j] = std::max(0, target - L + 1 + j);
    return idx;
}

std::vector<EpochSequence> make_sequences(
    const std::vector<std::vector<double>>& epochs,
    const std::vector<SleepStage>& stages, int L, PadHead pad) {
    if (L < 1) throw std::invalid_argument("make_sequences: L must be >= 1");
    if (epochs.size() != stages.size())
        throw std::invalid_argument("make_sequences: epochs/stages length mismatch");
    std::vector<EpochSequence> out;
    const int n = static_cast<int>(epochs.size());
    const int first = pad == PadHead::Repeat ? 0 : L - 1;
    for (int t = first; t < n; ++t) {
        EpochSequence seq;
        seq.L = L;
        seq.label = stages[t];
        seq.signal.reserve(static_cast<std::size_t>(L) * kEpochSamples);
        for (int e : window_epoch_indices(t, L)) {
            const auto& ep = epochs[static_cast<std::size_t>(e)];
            if (ep.size() != kEpochSamples)
                throw std::invalid_argument("make_sequences: epoch is not 3000 samples");
            seq.signal.insert(seq.signal.end(), ep.begin(), ep.end());
        }
        out.push_back(std::move(seq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// k-fold split
// ---------------------------------------------------------------------------

std::vector<FoldSplit> kfold_split(std::vector<std::string> subject_ids, int k,
                                   int n_val, std::uint64_t seed) {
    const int ns = static_cast<int>(subject_ids.size());
    if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
    if (n_val < 1) throw std::invalid_argument("kfold_split: n_val must be >= 1");
    if (k + n_val > ns)
        throw std::invalid_argument("kfold_split: need at least k + n_val subjects (" +
                                    std::to_string(k + n_val) + "), got " +
                                    std::to_string(ns));
    std::sort(subject_ids.begin(), subject_ids.end());

    // Block sizes as even as possible; the first ns%k folds take one extra.
    std::vector<FoldSplit> folds;
    int cursor = 0;
    for (int f = 0; f < k; ++f) {
        const int size = ns / k + (f < ns % k ? 1 : 0);
        FoldSplit fold;
        fold.fold_index = f;
        fold.k = k;
        fold.test.assign(subject_ids.begin() + cursor,
                         subject_ids.begin() + cursor + size);
        cursor += size;

        std::vector<std::string> rest;
        for (const auto& id : subject_ids)
            if (std::find(fold.test.begin(), fold.test.end(), id) == fold.test.end())
                rest.push_back(id);
        if (static_cast<int>(rest.size()) < n_val + 1)
            throw std::invalid_argument(
                "kfold_split: not enough non-test subjects for validation + training");
        RngStream rng = keyed_stream(seed, hash_string("kfold"), f);
        for (std::size_t i = rest.size(); i > 1; --i)
            std::swap(rest[i - 1],
                      rest[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
        fold.validation.assign(rest.begin(), rest.begin() + n_val);
        fold.train.assign(rest.begin() + n_val, rest.end());
        std::sort(fold.validation.begin(), fold.validation.end());
        std::sort(fold.train.begin(), fold.train.end());
        folds.push_back(std::move(fold));
    }
    return folds;
}

// ---------------------------------------------------------------------------
// views / refs
// ---------------------------------------------------------------------------

DatasetView view_of(const Dataset& ds, const std::vector<std::string>& ids) {
    DatasetView v;
    v.base = &ds;
    for (const auto& id : ids) {
        bool found = false;
        for (std::size_t i = 0; i < ds.subjects.size(); ++i)
            if (ds.subjects[i].id == id) {
                v.subjects.push_back(static_cast<int>(i));
                found = true;
                break;
            }
        if (!found)
            throw std::invalid_argument("dataset view: unknown subject \"" + id + "\"");
    }
    return v;
}

DatasetView view_all(const Dataset& ds) {
    DatasetView v;
    v.base = &ds;
    for (std::size_t i = 0; i < ds.subjects.size(); ++i)
        v.subjects.push_back(static_cast<int>(i));
    return v;
}

std::vector<SampleRef> all_epochs(const DatasetView& view) {
    std::vector<SampleRef> refs;
    for (int s : view.subjects) {
        const auto& sub = view.base->subjects[static_cast<std::size_t>(s)];
        for (std::size_t e = 0; e < sub.epochs.size(); ++e)
            refs.push_back({s, static_cast<int>(e)});
    }
    return refs;
}

std::vector<SequenceRef> all_sequences(const DatasetView& view, int L, PadHead pad) {
    std::vector<SequenceRef> refs;
    const int first = pad == PadHead::Repeat ? 0 : L - 1;
    for (int s : view.subjects) {
        const auto& sub = view.base->subjects[static_cast<std::size_t>(s)];
        for (int t = first; t < static_cast<int>(sub.epochs.size()); ++t)
            refs.push_back({s, t});
    }
    return refs;
}

void materialize_sequence(const DatasetView& view, SequenceRef ref, int L,
                          double* out) {
    const auto& sub = view.base->subjects[static_cast<std::size_t>(ref.subject)];
    int j = 0;
    for (int e : window_epoch_indices(ref.target, L)) {
        const auto& ep = sub.epochs[static_cast<std::size_t>(e)];
        std::memcpy(out + static_cast<std::size_t>(j) * kEpochSamples, ep.data(),
                    kEpochSamples * sizeof(double));
        ++j;
    }
}

SleepStage sequence_label(const DatasetView& view, SequenceRef ref) {
    return view.base->subjects[static_cast<std::size_t>(ref.subject)]
        .stages[static_cast<std::size_t>(ref.target)];
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

namespace {

void add_tone(std::vector<double>& x, double freq, double amp, double phase,
              int rate) {
    const double w = 2.0 * M_PI * freq / rate;
    for (std::size_t t = 0; t < x.size(); ++t)
        x[t] += amp * std::sin(w * static_cast<double>(t) + phase);
}

void add_sawtoothish(std::vector<double>& x, double freq, double amp, double phase,
                     int rate) {
    // first three harmonics of the sawtooth series
    const double w = 2.0 * M_PI * freq / rate;
    for (std::size_t t = 0; t < x.size(); ++t) {
        const double th = w * static_cast<double>(t) + phase;
        x[t] += amp * (std::sin(th) + std::sin(2 * th) / 2.0 + std::sin(3 * th) / 3.0);
    }
}

void add_burst(std::vector<double>& x, double freq, double amp, std::size_t start,
               std::size_t len, int rate) {
    const double w = 2.0 * M_PI * freq / rate;
    for (std::size_t i = 0; i < len && start + i < x.size(); ++i) {
        const double hann =
            0.5 * (1.0 - std::cos(2.0 * M_PI * i / static_cast<double>(len - 1)));
        x[start + i] += amp * hann * std::sin(w * static_cast<double>(start + i));
    }
}

std::vector<double> synth_epoch(SleepStage stage, RngStream& rng, double gain,
                                const SynthConfig& cfg) {
    const int n = kEpochSamples;
    std::vector<double> x(n, 0.0);
    auto tone = [&](double lo, double hi, double amp) {
        add_tone(x, rng.uniform(lo, hi), gain * amp, rng.uniform(0.0, 2.0 * M_PI),
                 cfg.sample_rate);
    };
    switch (stage) {
        case SleepStage::W:
            tone(8.0, 13.0, 30.0);   // alpha rhythm
            tone(13.0, 30.0, 10.0);  // beta rhythm
            break;
        case SleepStage::N1:
            tone(4.0, 7.0, 30.0);  // low amplitude mixed frequency
            tone(8.0, 13.0, 8.0);  // residual alpha (< 50%)
            break;
        case SleepStage::N2: {
            tone(4.0, 7.0, 25.0);
            const int bursts = static_cast<int>(rng.uniform_int(2, 4));
            for (int b = 0; b < bursts; ++b) {
                const std::size_t len =
                    static_cast<std::size_t>(rng.uniform_int(50, 150));  // 0.5-1.5 s
                const std::size_t start = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<long>(n - len - 1)));
                add_burst(x, rng.uniform(12.0, 14.0), gain * 30.0, start, len,
                          cfg.sample_rate);  // sleep spindles
            }
            break;
        }
        case SleepStage::N3:
            tone(0.5, 2.0, 75.0);    // dominant slow wave activity
            tone(12.0, 14.0, 10.0);  // occasional spindle content
            break;
        case SleepStage::REM:
            add_sawtoothish(x, rng.uniform(2.0, 6.0), gain * 25.0,
                            rng.uniform(0.0, 2.0 * M_PI), cfg.sample_rate);
            tone(4.0, 7.0, 12.0);
            break;
    }
    for (double& v : x) v += cfg.noise_sigma * rng.normal();
    return x;
}

std::vector<SleepStage> synth_hypnogram(RngStream& rng, int n_epochs) {
    std::vector<SleepStage> stages;
    stages.reserve(static_cast<std::size_t>(n_epochs));
    auto dwell = [&](SleepStage s, long lo, long hi) {
        const long d = rng.uniform_int(lo, std::max(lo, hi));
        for (long i = 0; i < d && static_cast<int>(stages.size()) < n_epochs; ++i)
            stages.push_back(s);
    };
    // boundary wake scaled so even short recordings fit a full cycle
    dwell(SleepStage::W, 3, std::min<long>(70, std::max<long>(3, n_epochs / 6)));
    const long trailing =
        rng.uniform_int(2, std::min<long>(40, std::max<long>(2, n_epochs / 8)));
    const SleepStage cycle[] = {SleepStage::N1, SleepStage::N2, SleepStage::N3,
                                SleepStage::N2, SleepStage::REM};
    while (static_cast<int>(stages.size()) < n_epochs - trailing) {
        for (SleepStage s : cycle) {
            if (static_cast<int>(stages.size()) >= n_epochs - trailing) break;
            dwell(s, 3, 10);
        }
    }
    while (static_cast<int>(stages.size()) < n_epochs) stages.push_back(SleepStage::W);
    return stages;
}

}  // namespace

PreparedSubject synth_subject(std::uint64_t seed, const std::string& id,
                              const SynthConfig& cfg) {
    RngStream rng = keyed_stream(seed, hash_string(id));
    PreparedSubject sub;
    sub.id = id;
    sub.stages = synth_hypnogram(rng, cfg.epochs_per_subject);
    const double gain = rng.uniform(0.8, 1.2);  // per-subject amplitude factor
    sub.epochs.reserve(sub.stages.size());
    for (SleepStage s : sub.stages)
        sub.epochs.push_back(synth_epoch(s, rng, gain * rng.uniform(0.9, 1.1), cfg));
    return sub;
}

Dataset synth_dataset(std::uint64_t seed, const SynthConfig& cfg) {
    Dataset ds;
    for (int i = 0; i < cfg.n_subjects; ++i) {
        std::ostringstream id;
        id << "S" << (i < 10 ? "0" : "") << i;
        ds.subjects.push_back(synth_subject(seed, id.str(), cfg));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// disk formats
// ---------------------------------------------------------------------------

namespace {
constexpr char kRawMagic[4] = {'S', 'P', 'C', 'R'};
}

void write_raw_signal(const std::string& path, const std::vector<double>& samples,
                      std::uint32_t sample_rate) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(kRawMagic, 4);
    f.write(reinterpret_cast<const char*>(&sample_rate), 4);
    for (double v : samples) {
        const float fv = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&fv), 4);
    }
}

Recording read_raw_signal(const std::string& path, const std::string& subject_id) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[4];
    std::uint32_t rate = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&rate), 4);
    if (!f || std::memcmp(magic, kRawMagic, 4) != 0)
        throw std::runtime_error("bad raw signal header in " + path);
    Recording rec;
    rec.subject_id = subject_id;
    rec.sample_rate = static_cast<int>(rate);
    float fv;
    while (f.read(reinterpret_cast<char*>(&fv), 4)) rec.samples.push_back(fv);
    if (rec.samples.empty()) throw std::runtime_error("empty raw signal in " + path);
    return rec;
}

void write_labels_csv(const std::string& path,
                      const std::vector<std::string>& stages) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "epoch_index,stage\n";
    for (std::size_t i = 0; i < stages.size(); ++i)
        f << i << "," << stages[i] << "\n";
}

std::vector<std::string> read_labels_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "epoch_index,stage")
        throw std::runtime_error("labels file " + path +
                                 " must start with header \"epoch_index,stage\"");
    std::vector<std::pair<long, std::string>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("malformed labels row: " + line);
        rows.emplace_back(std::stol(line.substr(0, comma)), line.substr(comma + 1));
    }
    std::vector<std::string> out(rows.size());
    for (auto& [idx, stage] : rows) {
        if (idx < 0 || idx >= static_cast<long>(out.size()))
            throw std::runtime_error("labels epoch_index out of range: " +
                                     std::to_string(idx));
        out[static_cast<std::size_t>(idx)] = stage;
    }
    for (const auto& s : out)
        if (s.empty()) throw std::runtime_error("labels file has a gap in epoch_index");
    return out;
}

Dataset load_dataset(const std::string& root, const DatasetLoadOptions& opts) {
    if (!fs::is_directory(root))
        throw std::runtime_error("dataset root is not a directory: " + root);
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) ids.push_back(entry.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw std::runtime_error("dataset root has no subjects: " + root);

    Dataset ds;
    for (const auto& id : ids) {
        const fs::path dir = fs::path(root) / id;
        const fs::path raw = dir / "signal.raw";
        const fs::path edf = dir / "signal.edf";
        Recording rec;
        if ((opts.format == "raw" || opts.format == "auto") && fs::exists(raw)) {
            rec = read_raw_signal(raw.string(), id);
        } else if ((opts.format == "edf" || opts.format == "auto") &&
                   fs::exists(edf)) {
            std::ifstream f(edf, std::ios::binary);
            std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                             std::istreambuf_iterator<char>());
            rec = read_edf(bytes, opts.channel);
            rec.subject_id = id;
        } else {
            throw std::runtime_error("subject " + id +
                                     ": no signal.raw or signal.edf found");
        }
        rec = resample_100hz(rec);

        const std::vector<std::string> raw_labels =
            read_labels_csv((dir / "labels.csv").string());
        LabelMapResult mapped = map_labels(raw_labels);

        const std::size_t n_signal_epochs = rec.samples.size() / kEpochSamples;
        const std::size_t n = std::min(n_signal_epochs, mapped.keep.size());

        PreparedSubject sub;
        sub.id = id;
        std::size_t stage_cursor = 0;
        for (std::size_t e = 0; e < n; ++e) {
            if (!mapped.keep[e]) continue;
            const double* p = rec.samples.data() + e * kEpochSamples;
            sub.epochs.emplace_back(p, p + kEpochSamples);
            sub.stages.push_back(mapped.stages[stage_cursor]);
            ++stage_cursor;
        }
        trim_wake(sub, opts.wake_trim_cap);
        ds.subjects.push_back(std::move(sub));
    }
    return ds;
}

void write_synth_dataset(const std::string& root, std::uint64_t seed,
                         const SynthConfig& cfg) {
    fs::create_directories(root);
    for (int i = 0; i < cfg.n_subjects; ++i) {
        std::ostringstream id;
        id << "S" << (i < 10 ? "0" : "") << i;
        PreparedSubject sub = synth_subject(seed, id.str(), cfg);
        const fs::path dir = fs::path(root) / id.str();
        fs::create_directories(dir);
        std::vector<double> samples;
        samples.reserve(sub.epochs.size() * kEpochSamples);
        std::vector<std::string> labels;
        for (std::size_t e = 0; e < sub.epochs.size(); ++e) {
            samples.insert(samples.end(), sub.epochs[e].begin(), sub.epochs[e].end());
            labels.push_back(stage_name(sub.stages[e]));
        }
        write_raw_signal((dir / "signal.raw").string(), samples,
                         static_cast<std::uint32_t>(cfg.sample_rate));
        write_labels_csv((dir / "labels.csv").string(), labels);
    }
}

}  // namespace sleepyco
