#pragma once

#include <array>
#include <vector>

#include "sleepyco/rng.hpp"

namespace sleepyco {

// One stochastic transform: parameter drawn uniformly from [min,max], fired
// with the given probability.
struct TransformRange {
    double min_v = 0.0;
    double max_v = 0.0;
    double prob = 0.5;
};

// The six-stage stochastic pipeline producing semantically equivalent views
// of a 30-s epoch. Defaults follow the published pipeline exactly.
struct AugmentationConfig {
    TransformRange amplitude_scale{0.5, 2.0, 0.5};
    TransformRange time_shift{-300, 300, 0.5};      // samples
    TransformRange amplitude_shift{-10.0, 10.0, 0.5};  // microvolts
    TransformRange zero_mask{0, 300, 0.5};          // samples
    TransformRange gaussian_noise{0.0, 0.2, 0.5};   // sigma
    TransformRange band_stop{0.5, 30.0, 0.5};       // lower bound, 2 Hz width

    void validate() const;
};

inline constexpr int kAugmentSamples = 3000;
inline constexpr double kAugmentSampleRate = 100.0;
inline constexpr double kBandStopWidthHz = 2.0;

// Applies the six transforms in order, each firing independently. Input must
// be exactly 3000 samples; output length is preserved.
std::vector<double> apply_pipeline(const std::vector<double>& x,
                                   const AugmentationConfig& cfg, RngStream& rng);

// Zero-phase 4th-order Butterworth band-reject over [lower_hz, lower_hz+2].
std::vector<double> band_stop(const std::vector<double>& x, double lower_hz,
                              double sample_rate = kAugmentSampleRate);

// 4th-order IIR coefficients (b/a, a normalized so a[0] = 1).
struct IirCoeffs {
    std::array<double, 5> b{};
    std::array<double, 5> a{};
};
IirCoeffs butterworth_bandstop(double f_lo, double f_hi, double sample_rate);
std::vector<double> iir_filter(const IirCoeffs& c, const std::vector<double>& x);
std::vector<double> filtfilt(const IirCoeffs& c, const std::vector<double>& x);

}  // namespace sleepyco
