#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "sleepyco/augment.hpp"

using namespace sleepyco;

namespace {

std::vector<double> tone(double freq, double amp, std::size_t n = 3000,
                         double fs = 100.0) {
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t)
        x[t] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(t) / fs);
    return x;
}

// amplitude of a pure tone measured over the middle of the record
double tone_amplitude(const std::vector<double>& x, double freq, double fs = 100.0) {
    const std::size_t lo = 500, hi = 2500;
    double re = 0.0, im = 0.0;
    const double w = 2.0 * M_PI * freq / fs;
    for (std::size_t t = lo; t < hi; ++t) {
        re += x[t] * std::cos(w * static_cast<double>(t));
        im -= x[t] * std::sin(w * static_cast<double>(t));
    }
    return 2.0 * std::sqrt(re * re + im * im) / static_cast<double>(hi - lo);
}

AugmentationConfig only(TransformRange AugmentationConfig::*field,
                        TransformRange value) {
    AugmentationConfig cfg;
    cfg.amplitude_scale.prob = 0.0;
    cfg.time_shift.prob = 0.0;
    cfg.amplitude_shift.prob = 0.0;
    cfg.zero_mask.prob = 0.0;
    cfg.gaussian_noise.prob = 0.0;
    cfg.band_stop.prob = 0.0;
    cfg.*field = value;
    return cfg;
}

}  // namespace

TEST_CASE("defaults match the published pipeline") {
    AugmentationConfig cfg;
    CHECK(cfg.amplitude_scale.min_v == 0.5);
    CHECK(cfg.amplitude_scale.max_v == 2.0);
    CHECK(cfg.time_shift.min_v == -300);
    CHECK(cfg.time_shift.max_v == 300);
    CHECK(cfg.amplitude_shift.min_v == -10.0);
    CHECK(cfg.amplitude_shift.max_v == 10.0);
    CHECK(cfg.zero_mask.min_v == 0);
    CHECK(cfg.zero_mask.max_v == 300);
    CHECK(cfg.gaussian_noise.min_v == 0.0);
    CHECK(cfg.gaussian_noise.max_v == 0.2);
    CHECK(cfg.band_stop.min_v == 0.5);
    CHECK(cfg.band_stop.max_v == 30.0);
    for (const TransformRange* r :
         {&cfg.amplitude_scale, &cfg.time_shift, &cfg.amplitude_shift,
          &cfg.zero_mask, &cfg.gaussian_noise, &cfg.band_stop})
        CHECK(r->prob == 0.5);
}

TEST_CASE("zero probabilities make the pipeline the identity") {
    RngStream rng(1);
    std::vector<double> x = tone(7.0, 20.0);
    AugmentationConfig cfg = only(&AugmentationConfig::amplitude_scale,
                                  TransformRange{0.5, 2.0, 0.0});
    CHECK(apply_pipeline(x, cfg, rng) == x);  // bit-exact
}

TEST_CASE("forced scaling doubles every sample") {
    RngStream rng(2);
    std::vector<double> x = tone(5.0, 10.0);
    AugmentationConfig cfg = only(&AugmentationConfig::amplitude_scale,
                                  TransformRange{2.0, 2.0, 1.0});
    std::vector<double> y = apply_pipeline(x, cfg, rng);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y[i] == doctest::Approx(2.0 * x[i]));
}

TEST_CASE("forced time shift zero-fills the vacated head") {
    RngStream rng(3);
    std::vector<double> x(3000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i + 1);
    AugmentationConfig cfg =
        only(&AugmentationConfig::time_shift, TransformRange{300, 300, 1.0});
    std::vector<double> y = apply_pipeline(x, cfg, rng);
    for (std::size_t t = 0; t < 300; ++t) CHECK(y[t] == 0.0);
    for (std::size_t t = 300; t < 3000; ++t) CHECK(y[t] == x[t - 300]);
}

TEST_CASE("zero-mask blanks exactly one contiguous run") {
    RngStream rng(4);
    std::vector<double> x(3000, 1.0);
    AugmentationConfig cfg =
        only(&AugmentationConfig::zero_mask, TransformRange{120, 120, 1.0});
    std::vector<double> y = apply_pipeline(x, cfg, rng);
    std::size_t zeros = 0, transitions = 0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        if (y[t] == 0.0) ++zeros;
        if (t > 0 && (y[t] == 0.0) != (y[t - 1] == 0.0)) ++transitions;
    }
    CHECK(zeros == 120);
    CHECK(transitions <= 2);  // one contiguous run
    for (std::size_t t = 0; t < y.size(); ++t)
        CHECK((y[t] == 0.0 || y[t] == 1.0));  // all other samples untouched
}

TEST_CASE("pipeline is deterministic given the stream key") {
    std::vector<double> x = tone(9.0, 15.0);
    AugmentationConfig cfg;  // everything at probability 0.5
    RngStream a = keyed_stream(99, 5, 0);
    RngStream b = keyed_stream(99, 5, 0);
    CHECK(apply_pipeline(x, cfg, a) == apply_pipeline(x, cfg, b));
    RngStream c = keyed_stream(99, 5, 1);
    CHECK(apply_pipeline(x, cfg, a) != apply_pipeline(x, cfg, c));
}

TEST_CASE("pipeline rejects wrong input length") {
    RngStream rng(5);
    AugmentationConfig cfg;
    std::vector<double> bad(2999, 0.0);
    CHECK_THROWS_AS(apply_pipeline(bad, cfg, rng), std::invalid_argument);
}

TEST_CASE("band_stop attenuates the stop band and passes neighbours") {
    // [9,11] band: the 10 Hz centre must drop >= 20 dB
    std::vector<double> centre = tone(10.0, 1.0);
    std::vector<double> filtered = band_stop(centre, 9.0);
    CHECK(filtered.size() == centre.size());
    const double centre_db =
        20.0 * std::log10(1.0 / std::max(tone_amplitude(filtered, 10.0), 1e-300));
    CHECK(centre_db >= 20.0);

    // 3 Hz beyond the edges: at most 1 dB change
    for (double f : {6.0, 14.0}) {
        std::vector<double> pass = band_stop(tone(f, 1.0), 9.0);
        const double a = tone_amplitude(pass, f);
        CHECK(std::abs(20.0 * std::log10(a)) <= 1.0);
    }

    // far tone essentially untouched
    std::vector<double> far = band_stop(tone(30.0, 1.0), 9.0);
    CHECK(std::abs(20.0 * std::log10(tone_amplitude(far, 30.0))) <= 1.0);

    std::vector<double> silent(3000, 0.0);
    CHECK(band_stop(silent, 9.0) == silent);

    CHECK_THROWS_AS(band_stop(centre, 49.5), std::invalid_argument);
    CHECK_THROWS_AS(band_stop(centre, -1.0), std::invalid_argument);
}

TEST_CASE("band_stop sweeps cleanly over the whole allowed range") {
    for (double lo = 0.5; lo <= 30.0; lo += 3.5) {
        std::vector<double> x = tone(lo + 1.0, 1.0);
        std::vector<double> y = band_stop(x, lo);
        CHECK(y.size() == x.size());
        const double res = tone_amplitude(y, lo + 1.0);
        CHECK(20.0 * std::log10(1.0 / std::max(res, 1e-300)) >= 20.0);
    }
}
