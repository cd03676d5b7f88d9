#pragma once

#include <string>

#include "json.hpp"
#include "sleepyco/augment.hpp"
#include "sleepyco/backbone.hpp"
#include "sleepyco/classifier.hpp"
#include "sleepyco/signal.hpp"
#include "sleepyco/training.hpp"

namespace sleepyco {

struct DatasetConfig {
    std::string root;             // falls back to $SLEEPYCO_DATA_ROOT
    std::string format = "auto";  // auto | raw | edf
    std::string channel;
    std::size_t wake_trim_cap = 60;
};

struct EvalConfig {
    int k = 10;
    int n_val = 7;  // held-out validation subjects per fold
};

// Fully resolved run configuration; every field has a documented default.
struct RunConfig {
    std::uint64_t seed = 1;
    DatasetConfig dataset;
    SynthConfig synth;
    ModelConfig model;
    BackboneConfig backbone;
    TrainConfig train;
    AugmentationConfig augmentation;
    EvalConfig eval;
};

// Parses and validates; unknown keys, type mismatches and out-of-range values
// are rejected with the offending key named.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
RunConfig default_config();

// Dotted-path override, e.g. "train.phi=5" or "model.taps=[5]". The value is
// parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment);

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace sleepyco
