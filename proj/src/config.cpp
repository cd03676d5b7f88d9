#include "sleepyco/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>

namespace sleepyco {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
    if (!j.is_object())
        throw std::invalid_argument("config: \"" + path + "\" must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key \"" +
                                        (path.empty() ? it.key() : path + "." + it.key()) +
                                        "\"");
}

template <class T>
T get_or(const json& j, const std::string& path, const std::string& key, T def) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument("config: bad type for key \"" + path + "." +
                                    key + "\"");
    }
}

void require_range(bool ok, const std::string& key, const std::string& what) {
    if (!ok)
        throw std::invalid_argument("config: value out of range for \"" + key +
                                    "\" (" + what + ")");
}

TransformRange get_transform(const json& section, const std::string& path,
                             const std::string& key, TransformRange def) {
    if (!section.contains(key)) return def;
    const json& j = section.at(key);
    const std::string full = path + "." + key;
    check_keys(j, full, {"min", "max", "prob"});
    TransformRange r = def;
    r.min_v = get_or(j, full, "min", def.min_v);
    r.max_v = get_or(j, full, "max", def.max_v);
    r.prob = get_or(j, full, "prob", def.prob);
    require_range(r.prob >= 0.0 && r.prob <= 1.0, full + ".prob", "0 <= prob <= 1");
    require_range(r.min_v <= r.max_v, full, "min <= max");
    return r;
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config(const nlohmann::json& j) {
    check_keys(j, "", {"seed", "dataset", "synth", "model", "train", "augmentation",
                       "eval"});
    RunConfig cfg;
    cfg.seed = get_or<std::uint64_t>(j, "", "seed", cfg.seed);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, "dataset", {"root", "format", "channel", "wake_trim_cap"});
        cfg.dataset.root = get_or<std::string>(d, "dataset", "root", "");
        cfg.dataset.format =
            get_or<std::string>(d, "dataset", "format", cfg.dataset.format);
        require_range(cfg.dataset.format == "auto" || cfg.dataset.format == "raw" ||
                          cfg.dataset.format == "edf",
                      "dataset.format", "auto|raw|edf");
        cfg.dataset.channel = get_or<std::string>(d, "dataset", "channel", "");
        cfg.dataset.wake_trim_cap = get_or<std::size_t>(
            d, "dataset", "wake_trim_cap", cfg.dataset.wake_trim_cap);
    }
    if (cfg.dataset.root.empty()) {
        if (const char* env = std::getenv("SLEEPYCO_DATA_ROOT"))
            cfg.dataset.root = env;
    }

    if (j.contains("synth")) {
        const json& s = j.at("synth");
        check_keys(s, "synth",
                   {"n_subjects", "epochs_per_subject", "noise_sigma", "sample_rate"});
        cfg.synth.n_subjects =
            get_or(s, "synth", "n_subjects", cfg.synth.n_subjects);
        cfg.synth.epochs_per_subject =
            get_or(s, "synth", "epochs_per_subject", cfg.synth.epochs_per_subject);
        cfg.synth.noise_sigma =
            get_or(s, "synth", "noise_sigma", cfg.synth.noise_sigma);
        cfg.synth.sample_rate =
            get_or(s, "synth", "sample_rate", cfg.synth.sample_rate);
        require_range(cfg.synth.n_subjects >= 1, "synth.n_subjects", ">= 1");
        require_range(cfg.synth.epochs_per_subject >= 1, "synth.epochs_per_subject",
                      ">= 1");
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model",
                   {"L", "n_classes", "d_f", "d_m", "d_ff", "n_heads", "n_layers",
                    "d_z", "tau", "dropout", "taps", "pe_exponent", "pool_activation",
                    "crl_representation", "block_channels", "se_reduction", "bn_eps",
                    "bn_momentum"});
        cfg.model.L = get_or(m, "model", "L", cfg.model.L);
        cfg.model.n_classes = get_or(m, "model", "n_classes", cfg.model.n_classes);
        cfg.model.d_f = get_or(m, "model", "d_f", cfg.model.d_f);
        cfg.model.d_m = get_or(m, "model", "d_m", cfg.model.d_m);
        cfg.model.d_ff = get_or(m, "model", "d_ff", cfg.model.d_ff);
        cfg.model.n_heads = get_or(m, "model", "n_heads", cfg.model.n_heads);
        cfg.model.n_layers = get_or(m, "model", "n_layers", cfg.model.n_layers);
        cfg.model.d_z = get_or(m, "model", "d_z", cfg.model.d_z);
        cfg.model.tau = get_or(m, "model", "tau", cfg.model.tau);
        cfg.model.dropout = get_or(m, "model", "dropout", cfg.model.dropout);
        cfg.model.taps = get_or(m, "model", "taps", cfg.model.taps);
        require_range(cfg.model.tau > 0.0, "model.tau", "> 0");
        require_range(cfg.model.dropout >= 0.0 && cfg.model.dropout < 1.0,
                      "model.dropout", "0 <= dropout < 1");
        const std::string pe =
            get_or<std::string>(m, "model", "pe_exponent", "printed");
        require_range(pe == "printed" || pe == "paired", "model.pe_exponent",
                      "printed|paired");
        cfg.model.pe_exponent =
            pe == "printed" ? PeExponent::Printed : PeExponent::Paired;
        const std::string pa =
            get_or<std::string>(m, "model", "pool_activation", "tanh");
        require_range(pa == "tanh" || pa == "identity", "model.pool_activation",
                      "tanh|identity");
        cfg.model.pool_activation =
            pa == "tanh" ? PoolActivation::Tanh : PoolActivation::Identity;
        const std::string rep =
            get_or<std::string>(m, "model", "crl_representation", "c5");
        require_range(rep == "c5" || rep == "f5", "model.crl_representation",
                      "c5|f5");
        cfg.model.crl_representation =
            rep == "c5" ? CrlRepresentation::C5 : CrlRepresentation::F5;
        cfg.backbone.block_channels =
            get_or(m, "model", "block_channels", cfg.backbone.block_channels);
        cfg.backbone.se_reduction =
            get_or(m, "model", "se_reduction", cfg.backbone.se_reduction);
        cfg.backbone.bn_eps = get_or(m, "model", "bn_eps", cfg.backbone.bn_eps);
        cfg.backbone.bn_momentum =
            get_or(m, "model", "bn_momentum", cfg.backbone.bn_momentum);
        require_range(cfg.backbone.block_channels.size() == 5,
                      "model.block_channels", "exactly 5 blocks");
        cfg.backbone.tap_stages = cfg.model.taps;
    }
    cfg.backbone.tap_stages = cfg.model.taps;

    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train",
                   {"eta", "beta1", "beta2", "eps", "weight_decay", "batch_crl",
                    "batch_mtcl", "psi1", "psi2", "phi", "max_iters_crl",
                    "max_iters_mtcl", "val_max_items", "mtcl_bn", "pad_head"});
        cfg.train.eta = get_or(t, "train", "eta", cfg.train.eta);
        cfg.train.beta1 = get_or(t, "train", "beta1", cfg.train.beta1);
        cfg.train.beta2 = get_or(t, "train", "beta2", cfg.train.beta2);
        cfg.train.eps = get_or(t, "train", "eps", cfg.train.eps);
        cfg.train.weight_decay =
            get_or(t, "train", "weight_decay", cfg.train.weight_decay);
        cfg.train.batch_crl = get_or(t, "train", "batch_crl", cfg.train.batch_crl);
        cfg.train.batch_mtcl = get_or(t, "train", "batch_mtcl", cfg.train.batch_mtcl);
        cfg.train.psi1 = get_or(t, "train", "psi1", cfg.train.psi1);
        cfg.train.psi2 = get_or(t, "train", "psi2", cfg.train.psi2);
        cfg.train.phi = get_or(t, "train", "phi", cfg.train.phi);
        cfg.train.max_iters_crl =
            get_or(t, "train", "max_iters_crl", cfg.train.max_iters_crl);
        cfg.train.max_iters_mtcl =
            get_or(t, "train", "max_iters_mtcl", cfg.train.max_iters_mtcl);
        cfg.train.val_max_items =
            get_or(t, "train", "val_max_items", cfg.train.val_max_items);
        cfg.train.mtcl_bn = get_or<std::string>(t, "train", "mtcl_bn", "eval");
        require_range(cfg.train.mtcl_bn == "eval" || cfg.train.mtcl_bn == "train",
                      "train.mtcl_bn", "eval|train");
        const std::string pad = get_or<std::string>(t, "train", "pad_head", "repeat");
        require_range(pad == "repeat" || pad == "skip", "train.pad_head",
                      "repeat|skip");
        cfg.train.pad_head = pad == "repeat" ? PadHead::Repeat : PadHead::Skip;
    }
    cfg.train.seed = cfg.seed;
    cfg.train.L = static_cast<int>(cfg.model.L);

    if (j.contains("augmentation")) {
        const json& a = j.at("augmentation");
        check_keys(a, "augmentation",
                   {"amplitude_scale", "time_shift", "amplitude_shift", "zero_mask",
                    "gaussian_noise", "band_stop"});
        AugmentationConfig def;
        cfg.augmentation.amplitude_scale = get_transform(
            a, "augmentation", "amplitude_scale", def.amplitude_scale);
        cfg.augmentation.time_shift =
            get_transform(a, "augmentation", "time_shift", def.time_shift);
        cfg.augmentation.amplitude_shift = get_transform(
            a, "augmentation", "amplitude_shift", def.amplitude_shift);
        cfg.augmentation.zero_mask =
            get_transform(a, "augmentation", "zero_mask", def.zero_mask);
        cfg.augmentation.gaussian_noise = get_transform(
            a, "augmentation", "gaussian_noise", def.gaussian_noise);
        cfg.augmentation.band_stop =
            get_transform(a, "augmentation", "band_stop", def.band_stop);
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval", {"k", "n_val"});
        cfg.eval.k = get_or(e, "eval", "k", cfg.eval.k);
        cfg.eval.n_val = get_or(e, "eval", "n_val", cfg.eval.n_val);
        require_range(cfg.eval.k >= 2, "eval.k", ">= 2");
        require_range(cfg.eval.n_val >= 1, "eval.n_val", ">= 1");
    }

    cfg.model.validate();
    cfg.backbone.validate();
    cfg.train.validate();
    cfg.augmentation.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: " + path + " is not valid JSON: " +
                                 e.what());
    }
    return parse_config(j);
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("--set expects key=value, got \"" + assignment +
                                    "\"");
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
        parsed = value;  // bare strings need no quotes
    }
    nlohmann::json* cursor = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty())
            throw std::invalid_argument("--set: empty key segment in \"" + path + "\"");
        if (dot == std::string::npos) {
            (*cursor)[key] = parsed;
            break;
        }
        cursor = &(*cursor)[key];
        start = dot + 1;
    }
}

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["dataset"] = {{"root", cfg.dataset.root},
                    {"format", cfg.dataset.format},
                    {"channel", cfg.dataset.channel},
                    {"wake_trim_cap", cfg.dataset.wake_trim_cap}};
    j["synth"] = {{"n_subjects", cfg.synth.n_subjects},
                  {"epochs_per_subject", cfg.synth.epochs_per_subject},
                  {"noise_sigma", cfg.synth.noise_sigma},
                  {"sample_rate", cfg.synth.sample_rate}};
    j["model"] = {
        {"L", cfg.model.L},
        {"n_classes", cfg.model.n_classes},
        {"d_f", cfg.model.d_f},
        {"d_m", cfg.model.d_m},
        {"d_ff", cfg.model.d_ff},
        {"n_heads", cfg.model.n_heads},
        {"n_layers", cfg.model.n_layers},
        {"d_z", cfg.model.d_z},
        {"tau", cfg.model.tau},
        {"dropout", cfg.model.dropout},
        {"taps", cfg.model.taps},
        {"pe_exponent",
         cfg.model.pe_exponent == PeExponent::Printed ? "printed" : "paired"},
        {"pool_activation",
         cfg.model.pool_activation == PoolActivation::Tanh ? "tanh" : "identity"},
        {"crl_representation",
         cfg.model.crl_representation == CrlRepresentation::C5 ? "c5" : "f5"},
        {"block_channels", cfg.backbone.block_channels},
        {"se_reduction", cfg.backbone.se_reduction},
        {"bn_eps", cfg.backbone.bn_eps},
        {"bn_momentum", cfg.backbone.bn_momentum}};
    j["train"] = {{"eta", cfg.train.eta},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"eps", cfg.train.eps},
                  {"weight_decay", cfg.train.weight_decay},
                  {"batch_crl", cfg.train.batch_crl},
                  {"batch_mtcl", cfg.train.batch_mtcl},
                  {"psi1", cfg.train.psi1},
                  {"psi2", cfg.train.psi2},
                  {"phi", cfg.train.phi},
                  {"max_iters_crl", cfg.train.max_iters_crl},
                  {"max_iters_mtcl", cfg.train.max_iters_mtcl},
                  {"val_max_items", cfg.train.val_max_items},
                  {"mtcl_bn", cfg.train.mtcl_bn},
                  {"pad_head",
                   cfg.train.pad_head == PadHead::Repeat ? "repeat" : "skip"}};
    auto tr = [](const TransformRange& r) {
        return nlohmann::json{{"min", r.min_v}, {"max", r.max_v}, {"prob", r.prob}};
    };
    j["augmentation"] = {{"amplitude_scale", tr(cfg.augmentation.amplitude_scale)},
                         {"time_shift", tr(cfg.augmentation.time_shift)},
                         {"amplitude_shift", tr(cfg.augmentation.amplitude_shift)},
                         {"zero_mask", tr(cfg.augmentation.zero_mask)},
                         {"gaussian_noise", tr(cfg.augmentation.gaussian_noise)},
                         {"band_stop", tr(cfg.augmentation.band_stop)}};
    j["eval"] = {{"k", cfg.eval.k}, {"n_val", cfg.eval.n_val}};
    return j;
}

}  // namespace sleepyco
