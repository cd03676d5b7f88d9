#include "sleepyco/cli.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "sleepyco/config.hpp"
#include "sleepyco/gradcheck.hpp"
#include "sleepyco/metrics.hpp"
#include "sleepyco/training.hpp"

namespace sleepyco::cli {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
};

RunConfig resolve_config(const CommonArgs& args) {
    nlohmann::json j = nlohmann::json::object();
    if (!args.config_path.empty()) {
        std::ifstream f(args.config_path);
        if (!f) throw std::runtime_error("cannot open config " + args.config_path);
        j = nlohmann::json::parse(f);
    }
    for (const auto& o : args.overrides) apply_override(j, o);
    return parse_config(j);
}

std::uint64_t fnv1a(std::uint64_t h, const unsigned char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Content hash over the resolved config plus every dataset file, making a run
// replayable byte-for-byte.
std::uint64_t hash_inputs(const RunConfig& cfg, const std::string& config_text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(h, reinterpret_cast<const unsigned char*>(config_text.data()),
              config_text.size());
    if (!cfg.dataset.root.empty() && fs::is_directory(cfg.dataset.root)) {
        std::vector<std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(cfg.dataset.root))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& path : files) {
            h = fnv1a(h, reinterpret_cast<const unsigned char*>(path.data()),
                      path.size());
            std::ifstream f(path, std::ios::binary);
            char buf[65536];
            while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
                h = fnv1a(h, reinterpret_cast<const unsigned char*>(buf),
                          static_cast<std::size_t>(f.gcount()));
        }
    }
    return h;
}

void write_run_record(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string text = to_json(cfg).dump(2) + "\n";
    std::ofstream cf(fs::path(out_dir) / "config.json", std::ios::trunc);
    cf << text;
    std::ofstream hf(fs::path(out_dir) / "inputs.hash", std::ios::trunc);
    hf << std::hex << std::setw(16) << std::setfill('0') << hash_inputs(cfg, text)
       << "\n";
}

std::string require_data_root(const RunConfig& cfg) {
    if (cfg.dataset.root.empty())
        throw std::runtime_error(
            "no dataset root configured (set dataset.root or SLEEPYCO_DATA_ROOT)");
    return cfg.dataset.root;
}

Dataset load_configured_dataset(const RunConfig& cfg) {
    DatasetLoadOptions opts;
    opts.format = cfg.dataset.format;
    opts.channel = cfg.dataset.channel;
    opts.wake_trim_cap = cfg.dataset.wake_trim_cap;
    return load_dataset(require_data_root(cfg), opts);
}

// Held-out validation subjects by seeded shuffle; the rest train.
std::pair<std::vector<std::string>, std::vector<std::string>> holdout_split(
    const Dataset& ds, int n_val, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& s : ds.subjects) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    if (n_val >= static_cast<int>(ids.size()))
        throw std::runtime_error("holdout split leaves no training subjects");
    RngStream rng = keyed_stream(seed, hash_string("holdout"));
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
    std::vector<std::string> val(ids.begin(), ids.begin() + n_val);
    std::vector<std::string> train(ids.begin() + n_val, ids.end());
    return {train, val};
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
    write_run_record(cfg, out_dir);
    write_synth_dataset(require_data_root(cfg), cfg.seed, cfg.synth);
    std::cout << "wrote synthetic dataset (" << cfg.synth.n_subjects
              << " subjects) to " << cfg.dataset.root << "\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& out_dir) {
    write_run_record(cfg, out_dir);
    Dataset ds = load_configured_dataset(cfg);
    auto [train_ids, val_ids] = holdout_split(ds, cfg.eval.n_val, cfg.seed);
    TrainLog log((fs::path(out_dir) / "crl_log.csv").string());
    TrainResult res = run_crl(view_of(ds, train_ids), view_of(ds, val_ids),
                              cfg.model, cfg.backbone, cfg.train, cfg.augmentation,
                              &log);
    res.best_checkpoint.save((fs::path(out_dir) / "crl").string());
    std::cout << "pretraining done: " << res.iterations
              << " iterations, best validation loss " << res.best_val_loss << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& out_dir,
                 const std::string& ckpt_stem) {
    write_run_record(cfg, out_dir);
    if (ckpt_stem.empty())
        throw std::runtime_error("finetune needs --checkpoint <stem> (a CRL checkpoint)");
    Checkpoint crl = Checkpoint::load(ckpt_stem);
    Dataset ds = load_configured_dataset(cfg);
    auto [train_ids, val_ids] = holdout_split(ds, cfg.eval.n_val, cfg.seed);
    TrainLog log((fs::path(out_dir) / "mtcl_log.csv").string());
    TrainResult res = run_mtcl(view_of(ds, train_ids), view_of(ds, val_ids), crl,
                               cfg.model, cfg.backbone, cfg.train, &log);
    res.best_checkpoint.save((fs::path(out_dir) / "mtcl").string());
    std::cout << "fine-tuning done: " << res.iterations
              << " iterations, best validation loss " << res.best_val_loss << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& out_dir,
                 const std::string& ckpt_stem) {
    write_run_record(cfg, out_dir);
    if (ckpt_stem.empty())
        throw std::runtime_error("evaluate needs --checkpoint <stem> (a full model)");
    Checkpoint ckpt = Checkpoint::load(ckpt_stem);
    Dataset ds = load_configured_dataset(cfg);
    SleepModel model(cfg.model, cfg.backbone, cfg.seed);
    {
        std::vector<Parameter*> ps;
        std::vector<BufferRef> bs;
        model.params(ps);
        model.buffers(bs);
        load_state_dict(ckpt, ps, bs);
    }
    EvalResult ev = evaluate_model(model, view_all(ds), cfg.model, cfg.train);
    FoldResult fold;
    fold.fold_index = 0;
    fold.cm = ev.cm;
    fold.metrics = compute_metrics(ev.cm);
    fold.labels = ev.labels;
    fold.predictions = ev.predictions;
    render_report({fold}, out_dir);
    std::cout << "evaluated " << ev.labels.size() << " epochs: acc "
              << fold.metrics.acc << ", mf1 " << fold.metrics.mf1 << ", kappa "
              << fold.metrics.kappa << "\n";
    return 0;
}

int cmd_crossval(const RunConfig& cfg, const std::string& out_dir, int jobs) {
    write_run_record(cfg, out_dir);
    Dataset ds = load_configured_dataset(cfg);
    std::vector<std::string> ids;
    for (const auto& s : ds.subjects) ids.push_back(s.id);
    std::vector<FoldSplit> folds = kfold_split(ids, cfg.eval.k, cfg.eval.n_val,
                                               cfg.seed);
    std::vector<FoldResult> results(folds.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mu;

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= folds.size() || failed.load()) return;
            try {
                const FoldSplit& fold = folds[i];
                const std::string fold_dir =
                    (fs::path(out_dir) / ("fold" + std::to_string(fold.fold_index)))
                        .string();
                fs::create_directories(fold_dir);
                RunConfig fold_cfg = cfg;
                // per-fold seed isolation keeps folds independent of scheduling
                fold_cfg.train.seed =
                    derive_key(cfg.seed, hash_string("fold"), fold.fold_index);

                TrainLog crl_log((fs::path(fold_dir) / "crl_log.csv").string());
                TrainResult crl = run_crl(view_of(ds, fold.train),
                                          view_of(ds, fold.validation), fold_cfg.model,
                                          fold_cfg.backbone, fold_cfg.train,
                                          fold_cfg.augmentation, &crl_log);
                crl.best_checkpoint.save((fs::path(fold_dir) / "crl").string());

                TrainLog mtcl_log((fs::path(fold_dir) / "mtcl_log.csv").string());
                TrainResult mtcl = run_mtcl(view_of(ds, fold.train),
                                            view_of(ds, fold.validation),
                                            crl.best_checkpoint, fold_cfg.model,
                                            fold_cfg.backbone, fold_cfg.train,
                                            &mtcl_log);
                mtcl.best_checkpoint.save((fs::path(fold_dir) / "mtcl").string());

                SleepModel model(fold_cfg.model, fold_cfg.backbone,
                                 fold_cfg.train.seed);
                {
                    std::vector<Parameter*> ps;
                    std::vector<BufferRef> bs;
                    model.params(ps);
                    model.buffers(bs);
                    load_state_dict(mtcl.best_checkpoint, ps, bs);
                }
                EvalResult ev = evaluate_model(model, view_of(ds, fold.test),
                                               fold_cfg.model, fold_cfg.train);
                FoldResult fr;
                fr.fold_index = fold.fold_index;
                fr.cm = ev.cm;
                fr.metrics = compute_metrics(ev.cm);
                fr.labels = ev.labels;
                fr.predictions = ev.predictions;
                results[i] = std::move(fr);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(failure_mu);
                failed = true;
                failure = e.what();
                return;
            }
        }
    };

    const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(folds.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed) throw std::runtime_error("crossval fold failed: " + failure);

    render_report(results, out_dir);
    for (const FoldResult& fr : results)
        std::cout << "fold " << fr.fold_index << ": acc " << fr.metrics.acc
                  << ", mf1 " << fr.metrics.mf1 << ", kappa " << fr.metrics.kappa
                  << "\n";
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
    const auto reports = run_gradient_suite(cfg.seed, 20);
    bool all_pass = true;
    for (const auto& r : reports) {
        std::cout << (r.pass ? "ok   " : "FAIL ") << r.name << "  max rel err "
                  << r.max_rel_err << " over " << r.instances << " instances\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"SleePyCo sleep-scoring pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string checkpoint;
    int jobs = 1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON configuration file");
        sub->add_option("--set", common.overrides,
                        "dotted-path override, e.g. train.phi=5");
        sub->add_option("--out", common.out_dir, "output directory");
    };

    CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset");
    add_common(synth);
    CLI::App* pretrain =
        app.add_subcommand("pretrain", "contrastive pretraining (stage 1)");
    add_common(pretrain);
    CLI::App* finetune =
        app.add_subcommand("finetune", "temporal-context fine-tuning (stage 2)");
    add_common(finetune);
    finetune->add_option("--checkpoint", checkpoint, "CRL checkpoint stem");
    CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "model checkpoint stem");
    CLI::App* crossval =
        app.add_subcommand("crossval", "subject-wise k-fold cross-validation");
    add_common(crossval);
    crossval->add_option("--jobs", jobs, "parallel folds");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(gradcheck);

    std::vector<const char*> argv;
    argv.push_back("sleepyco");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()),
                  const_cast<char**>(argv.data()));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const RunConfig cfg = resolve_config(common);
        if (synth->parsed()) return cmd_synth(cfg, common.out_dir);
        if (pretrain->parsed()) return cmd_pretrain(cfg, common.out_dir);
        if (finetune->parsed()) return cmd_finetune(cfg, common.out_dir, checkpoint);
        if (evaluate->parsed()) return cmd_evaluate(cfg, common.out_dir, checkpoint);
        if (crossval->parsed()) return cmd_crossval(cfg, common.out_dir, jobs);
        if (gradcheck->parsed()) return cmd_gradcheck(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace sleepyco::cli
