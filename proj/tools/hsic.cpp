// hsic: patch sampling, contrastive pretraining, fine-tuning, baselines,
// sweeps, embedding export and report regeneration.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hsic/checkpoint.hpp"
#include "hsic/config.hpp"
#include "hsic/dataset.hpp"
#include "hsic/error.hpp"
#include "hsic/experiment.hpp"
#include "hsic/harness.hpp"
#include "hsic/kernels.hpp"

namespace fs = std::filesystem;
using namespace hsic;

namespace {

constexpr const char* kExitCodes = R"(Exit codes:
  0  success
  1  internal error
  2  usage (bad flags, unknown command)
  3  config (missing or invalid config file or value)
  4  data-not-found (dataset or ground-truth file missing)
  5  data-format (unreadable or inconsistent data)
  6  checkpoint-mismatch
  7  numeric (non-finite loss or gradient)
  8  shape
  9  invalid-argument
On failure one line "error: <category>: <message>" is written to stderr.
Relative data paths are also looked up under $HSIC_DATA_DIR.)";

struct Common {
    std::string config;
    std::string out = "out";
    std::string seeds;
    std::string task;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Experiment config file (key = value)");
    cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
    cmd->add_option("--seed", c.seeds, "Seed list override, e.g. 1,2,3");
    cmd->add_option("--task", c.task, "multi or single")->check(CLI::IsMember({"multi", "single"}));
    cmd->add_option("--set", c.sets, "Extra config override key=value (repeatable)");
}

RunConfig build_config(const Common& c, KeyValues extra) {
    KeyValues kv = c.config.empty() ? KeyValues{} : read_key_values(c.config);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (!c.seeds.empty()) kv["seeds"] = c.seeds;
    if (!c.task.empty()) kv["task"] = c.task;
    for (auto& [k, v] : extra) kv[k] = v;
    return config_from_key_values(kv);
}

void print_run(const RunHandle& h, const RunMetrics& m) {
    std::printf("run %s (%s)\n", h.id.c_str(), h.dir.string().c_str());
    for (const auto& r : m.seeds) {
        if (m.config.stage == "pretrain") {
            std::printf("  seed %llu: best epoch %d, val contrastive loss %.6f, %.1fs\n",
                        static_cast<unsigned long long>(r.seed), r.best_epoch, r.pretrain_val_loss, r.wall_time);
        } else {
            std::printf("  seed %llu: accuracy %.2f%% (best epoch %d, %zu/%zu/%zu train/val/test), %.1fs\n",
                        static_cast<unsigned long long>(r.seed), r.accuracy, r.best_epoch, r.train_count, r.val_count,
                        r.test_count, r.wall_time);
        }
    }
    if (m.config.stage != "pretrain") std::printf("  mean accuracy %.2f%%\n", m.mean_accuracy);
}

int run_stage(const Common& c, const std::string& stage, KeyValues extra, const std::string& checkpoint) {
    extra["stage"] = stage;
    const RunConfig cfg = build_config(c, std::move(extra));
    const fs::path out(c.out);
    fs::create_directories(out);
    const LoadedData data = load_data(cfg);
    const RunHandle h = reserve_run(out, stage);
    ExperimentOptions opt{out, std::nullopt, h.dir};
    if (!checkpoint.empty()) opt.pretrained = fs::path(checkpoint);
    try {
        const RunMetrics m = run_experiment(cfg, data.set, opt);
        record_run(out, h, m);
        print_run(h, m);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(h.dir, ec);
        throw;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive pretraining and fine-tuning for hyperspectral patch classification"};
    app.footer(kExitCodes);
    app.require_subcommand(1);
    app.fallthrough();
    bool serial = false;
    app.add_flag("--serial", serial, "Disable the OpenMP kernels");

    Common c;
    std::string mode, scheme, axis, checkpoint;
    unsigned jobs = 1;

    auto* sample = app.add_subcommand("sample-patches", "Sample patches and write a patch-set directory with its census");
    add_common(sample, c);

    auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining of the encoder, one checkpoint per seed");
    add_common(pretrain, c);

    auto* finetune = app.add_subcommand("finetune", "Fine-tune a classifier on top of the pretrained encoder");
    add_common(finetune, c);
    finetune->add_option("--mode", mode, "cl-tune or cl-freeze")->check(CLI::IsMember({"cl-tune", "cl-freeze"}));
    finetune->add_option("--checkpoint", checkpoint, "Pretrained encoder directory (default: cache under --out)");

    auto* baseline = app.add_subcommand("baseline", "Supervised autoencoder + classifier scheme");
    add_common(baseline, c);
    baseline->add_option("--scheme", scheme, "iterative, joint or cascade")
        ->check(CLI::IsMember({"iterative", "joint", "cascade"}));

    auto* sweep = app.add_subcommand("sweep", "Run one axis of values and plot mean accuracy");
    add_common(sweep, c);
    sweep->add_option("--axis", axis, "reduction, hidden or temperature")
        ->required()
        ->check(CLI::IsMember({"reduction", "hidden", "temperature"}));
    sweep->add_option("--jobs", jobs, "Concurrent sweep points")->check(CLI::PositiveNumber);
    sweep->add_option("--mode", mode, "cl-tune or cl-freeze")->check(CLI::IsMember({"cl-tune", "cl-freeze"}));
    sweep->add_option("--scheme", scheme, "Baseline scheme when stage = baseline")
        ->check(CLI::IsMember({"iterative", "joint", "cascade"}));
    sweep->add_option("--checkpoint", checkpoint, "Pretrained encoder directory");

    auto* export_cmd = app.add_subcommand("export-embeddings", "Write encoder outputs of every patch as CSV");
    add_common(export_cmd, c);
    export_cmd->add_option("--checkpoint", checkpoint, "Trained model directory (a run's seed-<s> folder)")->required();

    auto* report = app.add_subcommand("report", "Rebuild results.csv from the run records under --out");
    add_common(report, c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return exit_code(ErrorCategory::usage);
    }
    if (serial) kernels::set_parallel(false);

    try {
        if (*sample) {
            const RunConfig cfg = build_config(c, {});
            const LoadedData data = load_data(cfg);
            const fs::path dir = fs::path(c.out) / ("patches-" + data::to_string(cfg.task));
            data::save_patch_set(data.set, dir, data.source);
            const auto cs = data::census(data.set);
            std::printf("%s %s-label: %zu patches (%zu mixed, %zu uniform) -> %s\n", cfg.dataset.c_str(),
                        data::to_string(cfg.task).c_str(), cs.total, cs.mixed, cs.uniform, dir.string().c_str());
            return 0;
        }
        if (*pretrain) return run_stage(c, "pretrain", {}, "");
        if (*finetune) {
            KeyValues extra;
            if (!mode.empty()) extra["mode"] = mode;
            return run_stage(c, "finetune", extra, checkpoint);
        }
        if (*baseline) {
            KeyValues extra;
            if (!scheme.empty()) extra["scheme"] = scheme;
            return run_stage(c, "baseline", extra, "");
        }
        if (*sweep) {
            KeyValues extra;
            if (!mode.empty()) extra["mode"] = mode;
            if (!scheme.empty()) extra["scheme"] = scheme;
            RunConfig cfg = build_config(c, extra);
            if (cfg.stage == "pretrain") throw ConfigError("sweeps need stage finetune or baseline");
            const fs::path out(c.out);
            fs::create_directories(out);
            const LoadedData data = load_data(cfg);
            SweepOptions opt{out, std::nullopt, jobs, std::nullopt};
            if (!checkpoint.empty()) opt.pretrained = fs::path(checkpoint);
            const SweepResult res = run_sweep(cfg, parse_axis(axis), data.set, opt);
            for (const auto& p : res.points) {
                std::printf("%s = %g: mean accuracy %.2f%%\n", axis.c_str(), p.value, p.metrics.mean_accuracy);
            }
            std::printf("wrote %s and %s\n", res.csv.string().c_str(), res.svg.string().c_str());
            return 0;
        }
        if (*export_cmd) {
            const RunConfig cfg = build_config(c, {});
            const ckpt::Model model = ckpt::load_model(checkpoint);
            const LoadedData data = load_data(cfg);
            const fs::path csv = fs::path(c.out) / "embeddings.csv";
            const std::size_t n = export_embeddings(model, data.set, csv);
            std::printf("wrote %zu rows to %s\n", n, csv.string().c_str());
            return 0;
        }
        if (*report) {
            const std::size_t n = regenerate_results(c.out);
            std::printf("wrote %zu rows to %s\n", n, (fs::path(c.out) / "results.csv").string().c_str());
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << category_name(e.category()) << ": " << e.what() << '\n';
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return exit_code(ErrorCategory::internal);
    }
    return exit_code(ErrorCategory::usage);
}
