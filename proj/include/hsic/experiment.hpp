#pragma once

// One configured experiment over a seed list: data loading, splits,
// pretraining (cached per seed), fine-tuning or a baseline scheme, and the
// results records (results.csv rows plus runs/<id>/run.json).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsic/baselines.hpp"
#include "hsic/checkpoint.hpp"
#include "hsic/classifier.hpp"
#include "hsic/config.hpp"
#include "hsic/dataset.hpp"
#include "hsic/sscl.hpp"

namespace hsic {

struct LoadedData {
    data::PatchSet set;
    data::SourceInfo source;
};

/// Builds the patch set the config describes: a saved patch directory, the
/// synthetic scene, or a cube + ground truth pair sampled at patch_size.
LoadedData load_data(const RunConfig& config);

sscl::PretrainSettings pretrain_settings(const RunConfig& config);
classifier::FinetuneSettings finetune_settings(const RunConfig& config);

struct SeedResult {
    std::uint64_t seed = 0;
    double accuracy = 0.0;  // percent on the test split; NaN for the pretrain stage
    double val_accuracy = 0.0;
    double pretrain_val_loss = 0.0;
    int best_epoch = -1;
    std::size_t train_count = 0;
    std::size_t val_count = 0;
    std::size_t test_count = 0;
    std::uint64_t split_digest = 0;
    std::uint64_t test_digest = 0;
    std::uint64_t trajectory_digest = 0;  // folds the per-epoch parameter digests
    double wall_time = 0.0;               // seconds
};

struct RunMetrics {
    RunConfig config;
    std::vector<SeedResult> seeds;
    double mean_accuracy = 0.0;
    double wall_time = 0.0;
};

struct ExperimentOptions {
    std::filesystem::path out;  // checkpoints go under here
    /// Pretrained encoder to fine-tune from. A directory with seed-<s>
    /// subdirectories or a single checkpoint shared by all seeds. Without it
    /// the per-seed cache under <out>/pretrained is used (and filled).
    std::optional<std::filesystem::path> pretrained;
    /// Where this run's own checkpoints go; empty disables saving them.
    std::filesystem::path run_dir;
};

RunMetrics run_experiment(const RunConfig& config, const data::PatchSet& set, const ExperimentOptions& options);
RunMetrics run_experiment(const RunConfig& config, const ExperimentOptions& options);

/// The pretrained encoder for one seed: loaded from options.pretrained, from
/// the cache, or trained (and cached) now.
ckpt::Pretrained pretrained_for_seed(const RunConfig& config, const data::PatchSet& set, std::uint64_t seed,
                                     const ExperimentOptions& options);

// Results records --------------------------------------------------------

struct RunHandle {
    int sequence = 0;
    std::string id;
    std::filesystem::path dir;
};

/// Claims the next sequence number under <out>/runs and creates its directory.
RunHandle reserve_run(const std::filesystem::path& out, const std::string& stage);

nlohmann::json to_json(const RunMetrics& m);
RunMetrics metrics_from_json(const nlohmann::json& j);

inline constexpr const char* kResultsHeader = "dataset,task,stage,mode,h,reduction,T,seed,accuracy,wall_time";

/// The results.csv rows of a run (pretrain runs have none).
std::vector<std::string> results_rows(const RunMetrics& m);

/// Writes run.json into the handle's directory and appends to <out>/results.csv.
void record_run(const std::filesystem::path& out, const RunHandle& handle, const RunMetrics& m);

/// Rebuilds <out>/results.csv from every runs/*/run.json in sequence order.
/// Returns the number of rows written.
std::size_t regenerate_results(const std::filesystem::path& out);

}  // namespace hsic
