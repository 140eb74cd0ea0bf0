#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsic/dataset.hpp"
#include "hsic/optim.hpp"

namespace hsic {

/// Everything one experiment needs. Defaults come from the per-dataset
/// presets; a config file and CLI flags override individual keys.
struct RunConfig {
    // Data
    std::string dataset = "synthetic";
    std::string data_path;  // resolved against HSIC_DATA_DIR when relative
    std::string gt_path;
    std::string patches_dir;  // optional pre-sampled patch set (skips cube loading)
    int num_classes = 0;      // 0: infer from the ground truth
    data::SyntheticSpec synthetic;
    data::Task task = data::Task::multi;
    std::size_t patch_size = 3;

    // What to run
    std::string stage = "finetune";  // pretrain | finetune | baseline
    std::string mode = "cl-tune";    // cl-tune | cl-freeze
    std::string scheme = "joint";    // iterative | joint | cascade
    double joint_lambda = 0.5;
    double reduction = 1.0;
    std::vector<std::uint64_t> seeds = {1, 2, 3};

    // Architecture
    std::size_t hidden = 32;
    std::size_t encoder_width = 128;
    std::size_t projection_hidden = 128;
    std::size_t projection_dim = 64;
    std::size_t classifier_hidden = 64;
    std::size_t decoder_width = 128;

    // Losses and decisions
    double temperature = 0.1;
    double threshold = 0.5;
    std::string metric = "jaccard";  // jaccard | hamming
    std::vector<float> positive_weight;

    // Regularisation
    double dropout_pretrain = 0.3;
    double dropout_encoder = 0.3;
    double dropout_classifier = 0.6;

    optim::StageHyper pretrain;
    optim::StageHyper finetune;

    /// Throws ConfigError when a value is outside its domain.
    void validate() const;

    nlohmann::json to_json() const;
    /// FNV-1a over the canonical JSON dump.
    std::uint64_t hash() const;
    /// Hash of the settings that determine a pretrained encoder (reduction,
    /// mode, scheme and fine-tuning budget excluded).
    std::uint64_t pretrain_hash(std::uint64_t seed) const;
};

/// Known datasets: file names, class counts and the tuned hyper-parameters
/// for the given task. Unknown names yield the generic defaults.
RunConfig preset(const std::string& dataset, data::Task task);

struct DatasetInfo {
    std::string data_file;
    std::string gt_file;
    int num_classes;
};
std::optional<DatasetInfo> dataset_info(const std::string& dataset);

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines with optional `[section]` headers (keys become
/// `section.key`), `#` comments, quoted strings and `[a, b]` lists.
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

/// Starts from preset(dataset, task) and applies every key. Unknown keys are errors.
RunConfig config_from_key_values(const KeyValues& kv);

/// Reads a config file, then applies `overrides` (same key syntax) on top.
RunConfig load_config(const std::filesystem::path& path, const KeyValues& overrides = {});

/// Inverse of RunConfig::to_json.
RunConfig config_from_json(const nlohmann::json& j);

std::vector<std::uint64_t> parse_seed_list(const std::string& s);

/// Resolves data files: absolute paths as-is, otherwise relative to the
/// working directory, then to $HSIC_DATA_DIR.
std::filesystem::path resolve_data_path(const std::string& path);

}  // namespace hsic
