#pragma once

// Checkpoint directories: one .npy per parameter tensor plus manifest.json.

#include <filesystem>

#include "json.hpp"

#include "hsic/classifier.hpp"
#include "hsic/dataset.hpp"
#include "hsic/nn.hpp"
#include "hsic/sscl.hpp"

namespace hsic::ckpt {

using nlohmann::json;

/// Writes each tensor as <name>.npy and the manifest (with a "tensors" shape map).
void save_tensors(const std::filesystem::path& dir, const nn::ConstNamedParams& params, json manifest);

json load_manifest(const std::filesystem::path& dir);

/// Fills already shaped tensors; any missing file or shape disagreement is a CheckpointError.
void load_tensors(const std::filesystem::path& dir, const nn::NamedParams& params);

struct Pretrained {
    sscl::EncoderParams encoder;
    sscl::ProjectionParams projection;
    data::BandStats stats;
    json manifest;
};

/// `meta` is merged into the manifest (seed, temperature, epoch, config hash, …).
void save_pretrained(const std::filesystem::path& dir, const sscl::EncoderParams& encoder,
                     const sscl::ProjectionParams& projection, const data::BandStats& stats, json meta);
Pretrained load_pretrained(const std::filesystem::path& dir);

struct Model {
    classifier::TrainedModel model;
    data::BandStats stats;
    json manifest;
};

void save_model(const std::filesystem::path& dir, const classifier::TrainedModel& model, const data::BandStats& stats,
                json meta);
Model load_model(const std::filesystem::path& dir);

}  // namespace hsic::ckpt
