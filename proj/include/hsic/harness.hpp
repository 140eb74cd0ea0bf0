#pragma once

// Sweeps over one axis (reduction, hidden size, temperature) and the
// hidden-representation export.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsic/checkpoint.hpp"
#include "hsic/config.hpp"
#include "hsic/dataset.hpp"
#include "hsic/experiment.hpp"

namespace hsic {

enum class SweepAxis { reduction, hidden, temperature };

SweepAxis parse_axis(const std::string& s);
std::string to_string(SweepAxis a);
std::vector<double> axis_values(SweepAxis a);

/// Copy of `base` with the axis set to `value`.
RunConfig apply_axis(RunConfig base, SweepAxis axis, double value);

struct SweepPoint {
    double value = 0.0;
    RunMetrics metrics;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::reduction;
    std::vector<SweepPoint> points;  // axis order; failed points are absent
    std::filesystem::path csv;
    std::filesystem::path svg;
};

struct SweepOptions {
    std::filesystem::path out;
    std::optional<std::filesystem::path> pretrained;
    unsigned jobs = 1;
    std::optional<std::vector<double>> values;  // defaults to axis_values(axis)
};

/// Runs every axis value with all other settings fixed, records each run,
/// writes sweep-<axis>.csv (one row per value and seed plus a mean row per
/// value) and sweep-<axis>.svg. Points run on up to `jobs` worker threads;
/// records are written in axis order afterwards. If any point fails, the
/// completed ones are still written and the first error is rethrown.
SweepResult run_sweep(const RunConfig& base, SweepAxis axis, const data::PatchSet& set, const SweepOptions& options);

/// Accuracy-vs-axis line plot of the per-value means.
std::string sweep_svg(SweepAxis axis, const std::vector<SweepPoint>& points);

/// One row per patch: patch_id, labels (';'-joined), then the p·p·h encoder
/// outputs. The checkpoint's band statistics normalise the patches first.
/// Returns the number of rows written.
std::size_t export_embeddings(const ckpt::Model& model, const data::PatchSet& set, const std::filesystem::path& out_csv);

}  // namespace hsic
