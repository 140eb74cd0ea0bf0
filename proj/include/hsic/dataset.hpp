#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsic/tensor.hpp"

namespace hsic::data {

/// Hyperspectral scene with an aligned ground-truth raster. Label 0 is the
/// unclassified background; classes are 1..num_classes.
struct HsiCube {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    int num_classes = 0;
    std::vector<float> reflectance;  // height × width × bands, row-major
    std::vector<int> gt;             // height × width

    float value(std::size_t r, std::size_t c, std::size_t band) const {
        return reflectance[(r * width + c) * bands + band];
    }
    int label(std::size_t r, std::size_t c) const { return gt[r * width + c]; }
};

/// Validates extents and label range. num_classes <= 0 infers it from the
/// largest label present.
HsiCube make_cube(std::size_t height, std::size_t width, std::size_t bands, std::vector<float> reflectance,
                  std::vector<int> gt, int num_classes = 0);

HsiCube load_cube(const std::filesystem::path& data_path, const std::filesystem::path& gt_path, int num_classes = 0);

enum class Task { multi, single };

std::string to_string(Task t);
Task parse_task(const std::string& s);

struct Patch {
    std::vector<float> pixels;  // p × p × bands
    std::size_t row = 0;        // origin of the top-left pixel in the scene
    std::size_t col = 0;
    std::vector<int> label_multi;  // sorted, background excluded
    std::optional<int> label_single;
    bool is_mixed = false;
};

struct PatchSet {
    std::size_t patch_size = 0;
    std::size_t bands = 0;
    int num_classes = 0;
    Task task = Task::multi;
    std::vector<Patch> patches;

    std::size_t size() const { return patches.size(); }
    bool empty() const { return patches.empty(); }
    std::size_t pixel_count() const { return patch_size * patch_size * bands; }
};

struct Census {
    std::size_t mixed = 0;
    std::size_t uniform = 0;
    std::size_t total = 0;
};

/// Non-overlapping tiling at stride p. Multi-label keeps every tile that is
/// not entirely background; single-label keeps tiles whose centre pixel is a
/// class. Trailing rows/cols that do not fill a whole tile are dropped.
PatchSet sample_patches(const HsiCube& cube, std::size_t patch_size, Task task);

/// Mixed: two or more distinct raw ground-truth values (background included).
Census census(const PatchSet& set);

struct BandStats {
    std::vector<float> mean;
    std::vector<float> std;
};

inline constexpr float kMinBandStd = 1e-8f;

BandStats compute_band_stats(const PatchSet& set, std::span<const std::size_t> indices);
PatchSet normalize(PatchSet set, const BandStats& stats);

/// Drops bitwise-duplicate pixel tensors, keeping first occurrences in order.
std::vector<Patch> dedup_batch(std::vector<Patch> batch);
std::vector<std::size_t> dedup_indices(const PatchSet& set, std::span<const std::size_t> indices);

inline constexpr double kAllowedReductions[] = {1.0, 0.5, 0.4, 0.2};

struct SplitPlan {
    std::vector<std::size_t> pretrain_train;
    std::vector<std::size_t> pretrain_val;
    std::vector<std::size_t> cls_train;
    std::vector<std::size_t> cls_val;
    std::vector<std::size_t> cls_test;
    double reduction = 1.0;

    std::uint64_t test_digest() const;
    std::uint64_t digest() const;
};

/// 10 % test first, then 80 % / 10 % train / val of the whole; reduction
/// keeps a prefix of the shuffled train and val lists so the test list never
/// depends on the fraction. The pretraining 90/10 split is an independent shuffle.
SplitPlan make_splits(std::size_t n, std::uint64_t seed, double reduction);

// On-disk patch set: patches.npy, labels_multi.csv, labels_single.csv,
// origins.csv and manifest.json.
struct SourceInfo {
    std::string data_path;
    std::string gt_path;
    std::uint64_t data_checksum = 0;
    std::uint64_t gt_checksum = 0;
};

std::uint64_t file_checksum(const std::filesystem::path& path);

void save_patch_set(const PatchSet& set, const std::filesystem::path& dir, const SourceInfo& source = {});
PatchSet load_patch_set(const std::filesystem::path& dir);

/// Multi-label target row (num_classes wide, 0/1) for a patch.
std::vector<float> multi_hot(const Patch& p, int num_classes);

/// Blocky scene whose classes have well separated mean spectra plus noise.
struct SyntheticSpec {
    std::size_t height = 30;
    std::size_t width = 30;
    std::size_t bands = 8;
    int classes = 3;
    std::size_t block = 10;
    double noise = 0.1;
    double background_fraction = 0.0;
    std::uint64_t seed = 7;
};

HsiCube synthetic_cube(const SyntheticSpec& spec);

}  // namespace hsic::data
