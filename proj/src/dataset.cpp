#include "hsic/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "hsic/error.hpp"
#include "hsic/npy.hpp"
#include "hsic/rng.hpp"

namespace hsic::data {

namespace fs = std::filesystem;
using nlohmann::json;

HsiCube make_cube(std::size_t height, std::size_t width, std::size_t bands, std::vector<float> reflectance,
                  std::vector<int> gt, int num_classes) {
    if (height == 0 || width == 0 || bands == 0) throw ShapeError("cube extents must be positive");
    if (reflectance.size() != height * width * bands) {
        throw ShapeError("reflectance length does not match " + std::to_string(height) + "x" +
                         std::to_string(width) + "x" + std::to_string(bands));
    }
    if (gt.size() != height * width) {
        throw ShapeError("ground truth length does not match the cube's spatial extents");
    }
    int max_label = 0;
    for (int v : gt) {
        if (v < 0) throw DataFormatError("ground truth holds negative label " + std::to_string(v));
        max_label = std::max(max_label, v);
    }
    if (num_classes <= 0) num_classes = max_label;
    if (max_label > num_classes) {
        throw DataFormatError("ground truth label " + std::to_string(max_label) + " exceeds class count " +
                              std::to_string(num_classes));
    }
    HsiCube cube;
    cube.height = height;
    cube.width = width;
    cube.bands = bands;
    cube.num_classes = num_classes;
    cube.reflectance = std::move(reflectance);
    cube.gt = std::move(gt);
    return cube;
}

HsiCube load_cube(const fs::path& data_path, const fs::path& gt_path, int num_classes) {
    Tensor data = npy::load_float(data_path);
    npy::IntArray gt = npy::load_int(gt_path);
    if (data.rank() != 3) {
        throw DataFormatError(data_path.string() + ": expected a height×width×bands array, got " + shape_str(data.shape()));
    }
    if (gt.shape.size() != 2) {
        throw DataFormatError(gt_path.string() + ": expected a height×width label array, got " + shape_str(gt.shape));
    }
    if (gt.shape[0] != data.dim(0) || gt.shape[1] != data.dim(1)) {
        throw ShapeError("extent mismatch: cube " + shape_str(data.shape()) + " vs ground truth " + shape_str(gt.shape));
    }
    std::vector<int> labels(gt.data.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (gt.data[i] < 0 || gt.data[i] > std::numeric_limits<int>::max()) {
            throw DataFormatError(gt_path.string() + ": label out of range");
        }
        labels[i] = static_cast<int>(gt.data[i]);
    }
    return make_cube(data.dim(0), data.dim(1), data.dim(2), data.vec(), std::move(labels), num_classes);
}

std::string to_string(Task t) { return t == Task::multi ? "multi" : "single"; }

Task parse_task(const std::string& s) {
    if (s == "multi") return Task::multi;
    if (s == "single") return Task::single;
    throw InvalidArgument("unknown task '" + s + "' (expected multi or single)");
}

PatchSet sample_patches(const HsiCube& cube, std::size_t p, Task task) {
    if (p == 0) throw InvalidArgument("patch size must be at least 1");
    if (task == Task::single && p % 2 == 0) throw InvalidArgument("single-label patches need an odd size");
    if (p > cube.height || p > cube.width) {
        throw InvalidArgument("patch size " + std::to_string(p) + " exceeds scene extent");
    }
    PatchSet set;
    set.patch_size = p;
    set.bands = cube.bands;
    set.num_classes = cube.num_classes;
    set.task = task;
    const std::size_t tiles_r = cube.height / p, tiles_c = cube.width / p;
    for (std::size_t tr = 0; tr < tiles_r; ++tr) {
        for (std::size_t tc = 0; tc < tiles_c; ++tc) {
            const std::size_t r0 = tr * p, c0 = tc * p;
            std::set<int> distinct;
            for (std::size_t dr = 0; dr < p; ++dr) {
                for (std::size_t dc = 0; dc < p; ++dc) distinct.insert(cube.label(r0 + dr, c0 + dc));
            }
            const int centre = cube.label(r0 + p / 2, c0 + p / 2);
            if (task == Task::multi && distinct.size() == 1 && *distinct.begin() == 0) continue;
            if (task == Task::single && centre == 0) continue;

            Patch patch;
            patch.row = r0;
            patch.col = c0;
            patch.is_mixed = distinct.size() > 1;
            for (int v : distinct) {
                if (v != 0) patch.label_multi.push_back(v);
            }
            if (p % 2 == 1 && centre != 0) patch.label_single = centre;
            patch.pixels.reserve(p * p * cube.bands);
            for (std::size_t dr = 0; dr < p; ++dr) {
                const float* row = cube.reflectance.data() + ((r0 + dr) * cube.width + c0) * cube.bands;
                patch.pixels.insert(patch.pixels.end(), row, row + p * cube.bands);
            }
            set.patches.push_back(std::move(patch));
        }
    }
    return set;
}

Census census(const PatchSet& set) {
    Census c;
    for (const auto& p : set.patches) (p.is_mixed ? c.mixed : c.uniform)++;
    c.total = set.size();
    return c;
}

BandStats compute_band_stats(const PatchSet& set, std::span<const std::size_t> indices) {
    if (indices.empty()) throw InvalidArgument("band statistics need at least one patch");
    const std::size_t b = set.bands;
    std::vector<double> sum(b, 0.0), sq(b, 0.0);
    std::size_t count = 0;
    for (std::size_t idx : indices) {
        const auto& px = set.patches.at(idx).pixels;
        for (std::size_t i = 0; i < px.size(); ++i) sum[i % b] += px[i];
        count += px.size() / b;
    }
    BandStats stats;
    stats.mean.resize(b);
    stats.std.resize(b);
    for (std::size_t k = 0; k < b; ++k) stats.mean[k] = static_cast<float>(sum[k] / static_cast<double>(count));
    // Second pass around the mean for accuracy.
    for (std::size_t idx : indices) {
        const auto& px = set.patches[idx].pixels;
        for (std::size_t i = 0; i < px.size(); ++i) {
            const double d = px[i] - sum[i % b] / static_cast<double>(count);
            sq[i % b] += d * d;
        }
    }
    for (std::size_t k = 0; k < b; ++k) {
        const double s = std::sqrt(sq[k] / static_cast<double>(count));
        stats.std[k] = s < kMinBandStd ? 1.0f : static_cast<float>(s);
    }
    return stats;
}

PatchSet normalize(PatchSet set, const BandStats& stats) {
    const std::size_t b = set.bands;
    if (stats.mean.size() != b || stats.std.size() != b) throw ShapeError("band statistics do not match band count");
    for (auto& p : set.patches) {
        for (std::size_t i = 0; i < p.pixels.size(); ++i) {
            p.pixels[i] = (p.pixels[i] - stats.mean[i % b]) / stats.std[i % b];
        }
    }
    return set;
}

namespace {
std::uint64_t pixel_hash(const std::vector<float>& px) { return fnv1a64(px.data(), px.size() * sizeof(float)); }

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}
}  // namespace

std::vector<Patch> dedup_batch(std::vector<Patch> batch) {
    std::unordered_multimap<std::uint64_t, std::size_t> seen;
    std::vector<Patch> out;
    out.reserve(batch.size());
    for (auto& p : batch) {
        const auto h = pixel_hash(p.pixels);
        auto [lo, hi] = seen.equal_range(h);
        bool dup = false;
        for (auto it = lo; it != hi && !dup; ++it) dup = same_bits(out[it->second].pixels, p.pixels);
        if (dup) continue;
        seen.emplace(h, out.size());
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<std::size_t> dedup_indices(const PatchSet& set, std::span<const std::size_t> indices) {
    std::unordered_multimap<std::uint64_t, std::size_t> seen;
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        const auto& px = set.patches.at(idx).pixels;
        const auto h = pixel_hash(px);
        auto [lo, hi] = seen.equal_range(h);
        bool dup = false;
        for (auto it = lo; it != hi && !dup; ++it) dup = same_bits(set.patches[it->second].pixels, px);
        if (dup) continue;
        seen.emplace(h, idx);
        out.push_back(idx);
    }
    return out;
}

namespace {
std::uint64_t digest_of(const std::vector<std::size_t>& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t x : v) {
        const std::uint64_t w = x;
        h = fnv1a64(&w, sizeof w, h);
    }
    return h;
}
}  // namespace

std::uint64_t SplitPlan::test_digest() const { return digest_of(cls_test); }

std::uint64_t SplitPlan::digest() const {
    std::uint64_t h = digest_of(cls_train);
    h = digest_of(cls_val, h);
    h = digest_of(cls_test, h);
    h = digest_of(pretrain_train, h);
    return digest_of(pretrain_val, h);
}

SplitPlan make_splits(std::size_t n, std::uint64_t seed, double reduction) {
    if (n < 10) throw InvalidArgument("splitting needs at least 10 patches, got " + std::to_string(n));
    if (std::find(std::begin(kAllowedReductions), std::end(kAllowedReductions), reduction) == std::end(kAllowedReductions)) {
        throw InvalidArgument("reduction fraction must be one of 1.0, 0.5, 0.4, 0.2");
    }
    SplitPlan plan;
    plan.reduction = reduction;

    Rng cls_rng = Rng::derive(seed, "split/classifier");
    const auto perm = cls_rng.permutation(n);
    const auto n_test = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
    const std::size_t n_val = n - n_test - n_train;
    plan.cls_test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    auto train_begin = perm.begin() + static_cast<std::ptrdiff_t>(n_test);
    auto val_begin = train_begin + static_cast<std::ptrdiff_t>(n_train);
    const auto keep_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(reduction * static_cast<double>(n_train))));
    const auto keep_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(reduction * static_cast<double>(n_val))));
    plan.cls_train.assign(train_begin, train_begin + static_cast<std::ptrdiff_t>(keep_train));
    plan.cls_val.assign(val_begin, val_begin + static_cast<std::ptrdiff_t>(keep_val));

    Rng pre_rng = Rng::derive(seed, "split/pretrain");
    const auto pperm = pre_rng.permutation(n);
    const auto n_pre_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    plan.pretrain_train.assign(pperm.begin(), pperm.end() - static_cast<std::ptrdiff_t>(n_pre_val));
    plan.pretrain_val.assign(pperm.end() - static_cast<std::ptrdiff_t>(n_pre_val), pperm.end());
    return plan;
}

std::uint64_t file_checksum(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataNotFoundError("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h = fnv1a64(buf.data(), static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

namespace {
std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::ofstream open_text(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataFormatError("cannot write " + path.string());
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::stringstream ss(s);
    while (std::getline(ss, cur, sep)) parts.push_back(cur);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}
}  // namespace

void save_patch_set(const PatchSet& set, const fs::path& dir, const SourceInfo& source) {
    if (set.empty()) throw InvalidArgument("refusing to persist an empty patch set");
    fs::create_directories(dir);
    const std::size_t p = set.patch_size;
    std::vector<float> all;
    all.reserve(set.size() * set.pixel_count());
    for (const auto& patch : set.patches) all.insert(all.end(), patch.pixels.begin(), patch.pixels.end());
    npy::save(dir / "patches.npy", Tensor({set.size(), p, p, set.bands}, std::move(all)));

    auto multi = open_text(dir / "labels_multi.csv");
    auto single = open_text(dir / "labels_single.csv");
    auto origins = open_text(dir / "origins.csv");
    multi << "patch_id,labels\n";
    single << "patch_id,label\n";
    origins << "patch_id,row,col,mixed\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& patch = set.patches[i];
        multi << i << ',';
        for (std::size_t k = 0; k < patch.label_multi.size(); ++k) multi << (k ? ";" : "") << patch.label_multi[k];
        multi << '\n';
        single << i << ',';
        if (patch.label_single) single << *patch.label_single;
        single << '\n';
        origins << i << ',' << patch.row << ',' << patch.col << ',' << (patch.is_mixed ? 1 : 0) << '\n';
    }

    const Census c = census(set);
    json manifest = {
        {"patch_size", p},
        {"stride", p},
        {"bands", set.bands},
        {"num_classes", set.num_classes},
        {"task", to_string(set.task)},
        {"count", set.size()},
        {"census", {{"mixed", c.mixed}, {"uniform", c.uniform}, {"total", c.total}}},
        {"sources",
         {{"data", {{"path", source.data_path}, {"fnv1a64", hex64(source.data_checksum)}}},
          {"gt", {{"path", source.gt_path}, {"fnv1a64", hex64(source.gt_checksum)}}}}},
    };
    open_text(dir / "manifest.json") << manifest.dump(2) << '\n';
}

PatchSet load_patch_set(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw DataNotFoundError("no patch set manifest at " + manifest_path.string());
    json manifest;
    try {
        std::ifstream in(manifest_path);
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw DataFormatError(manifest_path.string() + ": " + e.what());
    }
    PatchSet set;
    set.patch_size = manifest.at("patch_size").get<std::size_t>();
    set.bands = manifest.at("bands").get<std::size_t>();
    set.num_classes = manifest.at("num_classes").get<int>();
    set.task = parse_task(manifest.at("task").get<std::string>());
    const auto count = manifest.at("count").get<std::size_t>();

    Tensor all = npy::load_float(dir / "patches.npy");
    const std::size_t per = set.pixel_count();
    if (all.size() != count * per) throw DataFormatError("patches.npy size disagrees with manifest");
    set.patches.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const float* src = all.data().data() + i * per;
        set.patches[i].pixels.assign(src, src + per);
    }

    auto read_rows = [&](const char* name) {
        std::ifstream in(dir / name);
        if (!in) throw DataNotFoundError("missing " + (dir / name).string());
        std::vector<std::vector<std::string>> rows;
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (!line.empty()) rows.push_back(split(line, ','));
        }
        if (rows.size() != count) throw DataFormatError(std::string(name) + " row count disagrees with manifest");
        return rows;
    };
    const auto multi = read_rows("labels_multi.csv");
    const auto single = read_rows("labels_single.csv");
    const auto origins = read_rows("origins.csv");
    try {
        for (std::size_t i = 0; i < count; ++i) {
            auto& patch = set.patches[i];
            if (multi[i].size() > 1 && !multi[i][1].empty()) {
                for (const auto& tok : split(multi[i][1], ';')) patch.label_multi.push_back(std::stoi(tok));
            }
            if (single[i].size() > 1 && !single[i][1].empty()) patch.label_single = std::stoi(single[i][1]);
            patch.row = std::stoul(origins[i].at(1));
            patch.col = std::stoul(origins[i].at(2));
            patch.is_mixed = origins[i].at(3) == "1";
        }
    } catch (const std::logic_error& e) {
        throw DataFormatError("malformed patch set CSV in " + dir.string() + ": " + e.what());
    }
    return set;
}

std::vector<float> multi_hot(const Patch& p, int num_classes) {
    std::vector<float> row(static_cast<std::size_t>(num_classes), 0.0f);
    for (int c : p.label_multi) row.at(static_cast<std::size_t>(c - 1)) = 1.0f;
    return row;
}

HsiCube synthetic_cube(const SyntheticSpec& spec) {
    if (spec.classes < 1 || spec.block == 0) throw InvalidArgument("synthetic scene needs classes >= 1 and block >= 1");
    Rng rng = Rng::derive(spec.seed, "synthetic");
    std::vector<std::vector<float>> means(static_cast<std::size_t>(spec.classes) + 1, std::vector<float>(spec.bands));
    for (auto& m : means) {
        for (auto& v : m) v = static_cast<float>(rng.normal());
    }
    const std::size_t blocks_c = (spec.width + spec.block - 1) / spec.block;
    std::vector<int> gt(spec.height * spec.width);
    std::vector<float> refl(spec.height * spec.width * spec.bands);
    for (std::size_t r = 0; r < spec.height; ++r) {
        for (std::size_t c = 0; c < spec.width; ++c) {
            const std::size_t block_id = (r / spec.block) * blocks_c + c / spec.block;
            int label = 1 + static_cast<int>((r / spec.block + c / spec.block + block_id) % static_cast<std::size_t>(spec.classes));
            if (spec.background_fraction > 0.0 && rng.coin(spec.background_fraction)) label = 0;
            gt[r * spec.width + c] = label;
            const auto& m = means[static_cast<std::size_t>(label)];
            for (std::size_t k = 0; k < spec.bands; ++k) {
                refl[(r * spec.width + c) * spec.bands + k] = m[k] + static_cast<float>(spec.noise * rng.normal());
            }
        }
    }
    return make_cube(spec.height, spec.width, spec.bands, std::move(refl), std::move(gt), spec.classes);
}

}  // namespace hsic::data
