#include "hsic/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include "hsic/error.hpp"
#include "hsic/rng.hpp"

namespace hsic {

namespace fs = std::filesystem;
using nlohmann::json;

LoadedData load_data(const RunConfig& c) {
    LoadedData out;
    if (!c.patches_dir.empty()) {
        out.set = data::load_patch_set(resolve_data_path(c.patches_dir));
        if (out.set.task != c.task) {
            throw ConfigError("patch set at " + c.patches_dir + " was sampled for the " + data::to_string(out.set.task) +
                              "-label task");
        }
        return out;
    }
    data::HsiCube cube;
    if (c.dataset == "synthetic") {
        cube = data::synthetic_cube(c.synthetic);
        out.source.data_path = "synthetic";
    } else {
        if (c.data_path.empty() || c.gt_path.empty()) {
            throw ConfigError("dataset '" + c.dataset + "' needs data_path and gt_path");
        }
        const fs::path dp = resolve_data_path(c.data_path), gp = resolve_data_path(c.gt_path);
        cube = data::load_cube(dp, gp, c.num_classes);
        out.source = {dp.string(), gp.string(), data::file_checksum(dp), data::file_checksum(gp)};
    }
    out.set = data::sample_patches(cube, c.patch_size, c.task);
    return out;
}

sscl::PretrainSettings pretrain_settings(const RunConfig& c) {
    sscl::PretrainSettings s;
    s.hidden = c.hidden;
    s.encoder_width = c.encoder_width;
    s.projection_hidden = c.projection_hidden;
    s.projection_dim = c.projection_dim;
    s.temperature = c.temperature;
    s.dropout = c.dropout_pretrain;
    s.hyper = c.pretrain;
    return s;
}

classifier::FinetuneSettings finetune_settings(const RunConfig& c) {
    classifier::FinetuneSettings s;
    s.task = c.task;
    s.mode = classifier::parse_mode(c.mode);
    s.hyper = c.finetune;
    s.dropout_encoder = c.dropout_encoder;
    s.dropout_classifier = c.dropout_classifier;
    s.threshold = c.threshold;
    s.metric = metrics::parse_multi_metric(c.metric);
    s.positive_weight = c.positive_weight;
    return s;
}

namespace {

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t fold(const std::vector<std::uint64_t>& digests) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto d : digests) h = fnv1a64(&d, sizeof d, h);
    return h;
}

// Serialises concurrent requests for the same pretrained encoder.
std::mutex& cache_lock(const fs::path& key) {
    static std::mutex guard;
    static std::map<std::string, std::unique_ptr<std::mutex>> locks;
    std::lock_guard lk(guard);
    auto& slot = locks[key.string()];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

// Band statistics come from the full training split so one pretrained encoder
// serves every reduction fraction of a seed.
data::BandStats stats_for_seed(const data::PatchSet& set, std::uint64_t seed) {
    return data::compute_band_stats(set, data::make_splits(set.size(), seed, 1.0).cls_train);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_dims(const RunConfig& c, const data::PatchSet& set) {
    if (set.patch_size != c.patch_size) {
        throw ConfigError("patch set has " + std::to_string(set.patch_size) + "x" + std::to_string(set.patch_size) +
                          " patches but the config asks for patch_size " + std::to_string(c.patch_size));
    }
    if (set.task != c.task) throw ConfigError("patch set task does not match the config task");
    if (set.size() < 10) throw DataFormatError("only " + std::to_string(set.size()) + " patches; at least 10 are needed");
}

}  // namespace

ckpt::Pretrained pretrained_for_seed(const RunConfig& c, const data::PatchSet& set, std::uint64_t seed,
                                     const ExperimentOptions& opt) {
    if (opt.pretrained) {
        const fs::path per_seed = *opt.pretrained / ("seed-" + std::to_string(seed));
        return ckpt::load_pretrained(fs::exists(per_seed) ? per_seed : *opt.pretrained);
    }
    const fs::path dir = opt.out / "pretrained" / hex(c.pretrain_hash(seed)).substr(0, 12) / ("seed-" + std::to_string(seed));
    std::lock_guard lk(cache_lock(dir));
    if (fs::exists(dir / "manifest.json")) return ckpt::load_pretrained(dir);

    const data::BandStats stats = stats_for_seed(set, seed);
    const data::PatchSet norm = data::normalize(set, stats);
    const auto splits = data::make_splits(set.size(), seed, 1.0);
    auto result = sscl::pretrain(norm, splits.pretrain_train, splits.pretrain_val, pretrain_settings(c), seed);
    json meta = {{"seed", seed},
                 {"temperature", c.temperature},
                 {"best_epoch", result.best_epoch},
                 {"train_loss", result.train_loss},
                 {"val_loss", result.val_loss},
                 {"trajectory_digest", hex(fold(result.epoch_digests))},
                 {"config", c.to_json()}};
    ckpt::save_pretrained(dir, result.encoder, result.projection, stats, meta);
    ckpt::Pretrained p;
    p.encoder = std::move(result.encoder);
    p.projection = std::move(result.projection);
    p.stats = stats;
    p.manifest = std::move(meta);
    return p;
}

RunMetrics run_experiment(const RunConfig& c, const ExperimentOptions& opt) {
    return run_experiment(c, load_data(c).set, opt);
}

RunMetrics run_experiment(const RunConfig& c, const data::PatchSet& set, const ExperimentOptions& opt) {
    c.validate();
    check_dims(c, set);
    const auto run_start = std::chrono::steady_clock::now();
    RunMetrics m;
    m.config = c;
    const auto fs_settings = finetune_settings(c);

    for (std::uint64_t seed : c.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        SeedResult r;
        r.seed = seed;
        const auto splits = data::make_splits(set.size(), seed, c.reduction);
        r.split_digest = splits.digest();
        r.test_digest = splits.test_digest();
        r.train_count = splits.cls_train.size();
        r.val_count = splits.cls_val.size();
        r.test_count = splits.cls_test.size();
        const fs::path seed_dir = opt.run_dir.empty() ? fs::path{} : opt.run_dir / ("seed-" + std::to_string(seed));

        if (c.stage == "pretrain") {
            auto p = pretrained_for_seed(c, set, seed, opt);
            r.accuracy = std::numeric_limits<double>::quiet_NaN();
            r.train_count = splits.pretrain_train.size();
            r.val_count = splits.pretrain_val.size();
            r.test_count = 0;
            r.best_epoch = p.manifest.value("best_epoch", -1);
            const auto& vl = p.manifest.at("val_loss");
            if (r.best_epoch >= 0 && static_cast<std::size_t>(r.best_epoch) < vl.size()) {
                r.pretrain_val_loss = vl.at(static_cast<std::size_t>(r.best_epoch)).get<double>();
            }
            r.trajectory_digest = std::stoull(p.manifest.value("trajectory_digest", std::string("0")), nullptr, 16);
            if (!seed_dir.empty()) {
                ckpt::save_pretrained(seed_dir, p.encoder, p.projection, p.stats, p.manifest);
            }
        } else if (c.stage == "finetune") {
            auto p = pretrained_for_seed(c, set, seed, opt);
            const data::PatchSet norm = data::normalize(set, p.stats);
            Rng init = Rng::derive(seed, "init/classifier");
            auto head = classifier::ClassifierParams::init(p.encoder.output_size(), static_cast<std::size_t>(set.num_classes),
                                                           init, c.classifier_hidden);
            auto res = classifier::finetune(std::move(p.encoder), std::move(head), norm, splits.cls_train, splits.cls_val,
                                            splits.cls_test, fs_settings, seed);
            r.accuracy = res.test.accuracy;
            r.val_accuracy = res.val_accuracy_best;
            r.best_epoch = res.best_epoch;
            r.trajectory_digest = fold(res.epoch_digests);
            if (!seed_dir.empty()) {
                ckpt::save_model(seed_dir, res.model, p.stats,
                                 {{"seed", seed}, {"mode", c.mode}, {"best_epoch", res.best_epoch}, {"config", c.to_json()}});
            }
        } else {
            const data::BandStats stats = stats_for_seed(set, seed);
            const data::PatchSet norm = data::normalize(set, stats);
            Rng init_enc = Rng::derive(seed, "init/encoder");
            auto enc = sscl::EncoderParams::init(c.patch_size, set.bands, c.hidden, init_enc, c.encoder_width);
            Rng init_dec = Rng::derive(seed, "init/decoder");
            auto dec = baselines::DecoderParams::init(c.patch_size, c.hidden, set.bands, init_dec, c.decoder_width);
            Rng init_head = Rng::derive(seed, "init/classifier");
            auto head = classifier::ClassifierParams::init(enc.output_size(), static_cast<std::size_t>(set.num_classes),
                                                           init_head, c.classifier_hidden);
            const baselines::SchemeConfig sc{baselines::parse_scheme(c.scheme), c.joint_lambda};
            auto res = baselines::train_scheme(sc, std::move(enc), std::move(dec), std::move(head), norm, splits.cls_train,
                                               splits.cls_val, splits.cls_test, fs_settings, seed);
            r.accuracy = res.test.accuracy;
            r.best_epoch = res.best_epoch;
            if (res.best_epoch >= 0) r.val_accuracy = res.val_accuracy.at(static_cast<std::size_t>(res.best_epoch));
            if (!seed_dir.empty()) {
                ckpt::save_model(seed_dir, res.model, stats,
                                 {{"seed", seed}, {"scheme", c.scheme}, {"best_epoch", res.best_epoch}, {"config", c.to_json()}});
            }
        }
        r.wall_time = seconds_since(t0);
        m.seeds.push_back(r);
    }

    double sum = 0.0;
    for (const auto& r : m.seeds) sum += r.accuracy;
    m.mean_accuracy = sum / static_cast<double>(m.seeds.size());
    m.wall_time = seconds_since(run_start);
    return m;
}

// Results records --------------------------------------------------------

RunHandle reserve_run(const fs::path& out, const std::string& stage) {
    static std::mutex guard;
    std::lock_guard lk(guard);
    const fs::path runs = out / "runs";
    fs::create_directories(runs);
    int next = 1;
    for (const auto& entry : fs::directory_iterator(runs)) {
        const std::string name = entry.path().filename().string();
        try {
            next = std::max(next, std::stoi(name.substr(0, name.find('-'))) + 1);
        } catch (const std::exception&) {
        }
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", next);
    RunHandle h{next, std::string(buf) + "-" + stage, {}};
    h.dir = runs / h.id;
    fs::create_directories(h.dir);
    return h;
}

json to_json(const RunMetrics& m) {
    json seeds = json::array();
    for (const auto& r : m.seeds) {
        seeds.push_back({{"seed", r.seed},
                         {"accuracy", std::isnan(r.accuracy) ? json(nullptr) : json(r.accuracy)},
                         {"val_accuracy", r.val_accuracy},
                         {"pretrain_val_loss", r.pretrain_val_loss},
                         {"best_epoch", r.best_epoch},
                         {"train_count", r.train_count},
                         {"val_count", r.val_count},
                         {"test_count", r.test_count},
                         {"split_digest", hex(r.split_digest)},
                         {"test_digest", hex(r.test_digest)},
                         {"trajectory_digest", hex(r.trajectory_digest)},
                         {"wall_time", r.wall_time}});
    }
    return {{"config", m.config.to_json()},
            {"metric", m.config.task == data::Task::multi ? m.config.metric : std::string("overall")},
            {"seeds", seeds},
            {"mean_accuracy", std::isnan(m.mean_accuracy) ? json(nullptr) : json(m.mean_accuracy)},
            {"wall_time", m.wall_time}};
}

RunMetrics metrics_from_json(const json& j) {
    try {
        RunMetrics m;
        m.config = config_from_json(j.at("config"));
        auto num = [](const json& v) {
            return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
        };
        for (const auto& s : j.at("seeds")) {
            SeedResult r;
            r.seed = s.at("seed").get<std::uint64_t>();
            r.accuracy = num(s.at("accuracy"));
            r.val_accuracy = s.at("val_accuracy").get<double>();
            r.pretrain_val_loss = s.at("pretrain_val_loss").get<double>();
            r.best_epoch = s.at("best_epoch").get<int>();
            r.train_count = s.at("train_count").get<std::size_t>();
            r.val_count = s.at("val_count").get<std::size_t>();
            r.test_count = s.at("test_count").get<std::size_t>();
            r.split_digest = std::stoull(s.at("split_digest").get<std::string>(), nullptr, 16);
            r.test_digest = std::stoull(s.at("test_digest").get<std::string>(), nullptr, 16);
            r.trajectory_digest = std::stoull(s.at("trajectory_digest").get<std::string>(), nullptr, 16);
            r.wall_time = s.at("wall_time").get<double>();
            m.seeds.push_back(r);
        }
        m.mean_accuracy = num(j.at("mean_accuracy"));
        m.wall_time = j.at("wall_time").get<double>();
        return m;
    } catch (const json::exception& e) {
        throw DataFormatError(std::string("malformed run record: ") + e.what());
    }
}

std::vector<std::string> results_rows(const RunMetrics& m) {
    const RunConfig& c = m.config;
    if (c.stage == "pretrain") return {};
    const std::string mode = c.stage == "baseline" ? c.scheme : c.mode;
    std::vector<std::string> rows;
    for (const auto& r : m.seeds) {
        char buf[512];
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%zu,%g,%g,%llu,%.4f,%.3f", c.dataset.c_str(),
                      data::to_string(c.task).c_str(), c.stage.c_str(), mode.c_str(), c.hidden, c.reduction,
                      c.temperature, static_cast<unsigned long long>(r.seed), r.accuracy, r.wall_time);
        rows.emplace_back(buf);
    }
    return rows;
}

void record_run(const fs::path& out, const RunHandle& handle, const RunMetrics& m) {
    static std::mutex guard;
    std::lock_guard lk(guard);
    json j = to_json(m);
    j["sequence"] = handle.sequence;
    j["id"] = handle.id;
    fs::create_directories(handle.dir);
    {
        std::ofstream f(handle.dir / "run.json", std::ios::trunc);
        if (!f) throw Error(ErrorCategory::internal, "cannot write " + (handle.dir / "run.json").string());
        f << j.dump(2) << '\n';
    }
    const fs::path csv = out / "results.csv";
    const bool fresh = !fs::exists(csv);
    std::ofstream f(csv, std::ios::app);
    if (!f) throw Error(ErrorCategory::internal, "cannot append to " + csv.string());
    if (fresh) f << kResultsHeader << '\n';
    for (const auto& row : results_rows(m)) f << row << '\n';
}

std::size_t regenerate_results(const fs::path& out) {
    const fs::path runs = out / "runs";
    if (!fs::exists(runs)) throw DataNotFoundError("no runs directory under " + out.string());
    std::map<int, RunMetrics> ordered;
    for (const auto& entry : fs::directory_iterator(runs)) {
        const fs::path file = entry.path() / "run.json";
        if (!fs::exists(file)) continue;
        std::ifstream in(file);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw DataFormatError(file.string() + ": " + e.what());
        }
        ordered.emplace(j.value("sequence", 0), metrics_from_json(j));
    }
    std::ofstream f(out / "results.csv", std::ios::trunc);
    if (!f) throw Error(ErrorCategory::internal, "cannot write results.csv");
    f << kResultsHeader << '\n';
    std::size_t n = 0;
    for (const auto& [seq, m] : ordered) {
        for (const auto& row : results_rows(m)) {
            f << row << '\n';
            ++n;
        }
    }
    return n;
}

}  // namespace hsic
