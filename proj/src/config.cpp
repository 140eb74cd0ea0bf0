#include "hsic/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "hsic/error.hpp"
#include "hsic/rng.hpp"

namespace hsic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(std::string v) {
    v = trim(v);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) return v.substr(1, v.size() - 2);
    return v;
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

optim::StageHyper hyper(int epochs, std::size_t batch, double lr, double gamma, int step, double l2) {
    return {epochs, batch, lr, gamma, step, l2};
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d != static_cast<double>(static_cast<long long>(d))) throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
    return static_cast<long long>(d);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    const long long i = to_int(key, v);
    if (i < 0) throw ConfigError("key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(i);
}

std::vector<std::string> list_items(const std::string& v) {
    std::string body = trim(v);
    if (!body.empty() && body.front() == '[') body = body.substr(1);
    if (!body.empty() && body.back() == ']') body.pop_back();
    std::vector<std::string> out;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = unquote(item);
        if (item.empty()) throw ConfigError("empty entry in list '" + v + "'");
        out.push_back(item);
    }
    return out;
}

void apply_hyper(optim::StageHyper& h, const std::string& key, const std::string& field, const std::string& v) {
    if (field == "epochs") h.epochs = static_cast<int>(to_int(key, v));
    else if (field == "batch_size") h.batch_size = to_size(key, v);
    else if (field == "lr") h.lr = to_double(key, v);
    else if (field == "gamma") h.gamma = to_double(key, v);
    else if (field == "lr_step") h.lr_step = static_cast<int>(to_int(key, v));
    else if (field == "l2_weight") h.l2_weight = to_double(key, v);
    else throw ConfigError("unknown key '" + key + "'");
}

void apply(RunConfig& c, const std::string& key, const std::string& v) {
    if (key == "dataset") c.dataset = v;
    else if (key == "data_path") c.data_path = v;
    else if (key == "gt_path") c.gt_path = v;
    else if (key == "patches_dir") c.patches_dir = v;
    else if (key == "classes" || key == "num_classes") c.num_classes = static_cast<int>(to_int(key, v));
    else if (key == "task") c.task = data::parse_task(v);
    else if (key == "patch_size") c.patch_size = to_size(key, v);
    else if (key == "stage") c.stage = v;
    else if (key == "mode") c.mode = v;
    else if (key == "scheme") c.scheme = v;
    else if (key == "joint_lambda") c.joint_lambda = to_double(key, v);
    else if (key == "reduction") c.reduction = to_double(key, v);
    else if (key == "seeds" || key == "seed") c.seeds = parse_seed_list(v);
    else if (key == "hidden") c.hidden = to_size(key, v);
    else if (key == "encoder_width") c.encoder_width = to_size(key, v);
    else if (key == "projection_hidden") c.projection_hidden = to_size(key, v);
    else if (key == "projection_dim") c.projection_dim = to_size(key, v);
    else if (key == "classifier_hidden") c.classifier_hidden = to_size(key, v);
    else if (key == "decoder_width") c.decoder_width = to_size(key, v);
    else if (key == "temperature") c.temperature = to_double(key, v);
    else if (key == "threshold") c.threshold = to_double(key, v);
    else if (key == "metric") c.metric = v;
    else if (key == "positive_weight") {
        c.positive_weight.clear();
        for (const auto& item : list_items(v)) c.positive_weight.push_back(static_cast<float>(to_double(key, item)));
    }
    else if (key == "dropout_pretrain") c.dropout_pretrain = to_double(key, v);
    else if (key == "dropout_encoder") c.dropout_encoder = to_double(key, v);
    else if (key == "dropout_classifier") c.dropout_classifier = to_double(key, v);
    else if (key.rfind("pretrain.", 0) == 0) apply_hyper(c.pretrain, key, key.substr(9), v);
    else if (key.rfind("finetune.", 0) == 0) apply_hyper(c.finetune, key, key.substr(9), v);
    else if (key == "synthetic.height") c.synthetic.height = to_size(key, v);
    else if (key == "synthetic.width") c.synthetic.width = to_size(key, v);
    else if (key == "synthetic.bands") c.synthetic.bands = to_size(key, v);
    else if (key == "synthetic.classes") c.synthetic.classes = static_cast<int>(to_int(key, v));
    else if (key == "synthetic.block") c.synthetic.block = to_size(key, v);
    else if (key == "synthetic.noise") c.synthetic.noise = to_double(key, v);
    else if (key == "synthetic.background_fraction") c.synthetic.background_fraction = to_double(key, v);
    else if (key == "synthetic.seed") c.synthetic.seed = static_cast<std::uint64_t>(to_int(key, v));
    else throw ConfigError("unknown key '" + key + "'");
}

json hyper_json(const optim::StageHyper& h) {
    return {{"epochs", h.epochs}, {"batch_size", h.batch_size}, {"lr", h.lr},
            {"gamma", h.gamma},   {"lr_step", h.lr_step},       {"l2_weight", h.l2_weight}};
}

void check_hyper(const optim::StageHyper& h, const char* stage) {
    const std::string s(stage);
    if (h.epochs < 0) throw ConfigError(s + ".epochs must be non-negative");
    if (h.batch_size == 0) throw ConfigError(s + ".batch_size must be positive");
    if (!(h.lr >= 0.0)) throw ConfigError(s + ".lr must be non-negative");
    if (!(h.gamma > 0.0 && h.gamma <= 1.0)) throw ConfigError(s + ".gamma must lie in (0, 1]");
    if (h.lr_step <= 0) throw ConfigError(s + ".lr_step must be positive");
    if (!(h.l2_weight >= 0.0)) throw ConfigError(s + ".l2_weight must be non-negative");
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& item : list_items(s)) {
        try {
            if (!std::isdigit(static_cast<unsigned char>(item.front()))) throw std::invalid_argument(item);
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("seed list entry '" + item + "' is not a non-negative integer");
        }
    }
    if (out.empty()) throw ConfigError("seed list is empty");
    return out;
}

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::stringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        kv[key] = unquote(line.substr(eq + 1));
    }
    return kv;
}

KeyValues read_key_values(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str());
}

std::optional<DatasetInfo> dataset_info(const std::string& dataset) {
    if (dataset == "paviau") return DatasetInfo{"PaviaU.npy", "PaviaU_gt.npy", 9};
    if (dataset == "salinas") return DatasetInfo{"Salinas_corrected.npy", "Salinas_gt.npy", 16};
    if (dataset == "houston2013") return DatasetInfo{"Houston2013.npy", "Houston2013_gt.npy", 15};
    if (dataset == "houston2018") return DatasetInfo{"Houston2018.npy", "Houston2018_gt.npy", 20};
    return std::nullopt;
}

RunConfig preset(const std::string& dataset, data::Task task) {
    RunConfig c;
    c.dataset = dataset;
    c.task = task;
    if (auto info = dataset_info(dataset)) {
        c.data_path = info->data_file;
        c.gt_path = info->gt_file;
        c.num_classes = info->num_classes;
    }
    const bool multi = task == data::Task::multi;
    // Pretraining (encoder) hyper-parameters, then classification ones.
    // Single-label presets use step 10 / gamma 0.9; see docs/config.md.
    if (dataset == "paviau") {
        c.pretrain = multi ? hyper(85, 300, 1e-3, 0.9, 10, 1e-4) : hyper(50, 400, 1e-2, 0.9, 10, 0.0);
        c.dropout_pretrain = multi ? 0.3 : 0.6;
        c.finetune = multi ? hyper(256, 260, 1e-3, 0.9, 10, 1e-4) : hyper(200, 200, 1e-3, 0.9, 10, 3e-4);
        c.dropout_classifier = multi ? 0.6 : 0.2;
        c.dropout_encoder = 0.3;
    } else if (dataset == "salinas") {
        c.pretrain = multi ? hyper(85, 300, 1e-2, 0.9, 7, 1e-5) : hyper(50, 300, 1e-2, 0.9, 10, 0.0);
        c.dropout_pretrain = 0.3;
        c.finetune = multi ? hyper(200, 164, 1e-3, 0.9, 10, 1e-4) : hyper(200, 164, 2e-3, 0.9, 10, 1e-3);
        c.dropout_classifier = multi ? 0.6 : 0.2;
        c.dropout_encoder = 0.3;
    } else if (dataset == "houston2013") {
        c.pretrain = hyper(50, 64, 1e-3, 0.9, 10, 1e-4);
        c.dropout_pretrain = 0.5;
        c.finetune = multi ? hyper(450, 16, 1e-3, 0.6, 20, 5e-4) : hyper(750, 150, 1e-3, 0.6, 75, 1e-4);
        c.dropout_classifier = 0.3;
        c.dropout_encoder = 0.3;
    } else if (dataset == "houston2018") {
        c.pretrain = multi ? hyper(50, 64, 1e-3, 0.9, 10, 1e-4) : hyper(50, 120, 1e-3, 0.9, 10, 1e-4);
        c.dropout_pretrain = multi ? 0.5 : 0.3;
        c.finetune = multi ? hyper(200, 16, 1e-3, 0.9, 20, 9e-6) : hyper(400, 250, 1e-3, 0.9, 50, 5e-5);
        c.dropout_classifier = multi ? 0.2 : 0.3;
        c.dropout_encoder = multi ? 0.2 : 0.3;
    } else {
        // Desk-scale defaults for the synthetic scene and unknown datasets.
        c.pretrain = hyper(30, 32, 1e-3, 0.9, 10, 1e-4);
        c.finetune = hyper(100, 16, 1e-3, 0.9, 20, 1e-3);
        c.dropout_pretrain = 0.1;
        c.dropout_encoder = 0.2;
        c.dropout_classifier = 0.5;
    }
    return c;
}

RunConfig config_from_key_values(const KeyValues& kv) {
    const auto ds = kv.find("dataset");
    const auto task = kv.find("task");
    RunConfig c = preset(ds == kv.end() ? "synthetic" : ds->second,
                         task == kv.end() ? data::Task::multi : data::parse_task(task->second));
    for (const auto& [key, value] : kv) {
        if (key == "dataset" || key == "task") continue;
        apply(c, key, value);
    }
    c.validate();
    return c;
}

RunConfig config_from_json(const json& j) {
    KeyValues kv;
    auto scalar = [](const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_array()) {
            std::string out = "[";
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i].dump();
            return out + "]";
        }
        return v.dump();
    };
    for (const auto& [key, value] : j.items()) {
        if (key == "projection_final_activation") continue;
        if (value.is_object()) {
            for (const auto& [k, v] : value.items()) kv[key + "." + k] = scalar(v);
        } else {
            kv[key] = scalar(value);
        }
    }
    return config_from_key_values(kv);
}

RunConfig load_config(const fs::path& path, const KeyValues& overrides) {
    KeyValues kv = read_key_values(path);
    for (const auto& [k, v] : overrides) kv[k] = v;
    return config_from_key_values(kv);
}

void RunConfig::validate() const {
    if (stage != "pretrain" && stage != "finetune" && stage != "baseline") throw ConfigError("unknown stage '" + stage + "'");
    if (mode != "cl-tune" && mode != "cl-freeze") throw ConfigError("unknown mode '" + mode + "'");
    if (scheme != "iterative" && scheme != "joint" && scheme != "cascade") throw ConfigError("unknown scheme '" + scheme + "'");
    if (metric != "jaccard" && metric != "hamming") throw ConfigError("unknown metric '" + metric + "'");
    if (!(joint_lambda > 0.0 && joint_lambda <= 1.0)) throw ConfigError("joint_lambda must lie in (0, 1]");
    if (std::find(std::begin(data::kAllowedReductions), std::end(data::kAllowedReductions), reduction) ==
        std::end(data::kAllowedReductions)) {
        throw ConfigError("reduction must be one of 1.0, 0.5, 0.4, 0.2");
    }
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (patch_size == 0) throw ConfigError("patch_size must be positive");
    if (hidden == 0 || encoder_width == 0 || projection_hidden == 0 || projection_dim == 0 || classifier_hidden == 0 ||
        decoder_width == 0) {
        throw ConfigError("layer widths must be positive");
    }
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
    for (double d : {dropout_pretrain, dropout_encoder, dropout_classifier}) {
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
    }
    for (float w : positive_weight) {
        if (!(w > 0.0f)) throw ConfigError("positive weights must be > 0");
    }
    check_hyper(pretrain, "pretrain");
    check_hyper(finetune, "finetune");
}

json RunConfig::to_json() const {
    return {
        {"dataset", dataset},
        {"data_path", data_path},
        {"gt_path", gt_path},
        {"patches_dir", patches_dir},
        {"num_classes", num_classes},
        {"synthetic",
         {{"height", synthetic.height},
          {"width", synthetic.width},
          {"bands", synthetic.bands},
          {"classes", synthetic.classes},
          {"block", synthetic.block},
          {"noise", synthetic.noise},
          {"background_fraction", synthetic.background_fraction},
          {"seed", synthetic.seed}}},
        {"task", data::to_string(task)},
        {"patch_size", patch_size},
        {"stage", stage},
        {"mode", mode},
        {"scheme", scheme},
        {"joint_lambda", joint_lambda},
        {"reduction", reduction},
        {"seeds", seeds},
        {"hidden", hidden},
        {"encoder_width", encoder_width},
        {"projection_hidden", projection_hidden},
        {"projection_dim", projection_dim},
        {"projection_final_activation", "none"},
        {"classifier_hidden", classifier_hidden},
        {"decoder_width", decoder_width},
        {"temperature", temperature},
        {"threshold", threshold},
        {"metric", metric},
        {"positive_weight", positive_weight},
        {"dropout_pretrain", dropout_pretrain},
        {"dropout_encoder", dropout_encoder},
        {"dropout_classifier", dropout_classifier},
        {"pretrain", hyper_json(pretrain)},
        {"finetune", hyper_json(finetune)},
    };
}

std::uint64_t RunConfig::hash() const {
    const std::string s = to_json().dump();
    return fnv1a64(s.data(), s.size());
}

std::uint64_t RunConfig::pretrain_hash(std::uint64_t seed) const {
    json j = to_json();
    for (const char* k : {"stage", "mode", "scheme", "joint_lambda", "reduction", "seeds", "threshold", "metric",
                          "positive_weight", "dropout_encoder", "dropout_classifier", "finetune", "classifier_hidden",
                          "decoder_width"}) {
        j.erase(k);
    }
    j["seed"] = seed;
    const std::string s = j.dump();
    return fnv1a64(s.data(), s.size());
}

fs::path resolve_data_path(const std::string& path) {
    if (path.empty()) throw ConfigError("data path is empty");
    fs::path p(path);
    if (p.is_absolute() || fs::exists(p)) return p;
    if (const char* root = std::getenv("HSIC_DATA_DIR")) {
        fs::path candidate = fs::path(root) / p;
        if (fs::exists(candidate)) return candidate;
    }
    return p;
}

}  // namespace hsic
