#include "hsic/checkpoint.hpp"

#include <fstream>

#include "hsic/error.hpp"
#include "hsic/npy.hpp"

namespace hsic::ckpt {

namespace fs = std::filesystem;

namespace {

json encoder_json(const sscl::EncoderParams& e) {
    return {{"patch_size", e.patch_size}, {"bands", e.bands}, {"hidden", e.hidden}, {"encoder_width", e.width()}};
}

sscl::EncoderParams encoder_shell(const json& m) {
    try {
        Rng unused(0);
        return sscl::EncoderParams::init(m.at("patch_size").get<std::size_t>(), m.at("bands").get<std::size_t>(),
                                         m.at("hidden").get<std::size_t>(), unused,
                                         m.at("encoder_width").get<std::size_t>());
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest lacks encoder dimensions: ") + e.what());
    }
}

void save_stats(const fs::path& dir, const data::BandStats& stats) {
    npy::save(dir / "band_mean.npy", Tensor({stats.mean.size()}, stats.mean));
    npy::save(dir / "band_std.npy", Tensor({stats.std.size()}, stats.std));
}

data::BandStats load_stats(const fs::path& dir, std::size_t bands) {
    data::BandStats s;
    try {
        s.mean = npy::load_float(dir / "band_mean.npy").vec();
        s.std = npy::load_float(dir / "band_std.npy").vec();
    } catch (const Error& e) {
        throw CheckpointError(std::string("checkpoint band statistics unreadable: ") + e.what());
    }
    if (s.mean.size() != bands || s.std.size() != bands) throw CheckpointError("checkpoint band statistics have the wrong length");
    return s;
}

}  // namespace

void save_tensors(const fs::path& dir, const nn::ConstNamedParams& params, json manifest) {
    fs::create_directories(dir);
    json shapes = json::object();
    for (const auto& [name, t] : params) {
        npy::save(dir / (name + ".npy"), *t);
        shapes[name] = t->shape();
    }
    manifest["tensors"] = shapes;
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw CheckpointError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

json load_manifest(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    if (!fs::exists(path)) throw CheckpointError("no checkpoint manifest at " + path.string());
    std::ifstream in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

void load_tensors(const fs::path& dir, const nn::NamedParams& params) {
    for (const auto& [name, t] : params) {
        const fs::path file = dir / (name + ".npy");
        if (!fs::exists(file)) throw CheckpointError("checkpoint lacks tensor " + name);
        Tensor loaded = npy::load_float(file);
        if (loaded.shape() != t->shape()) {
            throw CheckpointError("tensor " + name + " has shape " + shape_str(loaded.shape()) + ", expected " +
                                  shape_str(t->shape()));
        }
        *t = std::move(loaded);
    }
}

void save_pretrained(const fs::path& dir, const sscl::EncoderParams& encoder, const sscl::ProjectionParams& projection,
                     const data::BandStats& stats, json meta) {
    nn::ConstNamedParams params = encoder.named();
    for (auto& p : projection.named()) params.push_back(p);
    meta["kind"] = "pretrained-encoder";
    meta["encoder"] = encoder_json(encoder);
    meta["projection"] = {{"hidden", projection.layer1.out()},
                          {"output", projection.layer2.out()},
                          {"final_activation", "none"}};
    save_tensors(dir, params, std::move(meta));
    save_stats(dir, stats);
}

Pretrained load_pretrained(const fs::path& dir) {
    Pretrained p;
    p.manifest = load_manifest(dir);
    if (p.manifest.value("kind", "") != "pretrained-encoder") throw CheckpointError(dir.string() + " is not a pretrained encoder checkpoint");
    p.encoder = encoder_shell(p.manifest.at("encoder"));
    Rng unused(0);
    try {
        p.projection = sscl::ProjectionParams::init(p.encoder.output_size(), unused,
                                                    p.manifest.at("projection").at("hidden").get<std::size_t>(),
                                                    p.manifest.at("projection").at("output").get<std::size_t>());
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest lacks projection dimensions: ") + e.what());
    }
    load_tensors(dir, p.encoder.named());
    load_tensors(dir, p.projection.named());
    p.stats = load_stats(dir, p.encoder.bands);
    return p;
}

void save_model(const fs::path& dir, const classifier::TrainedModel& model, const data::BandStats& stats, json meta) {
    nn::ConstNamedParams params = model.encoder.named();
    for (auto& p : model.head.named()) params.push_back(p);
    meta["kind"] = "classifier-model";
    meta["encoder"] = encoder_json(model.encoder);
    meta["classifier"] = {{"hidden", model.head.layer1.out()}, {"classes", model.head.num_classes()}};
    save_tensors(dir, params, std::move(meta));
    save_stats(dir, stats);
}

Model load_model(const fs::path& dir) {
    Model m;
    m.manifest = load_manifest(dir);
    if (m.manifest.value("kind", "") != "classifier-model") throw CheckpointError(dir.string() + " is not a trained classifier checkpoint");
    m.model.encoder = encoder_shell(m.manifest.at("encoder"));
    Rng unused(0);
    try {
        m.model.head = classifier::ClassifierParams::init(m.model.encoder.output_size(),
                                                          m.manifest.at("classifier").at("classes").get<std::size_t>(), unused,
                                                          m.manifest.at("classifier").at("hidden").get<std::size_t>());
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest lacks classifier dimensions: ") + e.what());
    }
    load_tensors(dir, m.model.encoder.named());
    load_tensors(dir, m.model.head.named());
    m.stats = load_stats(dir, m.model.encoder.bands);
    return m;
}

}  // namespace hsic::ckpt
