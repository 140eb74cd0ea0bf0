#include "hsic/sscl.hpp"

#include <algorithm>
#include <limits>

namespace hsic::sscl {

EncoderParams EncoderParams::init(std::size_t patch_size, std::size_t bands, std::size_t hidden, Rng& rng,
                                  std::size_t width) {
    EncoderParams p;
    p.patch_size = patch_size;
    p.bands = bands;
    p.hidden = hidden;
    p.layer1 = nn::make_linear(bands, width, rng);
    p.layer2 = nn::make_linear(width, hidden, rng);
    return p;
}

nn::NamedParams EncoderParams::named() {
    return {{"encoder.layer1.weight", &layer1.weight},
            {"encoder.layer1.bias", &layer1.bias},
            {"encoder.layer2.weight", &layer2.weight},
            {"encoder.layer2.bias", &layer2.bias}};
}

nn::ConstNamedParams EncoderParams::named() const {
    return {{"encoder.layer1.weight", &layer1.weight},
            {"encoder.layer1.bias", &layer1.bias},
            {"encoder.layer2.weight", &layer2.weight},
            {"encoder.layer2.bias", &layer2.bias}};
}

ProjectionParams ProjectionParams::init(std::size_t input, Rng& rng, std::size_t proj_hidden, std::size_t proj_dim) {
    return {nn::make_linear(input, proj_hidden, rng), nn::make_linear(proj_hidden, proj_dim, rng)};
}

nn::NamedParams ProjectionParams::named() {
    return {{"projection.layer1.weight", &layer1.weight},
            {"projection.layer1.bias", &layer1.bias},
            {"projection.layer2.weight", &layer2.weight},
            {"projection.layer2.bias", &layer2.bias}};
}

nn::ConstNamedParams ProjectionParams::named() const {
    return {{"projection.layer1.weight", &layer1.weight},
            {"projection.layer1.bias", &layer1.bias},
            {"projection.layer2.weight", &layer2.weight},
            {"projection.layer2.bias", &layer2.bias}};
}

std::vector<float> flip(std::span<const float> pixels, std::size_t p, std::size_t bands, bool horizontal, bool vertical) {
    if (pixels.size() != p * p * bands) throw ShapeError("flip: pixel buffer does not match patch extents");
    std::vector<float> out(pixels.size());
    for (std::size_t r = 0; r < p; ++r) {
        const std::size_t sr = vertical ? p - 1 - r : r;
        for (std::size_t c = 0; c < p; ++c) {
            const std::size_t sc = horizontal ? p - 1 - c : c;
            std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>((sr * p + sc) * bands), bands,
                        out.begin() + static_cast<std::ptrdiff_t>((r * p + c) * bands));
        }
    }
    return out;
}

ViewPair augment(std::span<const float> pixels, std::size_t p, std::size_t bands, Rng& rng) {
    ViewPair pair;
    const bool ha = rng.coin(), va = rng.coin();
    const bool hb = rng.coin(), vb = rng.coin();
    pair.view_a = flip(pixels, p, bands, ha, va);
    pair.view_b = flip(pixels, p, bands, hb, vb);
    return pair;
}

Tensor gather(const data::PatchSet& set, std::span<const std::size_t> indices) {
    const std::size_t per = set.pixel_count();
    std::vector<float> buf;
    buf.reserve(indices.size() * per);
    for (std::size_t i : indices) {
        const auto& px = set.patches.at(i).pixels;
        buf.insert(buf.end(), px.begin(), px.end());
    }
    return Tensor({indices.size(), per}, std::move(buf));
}

Tensor encode_patches(const EncoderParams& enc, const Tensor& x) {
    ad::Tape tape;
    auto vars = bind<float>(tape, enc, false);
    ad::Var in = tape.constant(x.reshaped({x.rows(), x.cols()}));
    ad::Var h = encode(tape, vars, in, 0.0, nn::ForwardMode{});
    return tape.value(h).reshaped({x.rows(), enc.patch_size, enc.patch_size, enc.hidden});
}

namespace {

// Interleaves the two views of each patch: rows (2k, 2k+1) are one positive pair.
Tensor view_batch(const data::PatchSet& set, std::span<const std::size_t> indices, Rng& aug) {
    const std::size_t per = set.pixel_count();
    std::vector<float> buf;
    buf.reserve(2 * indices.size() * per);
    for (std::size_t i : indices) {
        ViewPair v = augment(set.patches[i].pixels, set.patch_size, set.bands, aug);
        buf.insert(buf.end(), v.view_a.begin(), v.view_a.end());
        buf.insert(buf.end(), v.view_b.begin(), v.view_b.end());
    }
    return Tensor({2 * indices.size(), per}, std::move(buf));
}

std::vector<std::vector<std::size_t>> eval_batches(std::span<const std::size_t> indices, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < indices.size(); s += batch_size) {
        const std::size_t e = std::min(indices.size(), s + batch_size);
        if (e - s < batch_size && !out.empty()) break;
        out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(s), indices.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return out;
}

}  // namespace

double contrastive_loss(const EncoderParams& enc, const ProjectionParams& proj, const data::PatchSet& set,
                        std::span<const std::size_t> indices, const PretrainSettings& settings, std::uint64_t aug_seed) {
    Rng aug(aug_seed);
    double total = 0.0;
    std::size_t batches = 0;
    for (const auto& raw : eval_batches(indices, settings.hyper.batch_size)) {
        auto batch = data::dedup_indices(set, raw);
        if (batch.size() < 2) continue;
        ad::Tape tape;
        auto ev = bind<float>(tape, enc, false);
        auto pv = bind<float>(tape, proj, false);
        ad::Var x = tape.constant(view_batch(set, batch, aug));
        ad::Var z = project(tape, pv, encode(tape, ev, x, 0.0, {}), 0.0, {});
        total += tape.value(nt_xent(tape, z, settings.temperature))[0];
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : 0.0;
}

PretrainResult pretrain(const data::PatchSet& set, std::span<const std::size_t> train, std::span<const std::size_t> val,
                        const PretrainSettings& s, std::uint64_t seed) {
    if (train.size() < 2) throw InvalidArgument("contrastive pretraining needs at least two training patches");
    Rng init = Rng::derive(seed, "init/encoder");
    PretrainResult result;
    result.encoder = EncoderParams::init(set.patch_size, set.bands, s.hidden, init, s.encoder_width);
    Rng init_proj = Rng::derive(seed, "init/projection");
    result.projection = ProjectionParams::init(result.encoder.output_size(), init_proj, s.projection_hidden, s.projection_dim);

    EncoderParams best_enc = result.encoder;
    ProjectionParams best_proj = result.projection;
    double best_val = std::numeric_limits<double>::infinity();

    Rng shuffle = Rng::derive(seed, "pretrain/shuffle");
    Rng aug = Rng::derive(seed, "pretrain/augment");
    Rng drop = Rng::derive(seed, "pretrain/dropout");
    const std::uint64_t val_aug_seed = Rng::derive(seed, "pretrain/val-augment").next_u64();
    optim::AdamState adam;
    const optim::LrSchedule schedule{s.hyper.lr, s.hyper.lr_step, s.hyper.gamma};

    for (int epoch = 0; epoch < s.hyper.epochs; ++epoch) {
        const double lr = optim::lr_at(schedule, epoch);
        double epoch_loss = 0.0;
        std::size_t steps = 0;
        for (const auto& raw : optim::make_batches(train, s.hyper.batch_size, shuffle, true)) {
            auto batch = data::dedup_indices(set, raw);
            if (batch.size() < 2) continue;
            ad::Tape tape;
            nn::Binding binding;
            auto ev = bind(tape, result.encoder, true, binding);
            auto pv = bind(tape, result.projection, true, binding);
            const nn::ForwardMode mode{true, &drop};
            ad::Var x = tape.constant(view_batch(set, batch, aug));
            ad::Var z = project(tape, pv, encode(tape, ev, x, s.dropout, mode), s.dropout, mode);
            ad::Var loss = nt_xent(tape, z, s.temperature);
            const double lv = tape.value(loss)[0];
            if (!std::isfinite(lv)) throw NumericError("contrastive loss became non-finite at epoch " + std::to_string(epoch));
            tape.backward(loss);
            optim::adam_step(binding.params, binding.grads(tape), adam, lr, s.hyper.l2_weight);
            epoch_loss += lv;
            ++steps;
        }
        result.train_loss.push_back(steps ? epoch_loss / static_cast<double>(steps) : 0.0);
        const double vl = val.size() >= 2
                              ? contrastive_loss(result.encoder, result.projection, set, val, s, val_aug_seed)
                              : result.train_loss.back();
        result.val_loss.push_back(vl);
        std::vector<const Tensor*> ps;
        for (auto& [name, t] : std::as_const(result.encoder).named()) ps.push_back(t);
        result.epoch_digests.push_back(optim::digest(ps));
        if (vl < best_val) {
            best_val = vl;
            best_enc = result.encoder;
            best_proj = result.projection;
            result.best_epoch = epoch;
        }
    }
    if (result.best_epoch >= 0) {
        result.encoder = std::move(best_enc);
        result.projection = std::move(best_proj);
    }
    return result;
}

}  // namespace hsic::sscl
