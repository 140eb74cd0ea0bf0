#pragma once

// Self-supervised contrastive stage: flip augmentation, the per-pixel
// spectral encoder, the projection head and the NT-Xent loss.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsic/autodiff.hpp"
#include "hsic/dataset.hpp"
#include "hsic/nn.hpp"
#include "hsic/optim.hpp"

namespace hsic::sscl {

/// Shared per-pixel map bands → width → hidden, applied at every spatial
/// position, so a p×p×bands patch becomes p×p×hidden.
struct EncoderParams {
    std::size_t patch_size = 0;
    std::size_t bands = 0;
    std::size_t hidden = 0;
    nn::Linear layer1;
    nn::Linear layer2;

    static EncoderParams init(std::size_t patch_size, std::size_t bands, std::size_t hidden, Rng& rng,
                              std::size_t width = 128);

    std::size_t width() const { return layer1.out(); }
    std::size_t output_size() const { return patch_size * patch_size * hidden; }
    nn::NamedParams named();
    nn::ConstNamedParams named() const;
};

/// Flattened encoder output → proj_hidden → proj_dim. No activation after the
/// last layer; the output is l2-normalised.
struct ProjectionParams {
    nn::Linear layer1;
    nn::Linear layer2;

    static ProjectionParams init(std::size_t input, Rng& rng, std::size_t proj_hidden = 128, std::size_t proj_dim = 64);

    nn::NamedParams named();
    nn::ConstNamedParams named() const;
};

struct EncoderVars {
    std::size_t patch_size = 0;
    std::size_t bands = 0;
    std::size_t hidden = 0;
    nn::LinearVars layer1;
    nn::LinearVars layer2;
};

struct ProjectionVars {
    nn::LinearVars layer1;
    nn::LinearVars layer2;
};

template <class T>
EncoderVars bind(ad::BasicTape<T>& tape, const EncoderParams& p, bool trainable) {
    return {p.patch_size, p.bands, p.hidden, nn::bind(tape, p.layer1, trainable), nn::bind(tape, p.layer2, trainable)};
}

inline EncoderVars bind(ad::Tape& tape, EncoderParams& p, bool trainable, nn::Binding& binding) {
    return {p.patch_size, p.bands, p.hidden, nn::bind(tape, p.layer1, trainable, binding),
            nn::bind(tape, p.layer2, trainable, binding)};
}

template <class T>
ProjectionVars bind(ad::BasicTape<T>& tape, const ProjectionParams& p, bool trainable) {
    return {nn::bind(tape, p.layer1, trainable), nn::bind(tape, p.layer2, trainable)};
}

inline ProjectionVars bind(ad::Tape& tape, ProjectionParams& p, bool trainable, nn::Binding& binding) {
    return {nn::bind(tape, p.layer1, trainable, binding), nn::bind(tape, p.layer2, trainable, binding)};
}

/// x: batch × (p·p·bands) → batch × (p·p·hidden). Dropout follows the first layer.
template <class T>
ad::Var encode(ad::BasicTape<T>& tape, const EncoderVars& enc, ad::Var x, double dropout, const nn::ForwardMode& mode) {
    const auto& xv = tape.value(x);
    const std::size_t pixels = enc.patch_size * enc.patch_size;
    if (xv.cols() != pixels * enc.bands) {
        throw ShapeError("encode: input " + shape_str(xv.shape()) + " does not hold " + std::to_string(enc.patch_size) +
                         "x" + std::to_string(enc.patch_size) + "x" + std::to_string(enc.bands) + " patches");
    }
    const std::size_t batch = xv.rows();
    ad::Var px = ad::reshape(tape, x, {batch * pixels, enc.bands});
    ad::Var a = ad::relu(tape, nn::apply(tape, enc.layer1, px));
    a = nn::maybe_dropout(tape, a, dropout, mode);
    ad::Var h = ad::relu(tape, nn::apply(tape, enc.layer2, a));
    return ad::reshape(tape, h, {batch, pixels * enc.hidden});
}

/// Raw (unnormalised) projection z.
template <class T>
ad::Var project_raw(ad::BasicTape<T>& tape, const ProjectionVars& proj, ad::Var h, double dropout,
                    const nn::ForwardMode& mode) {
    ad::Var a = ad::relu(tape, nn::apply(tape, proj.layer1, h));
    a = nn::maybe_dropout(tape, a, dropout, mode);
    return nn::apply(tape, proj.layer2, a);
}

template <class T>
ad::Var project(ad::BasicTape<T>& tape, const ProjectionVars& proj, ad::Var h, double dropout,
                const nn::ForwardMode& mode) {
    return ad::l2_normalize(tape, project_raw(tape, proj, h, dropout, mode));
}

/// NT-Xent over 2N rows of l2-normalised projections paired as (0,1), (2,3), …
/// Similarities are dot products, i.e. cosines for unit rows. The loss is
/// accumulated in double with a max-shifted log-sum-exp.
template <class T>
ad::Var nt_xent(ad::BasicTape<T>& tape, ad::Var z, double temperature) {
    if (!(temperature > 0.0)) throw InvalidArgument("nt_xent: temperature must be positive");
    const auto& zv = tape.value(z);
    if (zv.rank() != 2) throw ShapeError("nt_xent expects a 2N×d matrix, got " + shape_str(zv.shape()));
    const std::size_t rows = zv.dim(0), d = zv.dim(1);
    if (rows % 2 != 0) throw InvalidArgument("nt_xent needs an even number of views, got " + std::to_string(rows));

    std::vector<double> sim(rows * rows);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = i; k < rows; ++k) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(zv[i * d + c]) * zv[k * d + c];
            sim[i * rows + k] = sim[k * rows + i] = dot / temperature;
        }
    }
    // coef(i,k) = dLoss/dsim(i,k) before the 1/T factor.
    std::vector<double> coef(rows * rows, 0.0);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t pos = i ^ 1u;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < rows; ++k) {
            if (k != i) mx = std::max(mx, sim[i * rows + k]);
        }
        double acc = 0.0;
        for (std::size_t k = 0; k < rows; ++k) {
            if (k != i) acc += std::exp(sim[i * rows + k] - mx);
        }
        const double lse = mx + std::log(acc);
        loss += lse - sim[i * rows + pos];
        for (std::size_t k = 0; k < rows; ++k) {
            if (k == i) continue;
            coef[i * rows + k] = inv * std::exp(sim[i * rows + k] - lse);
        }
        coef[i * rows + pos] -= inv;
    }
    loss *= inv;

    return tape.record(BasicTensor<T>::scalar(static_cast<T>(loss)), {z},
                       [z, rows, d, temperature, coef = std::move(coef)](ad::BasicTape<T>& t, const BasicTensor<T>& g) {
                           T* gz = t.grad_buffer(z);
                           if (!gz) return;
                           const auto& zv = t.value(z);
                           const double scale = static_cast<double>(g[0]) / temperature;
                           for (std::size_t i = 0; i < rows; ++i) {
                               for (std::size_t c = 0; c < d; ++c) {
                                   double acc = 0.0;
                                   for (std::size_t k = 0; k < rows; ++k) {
                                       acc += (coef[i * rows + k] + coef[k * rows + i]) * zv[k * d + c];
                                   }
                                   gz[i * d + c] += static_cast<T>(scale * acc);
                               }
                           }
                       });
}

struct ViewPair {
    std::vector<float> view_a;
    std::vector<float> view_b;
};

/// Mirrors the spatial axes of a p×p×bands patch; bands are untouched.
std::vector<float> flip(std::span<const float> pixels, std::size_t patch_size, std::size_t bands, bool horizontal,
                        bool vertical);

/// Each view independently gets a horizontal and a vertical flip with probability ½.
ViewPair augment(std::span<const float> pixels, std::size_t patch_size, std::size_t bands, Rng& rng);

/// Inference-mode encoder output for a batch of flattened patches:
/// (batch, p·p·bands) → (batch, p, p, hidden).
Tensor encode_patches(const EncoderParams& enc, const Tensor& x);

struct PretrainSettings {
    std::size_t hidden = 32;
    std::size_t encoder_width = 128;
    std::size_t projection_hidden = 128;
    std::size_t projection_dim = 64;
    double temperature = 0.1;
    double dropout = 0.3;
    optim::StageHyper hyper;
};

struct PretrainResult {
    EncoderParams encoder;
    ProjectionParams projection;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<std::uint64_t> epoch_digests;
    int best_epoch = -1;
};

/// Contrastive pretraining on `train` (in-batch duplicates removed, trailing
/// incomplete batch dropped); the epoch with the lowest validation loss wins.
PretrainResult pretrain(const data::PatchSet& normalized, std::span<const std::size_t> train,
                        std::span<const std::size_t> val, const PretrainSettings& settings, std::uint64_t seed);

/// Mean NT-Xent over `indices` in inference mode with a fixed augmentation stream.
double contrastive_loss(const EncoderParams& enc, const ProjectionParams& proj, const data::PatchSet& set,
                        std::span<const std::size_t> indices, const PretrainSettings& settings, std::uint64_t aug_seed);

/// Stacks the pixels of the selected patches into a (n, p·p·bands) tensor.
Tensor gather(const data::PatchSet& set, std::span<const std::size_t> indices);

}  // namespace hsic::sscl
