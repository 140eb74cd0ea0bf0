#pragma once

// Fully supervised autoencoder + classifier training schemes used as
// comparison points: iterative, joint and cascade.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsic/autodiff.hpp"
#include "hsic/classifier.hpp"
#include "hsic/nn.hpp"
#include "hsic/sscl.hpp"

namespace hsic::baselines {

/// Per-pixel mirror of the encoder: hidden → width → bands, linear output.
struct DecoderParams {
    std::size_t patch_size = 0;
    std::size_t hidden = 0;
    std::size_t bands = 0;
    nn::Linear layer1;
    nn::Linear layer2;

    static DecoderParams init(std::size_t patch_size, std::size_t hidden, std::size_t bands, Rng& rng,
                              std::size_t width = 128);

    nn::NamedParams named();
    nn::ConstNamedParams named() const;
};

struct DecoderVars {
    std::size_t patch_size = 0;
    std::size_t hidden = 0;
    std::size_t bands = 0;
    nn::LinearVars layer1;
    nn::LinearVars layer2;
};

template <class T>
DecoderVars bind(ad::BasicTape<T>& tape, const DecoderParams& p, bool trainable) {
    return {p.patch_size, p.hidden, p.bands, nn::bind(tape, p.layer1, trainable), nn::bind(tape, p.layer2, trainable)};
}

inline DecoderVars bind(ad::Tape& tape, DecoderParams& p, bool trainable, nn::Binding& binding) {
    return {p.patch_size, p.hidden, p.bands, nn::bind(tape, p.layer1, trainable, binding),
            nn::bind(tape, p.layer2, trainable, binding)};
}

/// h: batch × (p·p·hidden) → batch × (p·p·bands).
template <class T>
ad::Var decode(ad::BasicTape<T>& tape, const DecoderVars& dec, ad::Var h) {
    const std::size_t pixels = dec.patch_size * dec.patch_size;
    const auto& hv = tape.value(h);
    if (hv.cols() != pixels * dec.hidden) throw ShapeError("decode: representation " + shape_str(hv.shape()) + " does not match decoder");
    const std::size_t batch = hv.rows();
    ad::Var px = ad::reshape(tape, h, {batch * pixels, dec.hidden});
    ad::Var a = ad::relu(tape, nn::apply(tape, dec.layer1, px));
    ad::Var out = nn::apply(tape, dec.layer2, a);
    return ad::reshape(tape, out, {batch, pixels * dec.bands});
}

/// Mean squared error over all elements, accumulated in double.
template <class T>
ad::Var reconstruction_loss(ad::BasicTape<T>& tape, ad::Var x, ad::Var x_hat) {
    const auto& xv = tape.value(x);
    const auto& rv = tape.value(x_hat);
    if (xv.shape() != rv.shape()) {
        throw ShapeError("reconstruction_loss: " + shape_str(xv.shape()) + " vs " + shape_str(rv.shape()));
    }
    const double inv = 1.0 / static_cast<double>(xv.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double d = static_cast<double>(rv[i]) - xv[i];
        acc += d * d;
    }
    return tape.record(BasicTensor<T>::scalar(static_cast<T>(acc * inv)), {x, x_hat},
                       [x, x_hat, inv](ad::BasicTape<T>& t, const BasicTensor<T>& g) {
                           const auto& xv = t.value(x);
                           const auto& rv = t.value(x_hat);
                           const T k = static_cast<T>(2.0 * inv) * g[0];
                           if (T* gr = t.grad_buffer(x_hat)) {
                               for (std::size_t i = 0; i < xv.size(); ++i) gr[i] += k * (rv[i] - xv[i]);
                           }
                           if (T* gx = t.grad_buffer(x)) {
                               for (std::size_t i = 0; i < xv.size(); ++i) gx[i] -= k * (rv[i] - xv[i]);
                           }
                       });
}

enum class Scheme { iterative, joint, cascade };

Scheme parse_scheme(const std::string& s);
std::string to_string(Scheme s);

struct SchemeConfig {
    Scheme scheme = Scheme::joint;
    double joint_lambda = 0.5;  // weight of the classification term
};

struct BaselineResult {
    classifier::TrainedModel model;
    DecoderParams decoder;
    std::vector<double> reconstruction_loss;
    std::vector<double> task_loss;
    std::vector<double> joint_loss;
    std::vector<double> val_accuracy;
    // Cascade only: encoder digest before and after the classifier phase.
    std::uint64_t encoder_digest_before_classifier = 0;
    std::uint64_t encoder_digest_after_classifier = 0;
    int best_epoch = -1;
    classifier::Predictions test;
};

/// Autoencoder epochs on `train` (encoder + decoder, MSE).
double train_autoencoder_epoch(sscl::EncoderParams& encoder, DecoderParams& decoder, const data::PatchSet& set,
                               std::span<const std::size_t> train, const classifier::FinetuneSettings& settings,
                               optim::AdamState& adam, double lr, Rng& shuffle, Rng& dropout);

/// Runs one scheme from the given initial parameters.
///   iterative: per epoch, one autoencoder epoch then one classifier epoch with the encoder frozen;
///   joint:     (1−λ)·MSE + λ·task loss, everything trained end to end;
///   cascade:   autoencoder for the full budget, then the classifier with the encoder frozen.
BaselineResult train_scheme(const SchemeConfig& config, sscl::EncoderParams encoder, DecoderParams decoder,
                            classifier::ClassifierParams head, const data::PatchSet& set,
                            std::span<const std::size_t> train, std::span<const std::size_t> val,
                            std::span<const std::size_t> test, const classifier::FinetuneSettings& settings,
                            std::uint64_t seed);

}  // namespace hsic::baselines
