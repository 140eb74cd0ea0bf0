#pragma once

// Supervised stage: classification head, multi-label BCE-with-logits and
// single-label cross-entropy, decision rules, and CL-tune / CL-freeze fine-tuning.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsic/autodiff.hpp"
#include "hsic/dataset.hpp"
#include "hsic/metrics.hpp"
#include "hsic/nn.hpp"
#include "hsic/optim.hpp"
#include "hsic/sscl.hpp"

namespace hsic::classifier {

/// Flattened p·p·h representation → hidden → num_classes logits.
struct ClassifierParams {
    nn::Linear layer1;
    nn::Linear layer2;

    static ClassifierParams init(std::size_t input, std::size_t num_classes, Rng& rng, std::size_t hidden = 64);

    std::size_t num_classes() const { return layer2.out(); }
    nn::NamedParams named();
    nn::ConstNamedParams named() const;
};

struct ClassifierVars {
    nn::LinearVars layer1;
    nn::LinearVars layer2;
};

template <class T>
ClassifierVars bind(ad::BasicTape<T>& tape, const ClassifierParams& p, bool trainable) {
    return {nn::bind(tape, p.layer1, trainable), nn::bind(tape, p.layer2, trainable)};
}

inline ClassifierVars bind(ad::Tape& tape, ClassifierParams& p, bool trainable, nn::Binding& binding) {
    return {nn::bind(tape, p.layer1, trainable, binding), nn::bind(tape, p.layer2, trainable, binding)};
}

template <class T>
ad::Var classify(ad::BasicTape<T>& tape, const ClassifierVars& head, ad::Var h, double dropout,
                 const nn::ForwardMode& mode) {
    ad::Var a = ad::relu(tape, nn::apply(tape, head.layer1, h));
    a = nn::maybe_dropout(tape, a, dropout, mode);
    return nn::apply(tape, head.layer2, a);
}

/// Per-(sample, class) weights w and per-class positive weights p_c. Empty
/// vectors mean all ones.
struct LossWeights {
    std::vector<float> sample;    // n × C, row-major
    std::vector<float> positive;  // C
};

/// Mean over all n·C terms of w·[p_c·y·softplus(−x) + (1−y)·softplus(x)],
/// i.e. −w[p_c·y·log σ(x) + (1−y)·log(1−σ(x))] in a form that never overflows.
template <class T>
ad::Var bce_logits_loss(ad::BasicTape<T>& tape, ad::Var logits, const BasicTensor<T>& targets,
                        const LossWeights& weights = {}) {
    const auto& xv = tape.value(logits);
    if (xv.shape() != targets.shape() || xv.rank() != 2) {
        throw ShapeError("bce_logits_loss: logits " + shape_str(xv.shape()) + " vs targets " + shape_str(targets.shape()));
    }
    const std::size_t n = xv.dim(0), classes = xv.dim(1);
    if (!weights.sample.empty() && weights.sample.size() != n * classes) {
        throw ShapeError("bce_logits_loss: sample weights must be n×C");
    }
    if (!weights.positive.empty() && weights.positive.size() != classes) {
        throw ShapeError("bce_logits_loss: positive weights must have one entry per class");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] != T{0} && targets[i] != T{1}) throw InvalidArgument("bce_logits_loss: targets must be 0 or 1");
    }
    auto w_at = [&](std::size_t i) { return weights.sample.empty() ? 1.0 : static_cast<double>(weights.sample[i]); };
    auto p_at = [&](std::size_t c) { return weights.positive.empty() ? 1.0 : static_cast<double>(weights.positive[c]); };
    auto softplus = [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); };

    const double inv = 1.0 / static_cast<double>(n * classes);
    double loss = 0.0;
    BasicTensor<T> dx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double x = xv[i], y = targets[i];
        const double w = w_at(i), pc = p_at(i % classes);
        loss += w * (pc * y * softplus(-x) + (1.0 - y) * softplus(x));
        const double s = ad::stable_sigmoid(x);
        dx[i] = static_cast<T>(inv * w * (pc * y * (s - 1.0) + (1.0 - y) * s));
    }
    loss *= inv;
    return tape.record(BasicTensor<T>::scalar(static_cast<T>(loss)), {logits},
                       [logits, dx = std::move(dx)](ad::BasicTape<T>& t, const BasicTensor<T>& g) {
                           if (T* gx = t.grad_buffer(logits)) {
                               for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += g[0] * dx[i];
                           }
                       });
}

/// −(1/N)·Σ log softmax(x)[target]. Targets are class ids in 1..C.
template <class T>
ad::Var cross_entropy_loss(ad::BasicTape<T>& tape, ad::Var logits, std::span<const int> targets) {
    const auto& xv = tape.value(logits);
    if (xv.rank() != 2 || xv.dim(0) != targets.size()) {
        throw ShapeError("cross_entropy_loss: logits " + shape_str(xv.shape()) + " vs " + std::to_string(targets.size()) +
                         " targets");
    }
    const std::size_t n = xv.dim(0), classes = xv.dim(1);
    const double inv = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    BasicTensor<T> dx(xv.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const int target = targets[r];
        if (target < 1 || static_cast<std::size_t>(target) > classes) {
            throw InvalidArgument("cross_entropy_loss: target " + std::to_string(target) + " outside 1.." +
                                  std::to_string(classes));
        }
        const T* row = xv.data().data() + r * classes;
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double acc = 0.0;
        for (std::size_t c = 0; c < classes; ++c) acc += std::exp(row[c] - mx);
        const double lse = mx + std::log(acc);
        const auto t = static_cast<std::size_t>(target - 1);
        loss += lse - row[t];
        for (std::size_t c = 0; c < classes; ++c) {
            const double p = std::exp(row[c] - lse);
            dx[r * classes + c] = static_cast<T>(inv * (p - (c == t ? 1.0 : 0.0)));
        }
    }
    loss *= inv;
    return tape.record(BasicTensor<T>::scalar(static_cast<T>(loss)), {logits},
                       [logits, dx = std::move(dx)](ad::BasicTape<T>& t, const BasicTensor<T>& g) {
                           if (T* gx = t.grad_buffer(logits)) {
                               for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += g[0] * dx[i];
                           }
                       });
}

/// Class c (1-based) is predicted iff σ(logit_c) ≥ threshold.
std::vector<metrics::LabelSet> predict_multi(const Tensor& logits, double threshold = 0.5);

/// Arg-max class (1-based); ties go to the lowest index.
std::vector<int> predict_single(const Tensor& logits);

enum class FineTuneMode { cl_tune, cl_freeze };

FineTuneMode parse_mode(const std::string& s);
std::string to_string(FineTuneMode m);

struct TrainedModel {
    sscl::EncoderParams encoder;
    ClassifierParams head;
};

struct FinetuneSettings {
    data::Task task = data::Task::multi;
    FineTuneMode mode = FineTuneMode::cl_tune;
    optim::StageHyper hyper;
    double dropout_encoder = 0.3;
    double dropout_classifier = 0.6;
    double threshold = 0.5;
    metrics::MultiMetric metric = metrics::MultiMetric::jaccard;
    std::vector<float> positive_weight;  // p_c; empty = all ones
};

struct Predictions {
    std::vector<std::size_t> patch_ids;
    std::vector<metrics::LabelSet> predicted;
    std::vector<metrics::LabelSet> truth;
    double accuracy = 0.0;
    double loss = 0.0;  // mean task loss in evaluation mode
};

/// Model selection order: higher accuracy wins, equal accuracy falls back to
/// lower loss, and an exact tie keeps the incumbent.
inline bool better(const Predictions& candidate, double best_accuracy, double best_loss) {
    return candidate.accuracy > best_accuracy || (candidate.accuracy == best_accuracy && candidate.loss < best_loss);
}

/// Inference over `indices`; the result does not depend on batch composition.
Predictions evaluate(const TrainedModel& model, const data::PatchSet& set, std::span<const std::size_t> indices,
                     const FinetuneSettings& settings);

/// Task loss on an already computed logits node.
ad::Var task_loss(ad::Tape& tape, ad::Var logits, const data::PatchSet& set, std::span<const std::size_t> batch,
                  const FinetuneSettings& settings);

struct FinetuneResult {
    TrainedModel model;
    std::vector<double> train_loss;
    std::vector<double> val_accuracy;
    std::vector<std::uint64_t> epoch_digests;
    int best_epoch = -1;  // -1: the untrained initial model was never beaten
    double initial_val_accuracy = 0.0;
    double val_accuracy_best = 0.0;
    std::vector<double> val_loss;
    Predictions test;
};

/// Trains the head (and the encoder in CL-tune) on `train`, selects the
/// epoch with the best validation accuracy (see `better`; the untrained model
/// is a candidate too), then evaluates once on `test`.
FinetuneResult finetune(sscl::EncoderParams encoder, ClassifierParams head, const data::PatchSet& set,
                        std::span<const std::size_t> train, std::span<const std::size_t> val,
                        std::span<const std::size_t> test, const FinetuneSettings& settings, std::uint64_t seed);

/// One epoch of supervised training over shuffled batches (trailing batch
/// kept). Shared by the fine-tuning loop and the supervised baselines.
double train_classifier_epoch(TrainedModel& model, bool encoder_trainable, const data::PatchSet& set,
                              std::span<const std::size_t> train, const FinetuneSettings& settings,
                              optim::AdamState& adam, double lr, Rng& shuffle, Rng& dropout);

}  // namespace hsic::classifier
