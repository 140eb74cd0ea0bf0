#include "hsic/classifier.hpp"

#include <algorithm>
#include <utility>

namespace hsic::classifier {

ClassifierParams ClassifierParams::init(std::size_t input, std::size_t num_classes, Rng& rng, std::size_t hidden) {
    return {nn::make_linear(input, hidden, rng), nn::make_linear(hidden, num_classes, rng)};
}

nn::NamedParams ClassifierParams::named() {
    return {{"classifier.layer1.weight", &layer1.weight},
            {"classifier.layer1.bias", &layer1.bias},
            {"classifier.layer2.weight", &layer2.weight},
            {"classifier.layer2.bias", &layer2.bias}};
}

nn::ConstNamedParams ClassifierParams::named() const {
    return {{"classifier.layer1.weight", &layer1.weight},
            {"classifier.layer1.bias", &layer1.bias},
            {"classifier.layer2.weight", &layer2.weight},
            {"classifier.layer2.bias", &layer2.bias}};
}

std::vector<metrics::LabelSet> predict_multi(const Tensor& logits, double threshold) {
    const std::size_t n = logits.rows(), classes = logits.cols();
    std::vector<metrics::LabelSet> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
            if (static_cast<double>(ad::stable_sigmoid(logits.at(r, c))) >= threshold) {
                out[r].push_back(static_cast<int>(c) + 1);
            }
        }
    }
    return out;
}

std::vector<int> predict_single(const Tensor& logits) {
    const std::size_t n = logits.rows(), classes = logits.cols();
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        }
        out[r] = static_cast<int>(best) + 1;
    }
    return out;
}

FineTuneMode parse_mode(const std::string& s) {
    if (s == "cl-tune") return FineTuneMode::cl_tune;
    if (s == "cl-freeze") return FineTuneMode::cl_freeze;
    throw InvalidArgument("unknown fine-tune mode '" + s + "' (expected cl-tune or cl-freeze)");
}

std::string to_string(FineTuneMode m) { return m == FineTuneMode::cl_tune ? "cl-tune" : "cl-freeze"; }

namespace {

constexpr std::size_t kEvalBatch = 512;

metrics::LabelSet truth_of(const data::Patch& p, data::Task task) {
    if (task == data::Task::multi) return p.label_multi;
    if (!p.label_single) throw InvalidArgument("single-label evaluation on a patch without a centre label");
    return {*p.label_single};
}

}  // namespace

Predictions evaluate(const TrainedModel& model, const data::PatchSet& set, std::span<const std::size_t> indices,
                     const FinetuneSettings& settings) {
    Predictions out;
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < indices.size(); s += kEvalBatch) {
        const auto chunk = indices.subspan(s, std::min(kEvalBatch, indices.size() - s));
        ad::Tape tape;
        auto ev = sscl::bind<float>(tape, model.encoder, false);
        auto hv = bind<float>(tape, model.head, false);
        ad::Var x = tape.constant(sscl::gather(set, chunk));
        ad::Var logits = classify(tape, hv, sscl::encode(tape, ev, x, 0.0, {}), 0.0, {});
        const Tensor& lv = tape.value(logits);
        loss_sum += static_cast<double>(tape.value(task_loss(tape, logits, set, chunk, settings))[0]) *
                    static_cast<double>(chunk.size());
        if (settings.task == data::Task::multi) {
            auto pred = predict_multi(lv, settings.threshold);
            out.predicted.insert(out.predicted.end(), pred.begin(), pred.end());
        } else {
            for (int c : predict_single(lv)) out.predicted.push_back({c});
        }
        for (std::size_t idx : chunk) {
            out.patch_ids.push_back(idx);
            out.truth.push_back(truth_of(set.patches[idx], settings.task));
        }
    }
    if (out.predicted.empty()) return out;
    out.loss = loss_sum / static_cast<double>(out.predicted.size());
    if (settings.task == data::Task::single) {
        std::vector<int> p, t;
        for (std::size_t i = 0; i < out.predicted.size(); ++i) {
            p.push_back(out.predicted[i].front());
            t.push_back(out.truth[i].front());
        }
        out.accuracy = metrics::singlelabel_accuracy(p, t);
    } else if (settings.metric == metrics::MultiMetric::jaccard) {
        out.accuracy = metrics::multilabel_accuracy(out.predicted, out.truth);
    } else {
        out.accuracy = metrics::hamming_accuracy(out.predicted, out.truth, set.num_classes);
    }
    return out;
}

ad::Var task_loss(ad::Tape& tape, ad::Var logits, const data::PatchSet& set, std::span<const std::size_t> batch,
                  const FinetuneSettings& settings) {
    if (settings.task == data::Task::multi) {
        const auto classes = static_cast<std::size_t>(set.num_classes);
        std::vector<float> y;
        y.reserve(batch.size() * classes);
        for (std::size_t idx : batch) {
            auto row = data::multi_hot(set.patches[idx], set.num_classes);
            y.insert(y.end(), row.begin(), row.end());
        }
        LossWeights w;
        w.positive = settings.positive_weight;
        return bce_logits_loss(tape, logits, Tensor({batch.size(), classes}, std::move(y)), w);
    }
    std::vector<int> targets;
    targets.reserve(batch.size());
    for (std::size_t idx : batch) targets.push_back(truth_of(set.patches[idx], data::Task::single).front());
    return cross_entropy_loss<float>(tape, logits, targets);
}

double train_classifier_epoch(TrainedModel& model, bool encoder_trainable, const data::PatchSet& set,
                              std::span<const std::size_t> train, const FinetuneSettings& settings,
                              optim::AdamState& adam, double lr, Rng& shuffle, Rng& dropout) {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& batch : optim::make_batches(train, settings.hyper.batch_size, shuffle, false)) {
        ad::Tape tape;
        nn::Binding binding;
        auto ev = sscl::bind(tape, model.encoder, encoder_trainable, binding);
        auto hv = bind(tape, model.head, true, binding);
        const nn::ForwardMode mode{true, &dropout};
        ad::Var x = tape.constant(sscl::gather(set, batch));
        ad::Var h = sscl::encode(tape, ev, x, settings.dropout_encoder, mode);
        ad::Var logits = classify(tape, hv, h, settings.dropout_classifier, mode);
        ad::Var loss = task_loss(tape, logits, set, batch, settings);
        const double lv = tape.value(loss)[0];
        if (!std::isfinite(lv)) throw NumericError("classification loss became non-finite");
        tape.backward(loss);
        optim::adam_step(binding.params, binding.grads(tape), adam, lr, settings.hyper.l2_weight);
        total += lv;
        ++steps;
    }
    return steps ? total / static_cast<double>(steps) : 0.0;
}

FinetuneResult finetune(sscl::EncoderParams encoder, ClassifierParams head, const data::PatchSet& set,
                        std::span<const std::size_t> train, std::span<const std::size_t> val,
                        std::span<const std::size_t> test, const FinetuneSettings& s, std::uint64_t seed) {
    if (head.layer1.in() != encoder.output_size()) {
        throw CheckpointError("classifier expects " + std::to_string(head.layer1.in()) + " inputs but the encoder yields " +
                              std::to_string(encoder.output_size()));
    }
    if (encoder.bands != set.bands || encoder.patch_size != set.patch_size) {
        throw CheckpointError("encoder was built for " + std::to_string(encoder.patch_size) + "x" +
                              std::to_string(encoder.patch_size) + "x" + std::to_string(encoder.bands) +
                              " patches, data has " + std::to_string(set.patch_size) + "x" +
                              std::to_string(set.patch_size) + "x" + std::to_string(set.bands));
    }
    if (head.num_classes() != static_cast<std::size_t>(set.num_classes)) {
        throw CheckpointError("classifier output count does not match the dataset's class count");
    }
    if (train.empty()) throw InvalidArgument("fine-tuning needs a non-empty training split");

    FinetuneResult result;
    result.model = TrainedModel{std::move(encoder), std::move(head)};
    const bool encoder_trainable = s.mode == FineTuneMode::cl_tune;

    TrainedModel best = result.model;
    double best_val = 0.0, best_loss = 0.0;
    if (!val.empty()) {
        const auto initial = evaluate(result.model, set, val, s);
        best_val = initial.accuracy;
        best_loss = initial.loss;
    }
    result.initial_val_accuracy = best_val;

    Rng shuffle = Rng::derive(seed, "train/shuffle");
    Rng drop = Rng::derive(seed, "train/dropout");
    optim::AdamState adam;
    const optim::LrSchedule schedule{s.hyper.lr, s.hyper.lr_step, s.hyper.gamma};
    for (int epoch = 0; epoch < s.hyper.epochs; ++epoch) {
        const double lr = optim::lr_at(schedule, epoch);
        result.train_loss.push_back(
            train_classifier_epoch(result.model, encoder_trainable, set, train, s, adam, lr, shuffle, drop));
        std::vector<const Tensor*> ps;
        for (auto& [n, t] : std::as_const(result.model.encoder).named()) ps.push_back(t);
        for (auto& [n, t] : std::as_const(result.model.head).named()) ps.push_back(t);
        result.epoch_digests.push_back(optim::digest(ps));
        if (val.empty()) continue;
        const auto vp = evaluate(result.model, set, val, s);
        result.val_accuracy.push_back(vp.accuracy);
        result.val_loss.push_back(vp.loss);
        if (better(vp, best_val, best_loss)) {
            best_val = vp.accuracy;
            best_loss = vp.loss;
            best = result.model;
            result.best_epoch = epoch;
        }
    }
    // Without a validation split the final epoch is kept.
    if (!val.empty()) result.model = std::move(best);
    else result.best_epoch = s.hyper.epochs - 1;
    result.val_accuracy_best = best_val;
    if (!test.empty()) result.test = evaluate(result.model, set, test, s);
    return result;
}

}  // namespace hsic::classifier
