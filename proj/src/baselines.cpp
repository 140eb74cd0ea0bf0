#include "hsic/baselines.hpp"

#include <limits>
#include <utility>

namespace hsic::baselines {

DecoderParams DecoderParams::init(std::size_t patch_size, std::size_t hidden, std::size_t bands, Rng& rng,
                                  std::size_t width) {
    DecoderParams d;
    d.patch_size = patch_size;
    d.hidden = hidden;
    d.bands = bands;
    d.layer1 = nn::make_linear(hidden, width, rng);
    d.layer2 = nn::make_linear(width, bands, rng);
    return d;
}

nn::NamedParams DecoderParams::named() {
    return {{"decoder.layer1.weight", &layer1.weight},
            {"decoder.layer1.bias", &layer1.bias},
            {"decoder.layer2.weight", &layer2.weight},
            {"decoder.layer2.bias", &layer2.bias}};
}

nn::ConstNamedParams DecoderParams::named() const {
    return {{"decoder.layer1.weight", &layer1.weight},
            {"decoder.layer1.bias", &layer1.bias},
            {"decoder.layer2.weight", &layer2.weight},
            {"decoder.layer2.bias", &layer2.bias}};
}

Scheme parse_scheme(const std::string& s) {
    if (s == "iterative") return Scheme::iterative;
    if (s == "joint") return Scheme::joint;
    if (s == "cascade") return Scheme::cascade;
    throw InvalidArgument("unknown scheme '" + s + "' (expected iterative, joint or cascade)");
}

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::iterative: return "iterative";
        case Scheme::joint: return "joint";
        case Scheme::cascade: return "cascade";
    }
    return "joint";
}

namespace {

std::uint64_t encoder_digest(const sscl::EncoderParams& enc) {
    std::vector<const Tensor*> ps;
    for (auto& [n, t] : enc.named()) ps.push_back(t);
    return optim::digest(ps);
}

double train_joint_epoch(classifier::TrainedModel& model, DecoderParams& decoder, const data::PatchSet& set,
                         std::span<const std::size_t> train, const classifier::FinetuneSettings& s, double lambda,
                         optim::AdamState& adam, double lr, Rng& shuffle, Rng& dropout) {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& batch : optim::make_batches(train, s.hyper.batch_size, shuffle, false)) {
        ad::Tape tape;
        nn::Binding binding;
        auto ev = sscl::bind(tape, model.encoder, true, binding);
        auto hv = classifier::bind(tape, model.head, true, binding);
        auto dv = bind(tape, decoder, true, binding);
        const nn::ForwardMode mode{true, &dropout};
        ad::Var x = tape.constant(sscl::gather(set, batch));
        ad::Var h = sscl::encode(tape, ev, x, s.dropout_encoder, mode);
        ad::Var logits = classifier::classify(tape, hv, h, s.dropout_classifier, mode);
        ad::Var loss = classifier::task_loss(tape, logits, set, batch, s);
        if (lambda < 1.0) {
            ad::Var recon = reconstruction_loss(tape, x, decode(tape, dv, h));
            loss = ad::add(tape, ad::scale(tape, recon, static_cast<float>(1.0 - lambda)),
                           ad::scale(tape, loss, static_cast<float>(lambda)));
        }
        const double lv = tape.value(loss)[0];
        if (!std::isfinite(lv)) throw NumericError("joint loss became non-finite");
        tape.backward(loss);
        optim::adam_step(binding.params, binding.grads(tape), adam, lr, s.hyper.l2_weight);
        total += lv;
        ++steps;
    }
    return steps ? total / static_cast<double>(steps) : 0.0;
}

}  // namespace

double train_autoencoder_epoch(sscl::EncoderParams& encoder, DecoderParams& decoder, const data::PatchSet& set,
                               std::span<const std::size_t> train, const classifier::FinetuneSettings& s,
                               optim::AdamState& adam, double lr, Rng& shuffle, Rng& dropout) {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& batch : optim::make_batches(train, s.hyper.batch_size, shuffle, false)) {
        ad::Tape tape;
        nn::Binding binding;
        auto ev = sscl::bind(tape, encoder, true, binding);
        auto dv = bind(tape, decoder, true, binding);
        const nn::ForwardMode mode{true, &dropout};
        ad::Var x = tape.constant(sscl::gather(set, batch));
        ad::Var loss = reconstruction_loss(tape, x, decode(tape, dv, sscl::encode(tape, ev, x, s.dropout_encoder, mode)));
        const double lv = tape.value(loss)[0];
        if (!std::isfinite(lv)) throw NumericError("reconstruction loss became non-finite");
        tape.backward(loss);
        optim::adam_step(binding.params, binding.grads(tape), adam, lr, s.hyper.l2_weight);
        total += lv;
        ++steps;
    }
    return steps ? total / static_cast<double>(steps) : 0.0;
}

BaselineResult train_scheme(const SchemeConfig& config, sscl::EncoderParams encoder, DecoderParams decoder,
                            classifier::ClassifierParams head, const data::PatchSet& set,
                            std::span<const std::size_t> train, std::span<const std::size_t> val,
                            std::span<const std::size_t> test, const classifier::FinetuneSettings& s,
                            std::uint64_t seed) {
    if (!(config.joint_lambda > 0.0 && config.joint_lambda <= 1.0)) {
        throw InvalidArgument("joint_lambda must lie in (0, 1]");
    }
    if (train.empty()) throw InvalidArgument("baseline training needs a non-empty training split");

    BaselineResult result;
    result.model = classifier::TrainedModel{std::move(encoder), std::move(head)};
    result.decoder = std::move(decoder);

    // Same stream tags as fine-tuning, so joint with λ = 1 retraces plain supervised training.
    Rng shuffle = Rng::derive(seed, "train/shuffle");
    Rng drop = Rng::derive(seed, "train/dropout");
    Rng ae_shuffle = Rng::derive(seed, "autoencoder/shuffle");
    Rng ae_drop = Rng::derive(seed, "autoencoder/dropout");
    const optim::LrSchedule schedule{s.hyper.lr, s.hyper.lr_step, s.hyper.gamma};
    optim::AdamState adam_ae, adam_cls, adam_joint;

    classifier::TrainedModel best = result.model;
    double best_val = -std::numeric_limits<double>::infinity();
    double best_loss = std::numeric_limits<double>::infinity();
    auto select = [&](int epoch) {
        classifier::Predictions vp;
        if (!val.empty()) vp = classifier::evaluate(result.model, set, val, s);
        result.val_accuracy.push_back(vp.accuracy);
        if (classifier::better(vp, best_val, best_loss)) {
            best_val = vp.accuracy;
            best_loss = vp.loss;
            best = result.model;
            result.best_epoch = epoch;
        }
    };

    switch (config.scheme) {
        case Scheme::iterative:
            for (int epoch = 0; epoch < s.hyper.epochs; ++epoch) {
                const double lr = optim::lr_at(schedule, epoch);
                result.reconstruction_loss.push_back(train_autoencoder_epoch(result.model.encoder, result.decoder, set,
                                                                             train, s, adam_ae, lr, ae_shuffle, ae_drop));
                result.task_loss.push_back(classifier::train_classifier_epoch(result.model, false, set, train, s,
                                                                              adam_cls, lr, shuffle, drop));
                select(epoch);
            }
            break;
        case Scheme::joint:
            for (int epoch = 0; epoch < s.hyper.epochs; ++epoch) {
                const double lr = optim::lr_at(schedule, epoch);
                result.joint_loss.push_back(train_joint_epoch(result.model, result.decoder, set, train, s,
                                                              config.joint_lambda, adam_joint, lr, shuffle, drop));
                select(epoch);
            }
            break;
        case Scheme::cascade:
            for (int epoch = 0; epoch < s.hyper.epochs; ++epoch) {
                result.reconstruction_loss.push_back(train_autoencoder_epoch(result.model.encoder, result.decoder, set,
                                                                             train, s, adam_ae, optim::lr_at(schedule, epoch),
                                                                             ae_shuffle, ae_drop));
            }
            result.encoder_digest_before_classifier = encoder_digest(result.model.encoder);
            for (int epoch = 0; epoch < s.hyper.epochs; ++epoch) {
                result.task_loss.push_back(classifier::train_classifier_epoch(
                    result.model, false, set, train, s, adam_cls, optim::lr_at(schedule, epoch), shuffle, drop));
                select(epoch);
            }
            result.encoder_digest_after_classifier = encoder_digest(result.model.encoder);
            break;
    }
    if (result.best_epoch >= 0) result.model = std::move(best);
    if (!test.empty()) result.test = classifier::evaluate(result.model, set, test, s);
    return result;
}

}  // namespace hsic::baselines
