#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"

#include "hsic/baselines.hpp"
#include "hsic/checkpoint.hpp"
#include "hsic/classifier.hpp"
#include "hsic/error.hpp"
#include "hsic/metrics.hpp"
#include "hsic/optim.hpp"
#include "hsic/sscl.hpp"
#include "oracles.hpp"

using namespace hsic;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("hsic-test-training-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

data::PatchSet synthetic_set(data::Task task) {
    data::SyntheticSpec spec;
    auto set = data::sample_patches(data::synthetic_cube(spec), 3, task);
    const auto splits = data::make_splits(set.size(), 1, 1.0);
    return data::normalize(set, data::compute_band_stats(set, splits.cls_train));
}

classifier::FinetuneSettings small_settings(data::Task task, classifier::FineTuneMode mode, int epochs) {
    classifier::FinetuneSettings s;
    s.task = task;
    s.mode = mode;
    s.hyper = {epochs, 16, 1e-3, 0.9, 10, 1e-4};
    s.dropout_encoder = 0.2;
    s.dropout_classifier = 0.3;
    return s;
}

std::uint64_t encoder_digest(const sscl::EncoderParams& e) {
    std::vector<const Tensor*> ps;
    for (auto& [n, t] : e.named()) ps.push_back(t);
    return optim::digest(ps);
}

}  // namespace

// ---- optimiser ----------------------------------------------------------

TEST_CASE("adam: zero gradient leaves parameters alone") {
    Tensor p({3}, {1, -2, 3});
    const Tensor before = p;
    Tensor* ps[] = {&p};
    const Tensor g({3});
    optim::AdamState st;
    optim::adam_step(ps, std::span<const Tensor>(&g, 1), st, 0.1, 0.0);
    CHECK(p == before);
    CHECK(st.m.size() == 1);
    CHECK(st.m[0].shape() == p.shape());
}

TEST_CASE("adam: first step moves by lr") {
    for (float g0 : {0.3f, -5.0f, 1e-3f}) {
        Tensor p({1}, {2.0f});
        Tensor* ps[] = {&p};
        const Tensor g({1}, {g0});
        optim::AdamState st;
        optim::adam_step(ps, std::span<const Tensor>(&g, 1), st, 0.01, 0.0);
        CHECK(std::abs(std::abs(p[0] - 2.0f) - 0.01) < 1e-6);
        CHECK((p[0] - 2.0f) * g0 < 0.0f);
    }
}

TEST_CASE("adam matches an independent recurrence on a quadratic") {
    // Reference recurrence in double for f(θ) = θ², g = 2θ.
    double theta = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 50; ++t) {
        const double g = 2.0 * theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
        theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    Tensor p({1}, {1.0f});
    Tensor* ps[] = {&p};
    optim::AdamState st;
    for (int t = 0; t < 50; ++t) {
        const Tensor g({1}, {2.0f * p[0]});
        optim::adam_step(ps, std::span<const Tensor>(&g, 1), st, 0.1, 0.0);
    }
    CHECK(std::abs(p[0]) < 0.2);
    CHECK(p[0] == doctest::Approx(theta).epsilon(1e-4));
}

TEST_CASE("adam: l2 is added to the gradient, and non-finite gradients abort") {
    Tensor p({1}, {1.0f});
    Tensor* ps[] = {&p};
    const Tensor zero({1});
    optim::AdamState st;
    optim::adam_step(ps, std::span<const Tensor>(&zero, 1), st, 0.1, 0.5);
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-5));  // g = 0.5·θ > 0, first step is −lr
    const Tensor bad({1}, {std::nanf("")});
    const float before = p[0];
    CHECK_THROWS_AS(optim::adam_step(ps, std::span<const Tensor>(&bad, 1), st, 0.1, 0.0), NumericError);
    CHECK(p[0] == before);
}

TEST_CASE("step schedule") {
    const optim::LrSchedule s{1e-3, 10, 0.9};
    CHECK(optim::lr_at(s, 0) == 1e-3);
    CHECK(optim::lr_at(s, 9) == 1e-3);
    CHECK(optim::lr_at(s, 10) == doctest::Approx(9e-4));
    CHECK(optim::lr_at(s, 25) == doctest::Approx(1e-3 * 0.81));
    for (double gamma : {0.1, 0.6, 0.9, 1.0}) {
        const optim::LrSchedule g{0.01, 3, gamma};
        for (int e = 0; e < 60; ++e) CHECK(optim::lr_at(g, e + 1) <= optim::lr_at(g, e));
    }
}

TEST_CASE("mini-batches") {
    std::vector<std::size_t> idx(23);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = 100 + i;
    Rng rng(1);
    const auto keep = optim::make_batches(idx, 5, rng, false);
    CHECK(keep.size() == 5);
    CHECK(keep.back().size() == 3);
    std::set<std::size_t> seen;
    for (const auto& b : keep) seen.insert(b.begin(), b.end());
    CHECK(seen.size() == 23);
    const auto drop = optim::make_batches(idx, 5, rng, true);
    CHECK(drop.size() == 4);
    for (const auto& b : drop) CHECK(b.size() == 5);
    // A lone short batch is kept even when dropping.
    CHECK(optim::make_batches(std::span(idx).first(3), 5, rng, true).size() == 1);
}

// ---- metrics ------------------------------------------------------------

TEST_CASE("multi-label accuracy examples") {
    using metrics::multilabel_accuracy;
    CHECK(multilabel_accuracy({{1, 2}, {3}}, {{1, 2}, {3}}) == 100.0);
    CHECK(multilabel_accuracy({{2, 3}}, {{1, 2}}) == doctest::Approx(100.0 / 3.0));
    CHECK(multilabel_accuracy({{}}, {{}}) == 100.0);
    CHECK(multilabel_accuracy({{}}, {{1}}) == 0.0);
    CHECK_THROWS_AS(multilabel_accuracy({{1}}, {{1}, {2}}), InvalidArgument);
}

TEST_CASE("multi-label accuracy properties") {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(20);
        std::vector<metrics::LabelSet> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 1; c <= 6; ++c) {
                if (rng.coin(0.4)) a[i].push_back(c);
                if (rng.coin(0.4)) b[i].push_back(c);
            }
        }
        const double ab = metrics::multilabel_accuracy(a, b);
        CHECK(ab == doctest::Approx(oracle::jaccard(a, b)).epsilon(1e-12));
        CHECK(ab == metrics::multilabel_accuracy(b, a));
        CHECK(metrics::multilabel_accuracy(a, a) == 100.0);
        CHECK((ab >= 0.0 && ab <= 100.0));
        const double h = metrics::hamming_accuracy(a, b, 6);
        CHECK((h >= 0.0 && h <= 100.0));
        CHECK(h >= ab - 1e-9);  // every Jaccard miss is at least one Hamming miss of the 6
    }
}

TEST_CASE("hamming and single-label accuracy") {
    CHECK(metrics::hamming_accuracy({{1}}, {{2}}, 4) == 50.0);
    CHECK(metrics::singlelabel_accuracy({1, 2, 3, 4}, {1, 2, 3, 4}) == 100.0);
    CHECK(metrics::singlelabel_accuracy({1, 2, 3, 4}, {1, 2, 1, 1}) == 50.0);
    CHECK_THROWS_AS(metrics::singlelabel_accuracy({}, {}), InvalidArgument);
    CHECK_THROWS_AS(metrics::singlelabel_accuracy({1}, {1, 2}), InvalidArgument);
    CHECK(metrics::parse_multi_metric("hamming") == metrics::MultiMetric::hamming);
    CHECK_THROWS(metrics::parse_multi_metric("f1"));
}

// ---- encoder, projection, fine-tuning ----------------------------------

TEST_CASE("encoder output shape and per-pixel weight sharing") {
    Rng rng(3);
    auto enc = sscl::EncoderParams::init(3, 4, 5, rng, 7);
    CHECK(enc.output_size() == 45);
    Tensor x({2, 36});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    // Copy pixel 0 of patch 0 into pixel 8 of patch 1: their representations must match.
    for (std::size_t b = 0; b < 4; ++b) x.at(1, 8 * 4 + b) = x.at(0, b);
    const Tensor h = sscl::encode_patches(enc, x);
    CHECK(h.shape() == Shape{2, 3, 3, 5});
    for (std::size_t k = 0; k < 5; ++k) CHECK(h[45 + 8 * 5 + k] == h[k]);
}

TEST_CASE("projection output is unit length") {
    Rng rng(4);
    auto proj = sscl::ProjectionParams::init(10, rng, 8, 6);
    ad::Tape t;
    auto pv = sscl::bind<float>(t, proj, false);
    Tensor h({3, 10});
    for (auto& v : h.data()) v = static_cast<float>(std::abs(rng.normal()));
    const auto& z = t.value(sscl::project(t, pv, t.constant(h), 0.0, {}));
    for (std::size_t r = 0; r < 3; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < 6; ++c) ss += z.at(r, c) * z.at(r, c);
        CHECK(ss == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("evaluation does not depend on batch composition") {
    const auto set = synthetic_set(data::Task::multi);
    Rng rng(6);
    classifier::TrainedModel model{sscl::EncoderParams::init(3, set.bands, 8, rng, 16),
                                   classifier::ClassifierParams::init(72, 3, rng, 16)};
    const auto s = small_settings(data::Task::multi, classifier::FineTuneMode::cl_tune, 1);
    std::vector<std::size_t> idx(set.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto all = classifier::evaluate(model, set, idx, s);
    std::vector<std::size_t> shuffled = idx;
    rng.shuffle(shuffled);
    const auto mixed = classifier::evaluate(model, set, shuffled, s);
    CHECK(all.accuracy == mixed.accuracy);
    for (std::size_t i = 0; i < shuffled.size(); ++i) CHECK(mixed.predicted[i] == all.predicted[shuffled[i]]);
}

TEST_CASE("cl-freeze leaves the encoder untouched, cl-tune does not") {
    const auto set = synthetic_set(data::Task::single);
    const auto sp = data::make_splits(set.size(), 2, 1.0);
    Rng rng(7);
    const auto enc = sscl::EncoderParams::init(3, set.bands, 8, rng, 16);
    const auto head = classifier::ClassifierParams::init(72, 3, rng, 16);
    const auto before = encoder_digest(enc);

    auto frozen = classifier::finetune(enc, head, set, sp.cls_train, sp.cls_val, sp.cls_test,
                                       small_settings(data::Task::single, classifier::FineTuneMode::cl_freeze, 3), 2);
    CHECK(encoder_digest(frozen.model.encoder) == before);
    auto tuned = classifier::finetune(enc, head, set, sp.cls_train, sp.cls_val, sp.cls_test,
                                      small_settings(data::Task::single, classifier::FineTuneMode::cl_tune, 3), 2);
    CHECK(tuned.best_epoch >= 0);
    CHECK(encoder_digest(tuned.model.encoder) != before);
}

TEST_CASE("fine-tuning is deterministic per seed") {
    const auto set = synthetic_set(data::Task::multi);
    const auto sp = data::make_splits(set.size(), 3, 1.0);
    Rng rng(8);
    const auto enc = sscl::EncoderParams::init(3, set.bands, 8, rng, 16);
    const auto head = classifier::ClassifierParams::init(72, 3, rng, 16);
    const auto s = small_settings(data::Task::multi, classifier::FineTuneMode::cl_tune, 4);
    auto a = classifier::finetune(enc, head, set, sp.cls_train, sp.cls_val, sp.cls_test, s, 3);
    auto b = classifier::finetune(enc, head, set, sp.cls_train, sp.cls_val, sp.cls_test, s, 3);
    auto c = classifier::finetune(enc, head, set, sp.cls_train, sp.cls_val, sp.cls_test, s, 4);
    CHECK(a.epoch_digests == b.epoch_digests);
    CHECK(a.train_loss == b.train_loss);
    CHECK(a.test.accuracy == b.test.accuracy);
    CHECK(a.epoch_digests != c.epoch_digests);
}

TEST_CASE("fine-tuning checks model and data dimensions") {
    const auto set = synthetic_set(data::Task::multi);
    const auto sp = data::make_splits(set.size(), 3, 1.0);
    Rng rng(9);
    const auto s = small_settings(data::Task::multi, classifier::FineTuneMode::cl_tune, 1);
    auto wrong_bands = sscl::EncoderParams::init(3, set.bands + 1, 8, rng, 16);
    CHECK_THROWS_AS(classifier::finetune(wrong_bands, classifier::ClassifierParams::init(72, 3, rng), set, sp.cls_train,
                                         sp.cls_val, sp.cls_test, s, 1),
                    CheckpointError);
    auto enc = sscl::EncoderParams::init(3, set.bands, 8, rng, 16);
    CHECK_THROWS_AS(classifier::finetune(enc, classifier::ClassifierParams::init(71, 3, rng), set, sp.cls_train,
                                         sp.cls_val, sp.cls_test, s, 1),
                    CheckpointError);
    CHECK_THROWS_AS(classifier::finetune(enc, classifier::ClassifierParams::init(72, 4, rng), set, sp.cls_train,
                                         sp.cls_val, sp.cls_test, s, 1),
                    CheckpointError);
}

TEST_CASE("contrastive pretraining runs, is deterministic and lowers the loss") {
    const auto set = synthetic_set(data::Task::multi);
    const auto sp = data::make_splits(set.size(), 1, 1.0);
    sscl::PretrainSettings s;
    s.hidden = 8;
    s.encoder_width = 16;
    s.projection_hidden = 16;
    s.projection_dim = 8;
    s.dropout = 0.1;
    s.hyper = {8, 32, 1e-2, 0.9, 10, 0.0};
    auto a = sscl::pretrain(set, sp.pretrain_train, sp.pretrain_val, s, 1);
    auto b = sscl::pretrain(set, sp.pretrain_train, sp.pretrain_val, s, 1);
    CHECK(a.epoch_digests == b.epoch_digests);
    CHECK(a.train_loss.size() == 8);
    for (double l : a.train_loss) CHECK(std::isfinite(l));
    CHECK(a.train_loss.back() < a.train_loss.front());
    CHECK(a.best_epoch >= 0);
}

// ---- baselines ----------------------------------------------------------

TEST_CASE("reconstruction loss") {
    ad::BasicTape<double> t;
    auto x = t.constant(BasicTensor<double>::full({2, 3}, 0.0));
    auto y = t.constant(BasicTensor<double>::full({2, 3}, 1.0));
    CHECK(t.value(baselines::reconstruction_loss(t, x, x))[0] == 0.0);
    CHECK(t.value(baselines::reconstruction_loss(t, x, y))[0] == 1.0);
    CHECK_THROWS_AS(baselines::reconstruction_loss(t, x, t.constant(BasicTensor<double>({3, 2}))), ShapeError);
    Rng rng(10);
    const auto a = oracle::random_tensor({4, 5}, rng), b = oracle::random_tensor({4, 5}, rng);
    double want = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) want += (a[i] - b[i]) * (a[i] - b[i]);
    want /= static_cast<double>(a.size());
    CHECK(std::abs(t.value(baselines::reconstruction_loss(t, t.constant(a), t.constant(b)))[0] - want) < 1e-12);
    auto r = oracle::check_gradients(
        [&](ad::BasicTape<double>& tp, const std::vector<ad::Var>& v) { return baselines::reconstruction_loss(tp, v[0], v[1]); },
        {a, b});
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("decoder mirrors the patch shape") {
    Rng rng(11);
    auto dec = baselines::DecoderParams::init(3, 5, 7, rng, 9);
    ad::Tape t;
    auto dv = baselines::bind<float>(t, dec, false);
    const auto& out = t.value(baselines::decode(t, dv, t.constant(Tensor({4, 45}))));
    CHECK(out.shape() == Shape{4, 63});
    CHECK(baselines::parse_scheme("cascade") == baselines::Scheme::cascade);
    CHECK_THROWS_AS(baselines::parse_scheme("stacked"), InvalidArgument);
}

TEST_CASE("baseline schemes") {
    const auto set = synthetic_set(data::Task::multi);
    const auto sp = data::make_splits(set.size(), 5, 1.0);
    Rng rng(12);
    const auto enc = sscl::EncoderParams::init(3, set.bands, 8, rng, 16);
    const auto dec = baselines::DecoderParams::init(3, 8, set.bands, rng, 16);
    const auto head = classifier::ClassifierParams::init(72, 3, rng, 16);
    auto s = small_settings(data::Task::multi, classifier::FineTuneMode::cl_tune, 5);

    SUBCASE("cascade freezes the encoder for the classifier phase") {
        auto r = baselines::train_scheme({baselines::Scheme::cascade, 0.5}, enc, dec, head, set, sp.cls_train, sp.cls_val,
                                         sp.cls_test, s, 5);
        CHECK(r.encoder_digest_before_classifier == r.encoder_digest_after_classifier);
        CHECK(r.encoder_digest_before_classifier != encoder_digest(enc));
        CHECK(r.reconstruction_loss.size() == 5);
        CHECK(r.task_loss.size() == 5);
    }
    SUBCASE("iterative alternates both objectives") {
        auto r = baselines::train_scheme({baselines::Scheme::iterative, 0.5}, enc, dec, head, set, sp.cls_train, sp.cls_val,
                                         sp.cls_test, s, 5);
        CHECK(r.reconstruction_loss.size() == 5);
        CHECK(r.task_loss.size() == 5);
        CHECK(r.reconstruction_loss.back() < r.reconstruction_loss.front());
    }
    SUBCASE("joint loss decreases over the first epochs") {
        auto r = baselines::train_scheme({baselines::Scheme::joint, 0.5}, enc, dec, head, set, sp.cls_train, sp.cls_val,
                                         sp.cls_test, s, 5);
        REQUIRE(r.joint_loss.size() == 5);
        CHECK(r.joint_loss[4] < r.joint_loss[0]);
    }
    SUBCASE("joint with lambda 1 is plain supervised training") {
        auto r = baselines::train_scheme({baselines::Scheme::joint, 1.0}, enc, dec, head, set, sp.cls_train, sp.cls_val,
                                         sp.cls_test, s, 5);
        auto f = classifier::finetune(enc, head, set, sp.cls_train, sp.cls_val, sp.cls_test, s, 5);
        CHECK(r.joint_loss == f.train_loss);
        CHECK(r.val_accuracy == f.val_accuracy);
    }
    SUBCASE("lambda outside (0, 1] is rejected") {
        CHECK_THROWS_AS(baselines::train_scheme({baselines::Scheme::joint, 0.0}, enc, dec, head, set, sp.cls_train,
                                                sp.cls_val, sp.cls_test, s, 5),
                        InvalidArgument);
    }
}

// ---- checkpoints --------------------------------------------------------

TEST_CASE("checkpoint round trips") {
    const auto dir = scratch("ckpt");
    Rng rng(13);
    const auto enc = sscl::EncoderParams::init(3, 4, 5, rng, 6);
    const auto proj = sscl::ProjectionParams::init(45, rng, 7, 8);
    const data::BandStats stats{{1, 2, 3, 4}, {1, 1, 2, 2}};
    ckpt::save_pretrained(dir / "pre", enc, proj, stats, {{"seed", 3}});
    const auto p = ckpt::load_pretrained(dir / "pre");
    CHECK(p.encoder.layer1.weight == enc.layer1.weight);
    CHECK(p.encoder.layer2.bias == enc.layer2.bias);
    CHECK(p.projection.layer2.weight == proj.layer2.weight);
    CHECK(p.stats.mean == stats.mean);
    CHECK(p.manifest.at("seed") == 3);
    CHECK(p.manifest.at("projection").at("final_activation") == "none");

    const classifier::TrainedModel model{enc, classifier::ClassifierParams::init(45, 3, rng, 10)};
    ckpt::save_model(dir / "model", model, stats, {});
    const auto m = ckpt::load_model(dir / "model");
    CHECK(m.model.head.layer1.weight == model.head.layer1.weight);
    CHECK(m.model.head.num_classes() == 3);

    CHECK_THROWS_AS(ckpt::load_model(dir / "pre"), CheckpointError);
    CHECK_THROWS_AS(ckpt::load_pretrained(dir / "model"), CheckpointError);
    CHECK_THROWS_AS(ckpt::load_pretrained(dir / "missing"), CheckpointError);
    fs::remove(dir / "pre" / "encoder.layer1.weight.npy");
    CHECK_THROWS_AS(ckpt::load_pretrained(dir / "pre"), CheckpointError);
}
