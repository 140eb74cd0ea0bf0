#include <cmath>
#include <numeric>

#include "doctest.h"

#include "hsic/classifier.hpp"
#include "hsic/error.hpp"
#include "hsic/sscl.hpp"
#include "oracles.hpp"

using namespace hsic;
using DTape = ad::BasicTape<double>;
using DTensor = BasicTensor<double>;

namespace {

oracle::Mat to_mat(const DTensor& t) {
    oracle::Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

double ntx(const DTensor& raw, double T) {
    DTape t;
    return t.value(sscl::nt_xent(t, ad::l2_normalize(t, t.constant(raw)), T))[0];
}

}  // namespace

TEST_CASE("nt_xent matches the double-loop oracle") {
    Rng rng(31);
    const double temps[] = {0.05, 0.1, 0.5, 1.0};
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(8), d = 2 + rng.below(15);
        const double T = temps[rng.below(4)];
        DTensor raw = oracle::random_tensor({2 * n, d}, rng);
        CHECK(std::abs(ntx(raw, T) - oracle::nt_xent(to_mat(raw), T, true)) < 1e-6);
    }
}

TEST_CASE("nt_xent closed forms") {
    SUBCASE("a single pair has nothing to contrast against") {
        Rng rng(2);
        for (int i = 0; i < 20; ++i) CHECK(ntx(oracle::random_tensor({2, 5}, rng), 0.1) == 0.0);
    }
    SUBCASE("two orthonormal pairs with identical views") {
        DTensor z({4, 4}, {1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0});
        CHECK(std::abs(ntx(z, 1.0) - std::log(1.0 + 2.0 * std::exp(-1.0))) < 1e-9);
    }
}

TEST_CASE("nt_xent argument checks") {
    DTape t;
    auto z = t.constant(DTensor::full({4, 3}, 0.5));
    CHECK_THROWS_AS(sscl::nt_xent(t, z, 0.0), InvalidArgument);
    CHECK_THROWS_AS(sscl::nt_xent(t, t.constant(DTensor::full({3, 3}, 0.5)), 0.1), InvalidArgument);
}

TEST_CASE("nt_xent gradient") {
    Rng rng(32);
    for (double T : {0.05, 0.5}) {
        const auto r = oracle::check_gradients(
            [T](DTape& t, const std::vector<ad::Var>& v) { return sscl::nt_xent(t, ad::l2_normalize(t, v[0]), T); },
            {oracle::random_tensor({6, 5}, rng)});
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("nt_xent invariances") {
    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(6), d = 3 + rng.below(8);
        DTensor raw = oracle::random_tensor({2 * n, d}, rng);
        const double base = ntx(raw, 0.1);

        // Reordering pairs (keeping each pair adjacent) changes nothing.
        std::vector<std::size_t> order = rng.permutation(n);
        DTensor permuted({2 * n, d});
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t s = 0; s < 2; ++s)
                for (std::size_t c = 0; c < d; ++c) permuted.at(2 * k + s, c) = raw.at(2 * order[k] + s, c);
        CHECK(std::abs(ntx(permuted, 0.1) - base) < 1e-6);

        // Swapping the two views inside a pair changes nothing.
        DTensor swapped = raw;
        for (std::size_t c = 0; c < d; ++c) std::swap(swapped.at(0, c), swapped.at(1, c));
        CHECK(std::abs(ntx(swapped, 0.1) - base) < 1e-6);

        // Positive rescaling of any row is removed by the normalisation.
        DTensor scaled = raw;
        for (std::size_t r = 0; r < 2 * n; ++r) {
            const double s = std::exp(2.0 * rng.normal());
            for (std::size_t c = 0; c < d; ++c) scaled.at(r, c) *= s;
        }
        CHECK(std::abs(ntx(scaled, 0.1) - base) < 1e-6);
    }
}

TEST_CASE("bce_logits_loss matches the literal loop") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(10), c = 1 + rng.below(8);
        DTensor x = oracle::random_tensor({n, c}, rng, 3.0);
        DTensor y({n, c});
        classifier::LossWeights w;
        oracle::Mat wm(n, std::vector<double>(c, 1.0));
        std::vector<double> pm(c, 1.0);
        for (auto& v : y.data()) v = rng.coin() ? 1.0 : 0.0;
        if (trial % 2 == 1) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    const float wv = static_cast<float>(0.1 + rng.uniform_double());
                    w.sample.push_back(wv);
                    wm[i][j] = wv;
                }
            for (std::size_t j = 0; j < c; ++j) {
                const float pv = static_cast<float>(0.5 + 2.0 * rng.uniform_double());
                w.positive.push_back(pv);
                pm[j] = pv;
            }
        }
        DTape t;
        const double got = t.value(classifier::bce_logits_loss(t, t.constant(x), y, w))[0];
        CHECK(std::abs(got - oracle::bce(to_mat(x), to_mat(y), wm, pm)) < 1e-6);
    }
}

TEST_CASE("bce_logits_loss stays finite for extreme logits and checks its inputs") {
    DTape t;
    DTensor x({1, 2}, {800.0, -800.0});
    DTensor y({1, 2}, {0.0, 1.0});
    const double v = t.value(classifier::bce_logits_loss(t, t.constant(x), y))[0];
    CHECK(v == doctest::Approx(800.0));
    CHECK_THROWS_AS(classifier::bce_logits_loss(t, t.constant(x), DTensor({1, 2}, {0.5, 1.0})), InvalidArgument);
    CHECK_THROWS_AS(classifier::bce_logits_loss(t, t.constant(x), DTensor({2, 1})), ShapeError);
}

TEST_CASE("cross_entropy_loss matches the literal loop") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(10), c = 2 + rng.below(8);
        DTensor x = oracle::random_tensor({n, c}, rng, 3.0);
        std::vector<int> targets(n);
        for (auto& v : targets) v = 1 + static_cast<int>(rng.below(c));
        DTape t;
        const double got = t.value(classifier::cross_entropy_loss(t, t.constant(x), targets))[0];
        CHECK(std::abs(got - oracle::cross_entropy(to_mat(x), targets)) < 1e-6);
    }
}

TEST_CASE("uniform logits give ln C") {
    for (std::size_t c : {2u, 3u, 9u, 16u, 20u}) {
        DTape t;
        std::vector<int> targets = {1, static_cast<int>(c)};
        const double v = t.value(classifier::cross_entropy_loss(t, t.constant(DTensor::full({2, c}, 0.7)), targets))[0];
        CHECK(std::abs(v - std::log(static_cast<double>(c))) < 1e-9);
    }
}

TEST_CASE("cross entropy is shift invariant and rejects bad targets") {
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        DTensor x = oracle::random_tensor({4, 5}, rng);
        DTensor shifted = x;
        for (std::size_t r = 0; r < 4; ++r) {
            const double s = 50.0 * rng.normal();
            for (std::size_t c = 0; c < 5; ++c) shifted.at(r, c) += s;
        }
        std::vector<int> targets = {1, 2, 3, 5};
        DTape t;
        const double a = t.value(classifier::cross_entropy_loss(t, t.constant(x), targets))[0];
        const double b = t.value(classifier::cross_entropy_loss(t, t.constant(shifted), targets))[0];
        CHECK(std::abs(a - b) < 1e-9);
    }
    DTape t;
    auto x = t.constant(DTensor({1, 3}));
    CHECK_THROWS_AS(classifier::cross_entropy_loss(t, x, std::vector<int>{0}), InvalidArgument);
    CHECK_THROWS_AS(classifier::cross_entropy_loss(t, x, std::vector<int>{4}), InvalidArgument);
    CHECK_THROWS_AS(classifier::cross_entropy_loss(t, x, std::vector<int>{1, 2}), ShapeError);
}

TEST_CASE("loss gradients") {
    Rng rng(44);
    DTensor y({3, 4}, {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 1});
    classifier::LossWeights w{{}, {2.0f, 0.5f, 1.0f, 3.0f}};
    auto r1 = oracle::check_gradients(
        [&](DTape& t, const std::vector<ad::Var>& v) { return classifier::bce_logits_loss(t, v[0], y, w); },
        {oracle::random_tensor({3, 4}, rng, 2.0)});
    CHECK(r1.max_rel_error < 1e-4);
    std::vector<int> targets = {2, 4, 1};
    auto r2 = oracle::check_gradients(
        [&](DTape& t, const std::vector<ad::Var>& v) { return classifier::cross_entropy_loss(t, v[0], targets); },
        {oracle::random_tensor({3, 4}, rng, 2.0)});
    CHECK(r2.max_rel_error < 1e-4);
}

TEST_CASE("decision rules") {
    Tensor logits({3, 3}, {0.0f, -1.0f, 2.0f, -3.0f, -2.0f, -0.1f, 1.0f, 1.0f, 0.5f});
    const auto multi = classifier::predict_multi(logits, 0.5);
    CHECK(multi[0] == std::vector<int>{1, 3});  // σ(0) = 0.5 counts as positive
    CHECK(multi[1].empty());
    CHECK(multi[2] == std::vector<int>{1, 2, 3});
    const auto single = classifier::predict_single(logits);
    CHECK(single == std::vector<int>{3, 3, 1});  // ties go to the lowest class
}
