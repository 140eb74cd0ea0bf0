#include <cmath>

#include "doctest.h"

#include "hsic/autodiff.hpp"
#include "hsic/error.hpp"
#include "oracles.hpp"

using namespace hsic;
using DTape = ad::BasicTape<double>;
using DTensor = BasicTensor<double>;
using Vars = std::vector<ad::Var>;

namespace {

constexpr double kGradTol = 1e-4;

void expect_grads(const oracle::Builder& build, std::vector<DTensor> params) {
    const auto r = oracle::check_gradients(build, std::move(params));
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < kGradTol);
}

}  // namespace

TEST_CASE("finite differences agree for each primitive") {
    Rng rng(21);
    SUBCASE("matmul") {
        expect_grads([](DTape& t, const Vars& v) { return ad::sum(t, ad::matmul(t, v[0], v[1])); },
                     {oracle::random_tensor({3, 4}, rng), oracle::random_tensor({4, 2}, rng)});
    }
    SUBCASE("affine") {
        expect_grads(
            [](DTape& t, const Vars& v) {
                auto y = ad::affine(t, v[0], v[1], v[2]);
                return ad::sum(t, ad::mul(t, y, y));
            },
            {oracle::random_tensor({5, 3}, rng), oracle::random_tensor({4, 3}, rng), oracle::random_tensor({4}, rng)});
    }
    SUBCASE("reshape, relu and scale") {
        expect_grads(
            [](DTape& t, const Vars& v) {
                auto r = ad::relu(t, ad::reshape(t, v[0], {3, 4}));
                return ad::sum(t, ad::mul(t, ad::scale(t, r, 1.5), ad::reshape(t, v[1], {3, 4})));
            },
            {oracle::random_tensor({12}, rng), oracle::random_tensor({2, 6}, rng)});
    }
    SUBCASE("sigmoid") {
        expect_grads([](DTape& t, const Vars& v) { return ad::sum(t, ad::mul(t, ad::sigmoid(t, v[0]), v[1])); },
                     {oracle::random_tensor({4, 3}, rng, 3.0), oracle::random_tensor({4, 3}, rng)});
    }
    SUBCASE("log_softmax") {
        expect_grads([](DTape& t, const Vars& v) { return ad::sum(t, ad::mul(t, ad::log_softmax(t, v[0]), v[1])); },
                     {oracle::random_tensor({3, 5}, rng), oracle::random_tensor({3, 5}, rng)});
    }
    SUBCASE("l2_normalize") {
        expect_grads([](DTape& t, const Vars& v) { return ad::sum(t, ad::mul(t, ad::l2_normalize(t, v[0]), v[1])); },
                     {oracle::random_tensor({4, 6}, rng), oracle::random_tensor({4, 6}, rng)});
    }
    SUBCASE("add, sub and mean") {
        expect_grads(
            [](DTape& t, const Vars& v) {
                auto d = ad::sub(t, ad::add(t, v[0], v[1]), v[1]);
                return ad::mean(t, ad::mul(t, d, v[0]));
            },
            {oracle::random_tensor({3, 3}, rng), oracle::random_tensor({3, 3}, rng)});
    }
    SUBCASE("dropout with a fixed mask") {
        expect_grads(
            [](DTape& t, const Vars& v) {
                Rng mask_rng(99);
                auto d = ad::dropout(t, v[0], 0.4, mask_rng, true);
                return ad::sum(t, ad::mul(t, d, d));
            },
            {oracle::random_tensor({6, 5}, rng)});
    }
}

TEST_CASE("relu subgradient at zero is zero") {
    DTape t;
    auto x = t.parameter(DTensor({3}, {-1.0, 0.0, 2.0}));
    t.backward(ad::sum(t, ad::relu(t, x)));
    CHECK(t.grad(x).vec() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("gradients accumulate through shared inputs") {
    DTape t;
    auto x = t.parameter(DTensor({2}, {3.0, -2.0}));
    t.backward(ad::sum(t, ad::mul(t, x, x)));
    CHECK(t.grad(x).vec() == std::vector<double>{6.0, -4.0});
}

TEST_CASE("backward requires a scalar and resets previous gradients") {
    DTape t;
    auto x = t.parameter(DTensor({2}, {1.0, 2.0}));
    auto y = ad::scale(t, x, 2.0);
    CHECK_THROWS_AS(t.backward(y), ShapeError);
    auto l = ad::sum(t, y);
    t.backward(l);
    t.backward(l);
    CHECK(t.grad(x).vec() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("constants carry no gradient") {
    DTape t;
    auto c = t.constant(DTensor({2}, {1.0, 2.0}));
    auto p = t.parameter(DTensor({2}, {3.0, 4.0}));
    auto l = ad::sum(t, ad::mul(t, c, p));
    CHECK_FALSE(t.requires_grad(c));
    CHECK(t.requires_grad(l));
    t.backward(l);
    CHECK(t.grad_buffer(c) == nullptr);
    CHECK(t.grad(c).vec() == std::vector<double>{0.0, 0.0});
    CHECK(t.grad(p).vec() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("shape errors") {
    DTape t;
    auto a = t.constant(DTensor({2, 3}));
    auto b = t.constant(DTensor({2, 3}));
    CHECK_THROWS_AS(ad::matmul(t, a, b), ShapeError);
    CHECK_THROWS_AS(ad::add(t, a, t.constant(DTensor({3, 2}))), ShapeError);
    CHECK_THROWS_AS(ad::affine(t, a, t.constant(DTensor({4, 2})), t.constant(DTensor({4}))), ShapeError);
    CHECK_THROWS_AS(ad::reshape(t, a, {4}), ShapeError);
}

TEST_CASE("l2_normalize rejects zero rows") {
    DTape t;
    auto x = t.constant(DTensor({2, 2}, {1.0, 0.0, 0.0, 0.0}));
    CHECK_THROWS_AS(ad::l2_normalize(t, x), DegenerateInputError);
}

TEST_CASE("dropout statistics and modes") {
    Rng rng(4);
    ad::Tape t;
    auto x = t.constant(Tensor::full({200, 500}, 1.0f));
    CHECK_THROWS_AS(ad::dropout(t, x, 1.0, rng, true), InvalidArgument);
    CHECK_THROWS_AS(ad::dropout(t, x, -0.1, rng, true), InvalidArgument);
    CHECK(ad::dropout(t, x, 0.5, rng, false).id == x.id);

    const auto& y = t.value(ad::dropout(t, x, 0.3, rng, true));
    std::size_t zeros = 0;
    double sum = 0.0;
    for (float v : y.data()) {
        if (v == 0.0f) ++zeros;
        else CHECK(v == doctest::Approx(1.0 / 0.7));
        sum += v;
    }
    // Binomial(100000, 0.3): sd ≈ 145, so ±1 % is more than six sd.
    CHECK(static_cast<double>(zeros) / y.size() == doctest::Approx(0.3).epsilon(0.01 / 0.3));
    CHECK(sum / y.size() == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("sigmoid is stable for large magnitudes") {
    CHECK(ad::stable_sigmoid(1000.0) == 1.0);
    CHECK(ad::stable_sigmoid(-1000.0) == 0.0);
    CHECK(ad::stable_sigmoid(0.0) == 0.5);
    CHECK(std::isfinite(ad::stable_sigmoid(-80.0f)));
}

TEST_CASE("log_softmax is shift invariant") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        DTensor x = oracle::random_tensor({3, 6}, rng, 4.0);
        DTensor shifted = x;
        const double c = 100.0 * rng.normal();
        for (auto& v : shifted.data()) v += c;
        DTape t;
        const auto& a = t.value(ad::log_softmax(t, t.constant(x)));
        const auto& b = t.value(ad::log_softmax(t, t.constant(shifted)));
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
    }
}
