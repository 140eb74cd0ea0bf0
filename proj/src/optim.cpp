#include "hsic/optim.hpp"

#include <cmath>
#include <string>

#include "hsic/error.hpp"

namespace hsic::optim {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double l2_weight) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i].shape()) {
            throw ShapeError("adam_step: gradient " + std::to_string(i) + " has shape " + shape_str(grads[i].shape()) +
                             ", parameter has " + shape_str(params[i]->shape()));
        }
        for (float g : grads[i].data()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter tensor " + std::to_string(i));
        }
    }
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    } else if (state.m.size() != params.size()) {
        throw ShapeError("adam_step: optimiser state tracks a different parameter list");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i]->data();
        auto g = grads[i].data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double gj = static_cast<double>(g[j]) + l2_weight * theta[j];
            m[j] = static_cast<float>(state.beta1 * m[j] + (1.0 - state.beta1) * gj);
            v[j] = static_cast<float>(state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] = static_cast<float>(theta[j] - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

double lr_at(const LrSchedule& schedule, int epoch) {
    if (epoch < 0) throw InvalidArgument("epoch must be non-negative");
    const int step = schedule.step > 0 ? schedule.step : 1;
    return schedule.base * std::pow(schedule.gamma, epoch / step);
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> indices, std::size_t batch_size,
                                                   Rng& rng, bool drop_last) {
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    std::vector<std::size_t> order(indices.begin(), indices.end());
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        if (drop_last && end - start < batch_size && !batches.empty()) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

std::uint64_t digest(std::span<const Tensor* const> params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor* p : params) h = fnv1a64(p->data().data(), p->size() * sizeof(float), h);
    return h;
}

}  // namespace hsic::optim
