#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hsic/rng.hpp"
#include "hsic/tensor.hpp"

namespace hsic::optim {

/// Per-stage optimisation budget.
struct StageHyper {
    int epochs = 10;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double gamma = 0.9;
    int lr_step = 10;
    double l2_weight = 0.0;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with coupled L2 (g ← g + l2·θ before the moment updates).
/// Throws NumericError on a non-finite gradient; parameters are untouched then.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double l2_weight);

struct LrSchedule {
    double base = 1e-3;
    int step = 10;
    double gamma = 0.9;
};

/// base · gamma^floor(epoch / step)
double lr_at(const LrSchedule& schedule, int epoch);

/// Shuffled mini-batches over `indices`. When `drop_last` is set an
/// incomplete trailing batch is dropped, unless it would be the only batch.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> indices, std::size_t batch_size,
                                                   Rng& rng, bool drop_last);

/// Digest of parameter bytes, used for trajectory and freeze checks.
std::uint64_t digest(std::span<const Tensor* const> params);

}  // namespace hsic::optim
