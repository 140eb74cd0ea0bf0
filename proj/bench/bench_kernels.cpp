// Serial reference vs OpenMP kernels on the matrix shapes training produces.
// Batch 260 of 3x3 patches gives 2340 pixel rows; bands 103 (PaviaU).

#include <benchmark/benchmark.h>

#include <vector>

#include "hsic/kernels.hpp"
#include "hsic/rng.hpp"

using hsic::kernels::Trans;

namespace {

struct Operands {
    std::vector<float> a, b, c;
};

Operands make(std::size_t m, std::size_t n, std::size_t k) {
    hsic::Rng rng(1);
    Operands o{std::vector<float>(m * k), std::vector<float>(k * n), std::vector<float>(m * n)};
    for (auto& v : o.a) v = static_cast<float>(rng.normal());
    for (auto& v : o.b) v = static_cast<float>(rng.normal());
    return o;
}

template <bool Parallel>
void gemm(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
               k = static_cast<std::size_t>(state.range(2));
    auto o = make(m, n, k);
    for (auto _ : state) {
        if constexpr (Parallel) hsic::kernels::gemm_parallel(Trans::no, Trans::yes, m, n, k, o.a.data(), o.b.data(), o.c.data(), false);
        else hsic::kernels::gemm_serial(Trans::no, Trans::yes, m, n, k, o.a.data(), o.b.data(), o.c.data(), false);
        benchmark::DoNotOptimize(o.c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * n * k));
}

// Weight gradient: dW = dYᵀ·X, reduction over the long batch dimension.
template <bool Parallel>
void gemm_weight_grad(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
               k = static_cast<std::size_t>(state.range(2));
    auto o = make(m, n, k);
    for (auto _ : state) {
        if constexpr (Parallel) hsic::kernels::gemm_parallel(Trans::yes, Trans::no, m, n, k, o.a.data(), o.b.data(), o.c.data(), false);
        else hsic::kernels::gemm_serial(Trans::yes, Trans::no, m, n, k, o.a.data(), o.b.data(), o.c.data(), false);
        benchmark::DoNotOptimize(o.c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * n * k));
}

void shapes(benchmark::internal::Benchmark* b) {
    b->Args({2340, 128, 103});  // encoder layer 1
    b->Args({2340, 32, 128});   // encoder layer 2
    b->Args({260, 64, 288});    // classifier layer 1
    b->Args({600, 600, 64});    // NT-Xent similarity, batch 300
}

}  // namespace

BENCHMARK(gemm<false>)->Name("gemm/serial")->Apply(shapes);
BENCHMARK(gemm<true>)->Name("gemm/parallel")->Apply(shapes);
BENCHMARK(gemm_weight_grad<false>)->Name("gemm_weight_grad/serial")->Args({128, 103, 2340});
BENCHMARK(gemm_weight_grad<true>)->Name("gemm_weight_grad/parallel")->Args({128, 103, 2340});

BENCHMARK_MAIN();
