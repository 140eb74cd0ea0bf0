#include "hsic/kernels.hpp"

#include <atomic>
#include <vector>

#ifdef HSIC_HAVE_OPENMP
#include <omp.h>
#endif

namespace hsic::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Products below this many multiply-adds stay serial; thread startup dominates.
constexpr std::size_t kParallelThreshold = 1u << 16;

template <Trans TA, class T>
inline T load_a(const T* a, std::size_t m, std::size_t k, std::size_t i, std::size_t p) {
    if constexpr (TA == Trans::no) return a[i * k + p];
    else return a[p * m + i];
}

// One output row. `scratch` holds n accumulators. The transpose of A is a
// template argument so the inner loops carry no branch.
template <Trans TA, class T>
inline void gemm_row(Trans tb, std::size_t i, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
                     T* c, bool accumulate, T* scratch) {
    T* crow = c + i * n;
    if (tb == Trans::yes) {
        // Four independent accumulators; each still sums over p in order.
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const T* b0 = b + j * k;
            const T* b1 = b0 + k;
            const T* b2 = b1 + k;
            const T* b3 = b2 + k;
            T acc0{}, acc1{}, acc2{}, acc3{};
            for (std::size_t p = 0; p < k; ++p) {
                const T aip = load_a<TA>(a, m, k, i, p);
                acc0 += aip * b0[p];
                acc1 += aip * b1[p];
                acc2 += aip * b2[p];
                acc3 += aip * b3[p];
            }
            crow[j] = accumulate ? crow[j] + acc0 : acc0;
            crow[j + 1] = accumulate ? crow[j + 1] + acc1 : acc1;
            crow[j + 2] = accumulate ? crow[j + 2] + acc2 : acc2;
            crow[j + 3] = accumulate ? crow[j + 3] + acc3 : acc3;
        }
        for (; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{};
            for (std::size_t p = 0; p < k; ++p) acc += load_a<TA>(a, m, k, i, p) * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
        return;
    }
    for (std::size_t j = 0; j < n; ++j) scratch[j] = T{};
    for (std::size_t p = 0; p < k; ++p) {
        const T aip = load_a<TA>(a, m, k, i, p);
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) scratch[j] += aip * brow[j];
    }
    if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += scratch[j];
    } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] = scratch[j];
    }
}

template <class T>
inline void gemm_row(Trans ta, Trans tb, std::size_t i, std::size_t m, std::size_t n, std::size_t k, const T* a,
                     const T* b, T* c, bool accumulate, T* scratch) {
    if (ta == Trans::no) gemm_row<Trans::no>(tb, i, m, n, k, a, b, c, accumulate, scratch);
    else gemm_row<Trans::yes>(tb, i, m, n, k, a, b, c, accumulate, scratch);
}

}  // namespace

template <class T>
void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 const T* a, const T* b, T* c, bool accumulate) {
    std::vector<T> scratch(n);
    for (std::size_t i = 0; i < m; ++i) gemm_row(ta, tb, i, m, n, k, a, b, c, accumulate, scratch.data());
}

template <class T>
void gemm_parallel(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                   const T* a, const T* b, T* c, bool accumulate) {
#ifdef HSIC_HAVE_OPENMP
#pragma omp parallel
    {
        std::vector<T> scratch(n);
        const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i) {
            gemm_row(ta, tb, static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate, scratch.data());
        }
    }
#else
    gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
#endif
}

template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
    if (g_parallel.load(std::memory_order_relaxed) && m > 1 && m * n * k >= kParallelThreshold) {
        gemm_parallel(ta, tb, m, n, k, a, b, c, accumulate);
    } else {
        gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
    }
}

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

bool openmp_available() {
#ifdef HSIC_HAVE_OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef HSIC_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

#define HSIC_INSTANTIATE_GEMM(T)                                                                      \
    template void gemm_serial<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*,      \
                                 const T*, T*, bool);                                                 \
    template void gemm_parallel<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*,    \
                                   const T*, T*, bool);                                               \
    template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*, const T*,   \
                          T*, bool);

HSIC_INSTANTIATE_GEMM(float)
HSIC_INSTANTIATE_GEMM(double)

#undef HSIC_INSTANTIATE_GEMM

}  // namespace hsic::kernels
