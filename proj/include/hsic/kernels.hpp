#pragma once

#include <cstddef>

namespace hsic::kernels {

enum class Trans { no, yes };

// Row-major C(m×n) = op(A)(m×k) · op(B)(k×n), or C += ... when accumulate is set.
// Every output element is summed over k in ascending order starting from zero,
// so the serial and parallel variants produce bit-identical results.

template <class T>
void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 const T* a, const T* b, T* c, bool accumulate);

/// OpenMP over output rows. Falls back to the serial loop when built without OpenMP.
template <class T>
void gemm_parallel(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                   const T* a, const T* b, T* c, bool accumulate);

/// Dispatches to the parallel variant when enabled and the product is large enough.
template <class T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

void set_parallel(bool enabled);
bool parallel_enabled();
bool openmp_available();
int max_threads();

}  // namespace hsic::kernels
