#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace hsic {

std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256++ seeded through splitmix64. Passed explicitly; there is no
/// global generator anywhere in the library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /// Independent stream derived from a seed and a purpose tag, so that the
    /// pretraining split, the classifier split and weight init never share draws.
    static Rng derive(std::uint64_t seed, std::string_view tag);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 24 bits of mantissa.
    float uniform_float();
    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform_double();
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    bool coin(double p_true = 0.5);
    /// Standard normal via Box-Muller.
    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n);

    const std::array<std::uint64_t, 4>& state() const { return s_; }

private:
    std::array<std::uint64_t, 4> s_{};
};

/// 64-bit FNV-1a. Used for digests of parameters, splits and source files.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace hsic
