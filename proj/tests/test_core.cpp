#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"

#include "hsic/error.hpp"
#include "hsic/kernels.hpp"
#include "hsic/npy.hpp"
#include "hsic/rng.hpp"
#include "hsic/tensor.hpp"
#include "oracles.hpp"

using namespace hsic;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("hsic-test-core-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Hand-assembled .npy: magic, version, little-endian header length, padded dict, payload.
void write_npy(const fs::path& path, int major, const std::string& dict, const void* payload, std::size_t bytes) {
    std::string header = dict;
    const std::size_t prefix = major == 1 ? 10 : 12;
    while ((prefix + header.size() + 1) % 64 != 0) header += ' ';
    header += '\n';
    std::ofstream f(path, std::ios::binary);
    f.write("\x93NUMPY", 6);
    f.put(static_cast<char>(major));
    f.put(0);
    const std::uint32_t len = static_cast<std::uint32_t>(header.size());
    if (major == 1) {
        f.put(static_cast<char>(len & 0xff));
        f.put(static_cast<char>(len >> 8));
    } else {
        for (int i = 0; i < 4; ++i) f.put(static_cast<char>((len >> (8 * i)) & 0xff));
    }
    f << header;
    f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
}

}  // namespace

TEST_CASE("rng streams are reproducible and tagged streams differ") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        CHECK(va == b.next_u64());
        CHECK(va != c.next_u64());
    }
    CHECK(Rng::derive(1, "x").next_u64() == Rng::derive(1, "x").next_u64());
    CHECK(Rng::derive(1, "x").next_u64() != Rng::derive(1, "y").next_u64());
    CHECK(Rng::derive(1, "x").next_u64() != Rng::derive(2, "x").next_u64());
}

TEST_CASE("rng draws stay in range") {
    Rng r(5);
    for (int i = 0; i < 10000; ++i) {
        const float f = r.uniform_float();
        CHECK((f >= 0.0f && f < 1.0f));
        const double d = r.uniform_double();
        CHECK((d >= 0.0 && d < 1.0));
        CHECK(r.below(7) < 7);
    }
}

TEST_CASE("coin and normal have the expected moments") {
    Rng r(9);
    const int n = 200000;
    int heads = 0;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        heads += r.coin(0.3) ? 1 : 0;
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(static_cast<double>(heads) / n == doctest::Approx(0.3).epsilon(0.02));
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("permutation is a permutation") {
    Rng r(3);
    for (std::size_t n : {1u, 2u, 17u, 1000u}) {
        auto p = r.permutation(n);
        std::set<std::size_t> s(p.begin(), p.end());
        CHECK(s.size() == n);
        CHECK(*s.rbegin() == n - 1);
    }
}

TEST_CASE("fnv1a64 matches the published test vectors") {
    CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ULL);
}

TEST_CASE("tensor shape validation") {
    CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{3, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6.0f);
    CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
    CHECK(t.reshaped({3, 2}).at(2, 1) == 6.0f);
    CHECK(t.cast<double>().at(0, 1) == 2.0);
}

TEST_CASE("gemm matches the triple-loop oracle for every transpose combination") {
    using kernels::Trans;
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t m = 1 + rng.below(9), n = 1 + rng.below(9), k = 1 + rng.below(9);
        oracle::Mat a(m, std::vector<double>(k)), b(k, std::vector<double>(n));
        for (auto& row : a)
            for (auto& v : row) v = rng.normal();
        for (auto& row : b)
            for (auto& v : row) v = rng.normal();
        const auto want = oracle::matmul(a, b);
        for (Trans ta : {Trans::no, Trans::yes}) {
            for (Trans tb : {Trans::no, Trans::yes}) {
                std::vector<double> A(m * k), B(k * n), C(m * n, 0.5);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j) (ta == Trans::no ? A[i * k + j] : A[j * m + i]) = a[i][j];
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < n; ++j) (tb == Trans::no ? B[i * n + j] : B[j * k + i]) = b[i][j];
                kernels::gemm_serial(ta, tb, m, n, k, A.data(), B.data(), C.data(), false);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) CHECK(C[i * n + j] == doctest::Approx(want[i][j]).epsilon(1e-12));
                kernels::gemm_serial(ta, tb, m, n, k, A.data(), B.data(), C.data(), true);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) CHECK(C[i * n + j] == doctest::Approx(2 * want[i][j]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("parallel gemm is bit-identical to the serial reference") {
    using kernels::Trans;
    Rng rng(12);
    for (auto [m, n, k] : {std::tuple{1u, 1u, 1u}, std::tuple{37u, 29u, 53u}, std::tuple{300u, 64u, 128u}}) {
        std::vector<float> A(m * k), B(k * n), C1(m * n), C2(m * n);
        for (auto& v : A) v = static_cast<float>(rng.normal());
        for (auto& v : B) v = static_cast<float>(rng.normal());
        for (Trans ta : {Trans::no, Trans::yes}) {
            for (Trans tb : {Trans::no, Trans::yes}) {
                kernels::gemm_serial(ta, tb, m, n, k, A.data(), B.data(), C1.data(), false);
                kernels::gemm_parallel(ta, tb, m, n, k, A.data(), B.data(), C2.data(), false);
                CHECK(std::memcmp(C1.data(), C2.data(), C1.size() * sizeof(float)) == 0);
                kernels::gemm(ta, tb, m, n, k, A.data(), B.data(), C2.data(), false);
                CHECK(std::memcmp(C1.data(), C2.data(), C1.size() * sizeof(float)) == 0);
            }
        }
    }
}

TEST_CASE("npy float round trip and header layout") {
    const auto dir = scratch("roundtrip");
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.25f - 1.0f;
    npy::save(dir / "t.npy", t);
    CHECK((fs::file_size(dir / "t.npy") - t.size() * sizeof(float)) % 64 == 0);
    const auto h = npy::read_header(dir / "t.npy");
    CHECK(h.descr == "<f4");
    CHECK(h.shape == Shape{2, 3, 4});
    CHECK(npy::load_float(dir / "t.npy") == t);

    npy::save(dir / "i.npy", Shape{2, 2}, std::vector<std::int32_t>{0, 3, -1, 7});
    const auto ia = npy::load_int(dir / "i.npy");
    CHECK(ia.shape == Shape{2, 2});
    CHECK(ia.data == std::vector<std::int64_t>{0, 3, -1, 7});
}

TEST_CASE("npy reader handles f8, u1, fortran order and version 2 headers") {
    const auto dir = scratch("dtypes");
    const double d[6] = {1, 2, 3, 4, 5, 6};
    // Fortran order: column-major storage of [[1,3,5],[2,4,6]].
    write_npy(dir / "f.npy", 1, "{'descr': '<f8', 'fortran_order': True, 'shape': (2, 3), }", d, sizeof d);
    const Tensor f = npy::load_float(dir / "f.npy");
    CHECK(f.shape() == Shape{2, 3});
    CHECK(f.vec() == std::vector<float>{1, 3, 5, 2, 4, 6});

    const std::uint8_t u[4] = {0, 1, 2, 255};
    write_npy(dir / "u.npy", 2, "{'descr': '|u1', 'fortran_order': False, 'shape': (4,), }", u, sizeof u);
    const auto ua = npy::load_int(dir / "u.npy");
    CHECK(ua.data == std::vector<std::int64_t>{0, 1, 2, 255});

    const std::int64_t l[3] = {-5, 0, 9};
    write_npy(dir / "l.npy", 1, "{'descr': '<i8', 'fortran_order': False, 'shape': (3,), }", l, sizeof l);
    CHECK(npy::load_float(dir / "l.npy").vec() == std::vector<float>{-5, 0, 9});
}

TEST_CASE("npy errors are categorised") {
    const auto dir = scratch("errors");
    CHECK_THROWS_AS(npy::load_float(dir / "missing.npy"), DataNotFoundError);
    {
        std::ofstream f(dir / "junk.npy", std::ios::binary);
        f << "not an npy file at all";
    }
    CHECK_THROWS_AS(npy::load_float(dir / "junk.npy"), DataFormatError);
    const float x[2] = {1, 2};
    write_npy(dir / "be.npy", 1, "{'descr': '>f4', 'fortran_order': False, 'shape': (2,), }", x, sizeof x);
    CHECK_THROWS_AS(npy::load_float(dir / "be.npy"), DataFormatError);
    write_npy(dir / "short.npy", 1, "{'descr': '<f4', 'fortran_order': False, 'shape': (5,), }", x, sizeof x);
    CHECK_THROWS_AS(npy::load_float(dir / "short.npy"), DataFormatError);
    const float frac[2] = {1.5f, 2.0f};
    write_npy(dir / "frac.npy", 1, "{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }", frac, sizeof frac);
    CHECK_THROWS_AS(npy::load_int(dir / "frac.npy"), DataFormatError);
}
