#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hsic/tensor.hpp"

namespace hsic::npy {

/// Parsed header of an .npy file (format versions 1.0, 2.0 and 3.0).
struct Header {
    std::string descr;  // e.g. "<f4", "|u1", "<i8"
    bool fortran_order = false;
    Shape shape;
    std::uint8_t major = 1;
    std::uint8_t minor = 0;
};

Header parse_header_dict(const std::string& dict);

/// Float array read from any supported dtype (f4, f8, signed/unsigned ints).
/// Fortran-ordered arrays are transposed into row-major order.
Tensor load_float(const std::filesystem::path& path);

/// Integer array (label rasters). Floating dtypes are accepted only when every
/// value is integral.
struct IntArray {
    Shape shape;
    std::vector<std::int64_t> data;
};
IntArray load_int(const std::filesystem::path& path);

Header read_header(const std::filesystem::path& path);

/// Writes a version 1.0, little-endian, C-ordered array.
void save(const std::filesystem::path& path, const Tensor& t);
void save(const std::filesystem::path& path, const Shape& shape, const std::vector<std::int32_t>& data);

}  // namespace hsic::npy
