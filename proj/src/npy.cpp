#include "hsic/npy.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "hsic/error.hpp"

namespace hsic::npy {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";

struct Raw {
    Header header;
    std::vector<char> payload;
};

std::string read_exact(std::ifstream& in, std::size_t n, const fs::path& path) {
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n))) {
        throw DataFormatError(path.string() + ": truncated npy file");
    }
    return s;
}

std::size_t dtype_size(const std::string& descr) {
    if (descr.size() < 3) throw DataFormatError("unsupported npy dtype '" + descr + "'");
    const std::string width = descr.substr(2);
    if (width.find_first_not_of("0123456789") != std::string::npos) throw DataFormatError("unsupported npy dtype '" + descr + "'");
    return static_cast<std::size_t>(std::stoul(width));
}

Raw read_raw(const fs::path& path, bool with_payload) {
    if (!fs::exists(path)) throw DataNotFoundError("file not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataNotFoundError("cannot open " + path.string());
    const std::string magic = read_exact(in, 6, path);
    if (magic != std::string(kMagic, 6)) throw DataFormatError(path.string() + ": not an npy file (bad magic)");
    const std::string ver = read_exact(in, 2, path);
    const auto major = static_cast<std::uint8_t>(ver[0]);
    std::size_t header_len = 0;
    if (major == 1) {
        const std::string len = read_exact(in, 2, path);
        header_len = static_cast<unsigned char>(len[0]) | (static_cast<unsigned char>(len[1]) << 8);
    } else if (major == 2 || major == 3) {
        const std::string len = read_exact(in, 4, path);
        for (int i = 3; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(len[i]);
    } else {
        throw DataFormatError(path.string() + ": unsupported npy version " + std::to_string(major));
    }
    Raw raw;
    raw.header = parse_header_dict(read_exact(in, header_len, path));
    raw.header.major = major;
    raw.header.minor = static_cast<std::uint8_t>(ver[1]);
    if (with_payload) {
        const std::size_t bytes = shape_numel(raw.header.shape) * dtype_size(raw.header.descr);
        raw.payload.resize(bytes);
        if (!in.read(raw.payload.data(), static_cast<std::streamsize>(bytes))) {
            throw DataFormatError(path.string() + ": payload shorter than header promises");
        }
    }
    return raw;
}

template <class Out, class In>
void convert(const char* src, std::size_t n, std::vector<Out>& dst) {
    dst.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        In v;
        std::memcpy(&v, src + i * sizeof(In), sizeof(In));
        dst[i] = static_cast<Out>(v);
    }
}

template <class Out>
std::vector<Out> decode(const Raw& raw, const fs::path& path) {
    const std::string& d = raw.header.descr;
    if (d.size() < 3 || (d[0] != '<' && d[0] != '|' && d[0] != '=')) {
        throw DataFormatError(path.string() + ": only little-endian arrays are supported, got '" + d + "'");
    }
    const char kind = d[1];
    const std::size_t width = dtype_size(d);
    const std::size_t n = shape_numel(raw.header.shape);
    const char* src = raw.payload.data();
    std::vector<Out> out;
    if (kind == 'f' && width == 4) convert<Out, float>(src, n, out);
    else if (kind == 'f' && width == 8) convert<Out, double>(src, n, out);
    else if (kind == 'i' && width == 1) convert<Out, std::int8_t>(src, n, out);
    else if (kind == 'i' && width == 2) convert<Out, std::int16_t>(src, n, out);
    else if (kind == 'i' && width == 4) convert<Out, std::int32_t>(src, n, out);
    else if (kind == 'i' && width == 8) convert<Out, std::int64_t>(src, n, out);
    else if (kind == 'u' && width == 1) convert<Out, std::uint8_t>(src, n, out);
    else if (kind == 'u' && width == 2) convert<Out, std::uint16_t>(src, n, out);
    else if (kind == 'u' && width == 4) convert<Out, std::uint32_t>(src, n, out);
    else if (kind == 'u' && width == 8) convert<Out, std::uint64_t>(src, n, out);
    else throw DataFormatError(path.string() + ": unsupported dtype '" + d + "'");
    return out;
}

// Column-major → row-major.
template <class V>
std::vector<V> from_fortran(const std::vector<V>& src, const Shape& shape) {
    const std::size_t rank = shape.size();
    std::vector<V> dst(src.size());
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t f = 0; f < src.size(); ++f) {
        std::size_t c = 0;
        for (std::size_t d = 0; d < rank; ++d) c = c * shape[d] + idx[d];
        dst[c] = src[f];
        for (std::size_t d = 0; d < rank; ++d) {
            if (++idx[d] < shape[d]) break;
            idx[d] = 0;
        }
    }
    return dst;
}

void write_header(std::ofstream& out, const std::string& descr, const Shape& shape) {
    std::ostringstream dict;
    dict << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': (";
    for (std::size_t i = 0; i < shape.size(); ++i) dict << shape[i] << (shape.size() == 1 || i + 1 < shape.size() ? ", " : "");
    dict << "), }";
    std::string h = dict.str();
    // Total header (magic + version + length + dict + '\n') padded to 64 bytes.
    const std::size_t unpadded = 10 + h.size() + 1;
    h.append((64 - unpadded % 64) % 64, ' ');
    h.push_back('\n');
    const auto len = static_cast<std::uint16_t>(h.size());
    out.write(kMagic, 6);
    const char ver[2] = {1, 0};
    out.write(ver, 2);
    const char lb[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
    out.write(lb, 2);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataFormatError("cannot write " + path.string());
    return out;
}

}  // namespace

Header parse_header_dict(const std::string& dict) {
    Header h;
    static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
    static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
    std::smatch m;
    if (!std::regex_search(dict, m, descr_re)) throw DataFormatError("npy header lacks 'descr'");
    h.descr = m[1];
    if (!std::regex_search(dict, m, order_re)) throw DataFormatError("npy header lacks 'fortran_order'");
    h.fortran_order = m[1] == "True";
    if (!std::regex_search(dict, m, shape_re)) throw DataFormatError("npy header lacks 'shape'");
    std::stringstream ss(m[1].str());
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        try {
            h.shape.push_back(static_cast<std::size_t>(std::stoull(item.substr(b))));
        } catch (const std::exception&) {
            throw DataFormatError("npy header has a malformed shape entry '" + item + "'");
        }
    }
    if (h.shape.empty()) h.shape.push_back(1);  // 0-d arrays are read as length-1 vectors
    for (auto e : h.shape) {
        if (e == 0) throw DataFormatError("npy arrays with zero-length extents are not supported");
    }
    return h;
}

Header read_header(const fs::path& path) { return read_raw(path, false).header; }

Tensor load_float(const fs::path& path) {
    Raw raw = read_raw(path, true);
    auto values = decode<float>(raw, path);
    if (raw.header.fortran_order) values = from_fortran(values, raw.header.shape);
    return Tensor(raw.header.shape, std::move(values));
}

IntArray load_int(const fs::path& path) {
    Raw raw = read_raw(path, true);
    IntArray arr;
    arr.shape = raw.header.shape;
    if (raw.header.descr.size() >= 2 && raw.header.descr[1] == 'f') {
        auto values = decode<double>(raw, path);
        arr.data.resize(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] != std::floor(values[i])) {
                throw DataFormatError(path.string() + ": label array holds non-integral values");
            }
            arr.data[i] = static_cast<std::int64_t>(values[i]);
        }
    } else {
        arr.data = decode<std::int64_t>(raw, path);
    }
    if (raw.header.fortran_order) arr.data = from_fortran(arr.data, arr.shape);
    return arr;
}

void save(const fs::path& path, const Tensor& t) {
    auto out = open_out(path);
    write_header(out, "<f4", t.shape());
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

void save(const fs::path& path, const Shape& shape, const std::vector<std::int32_t>& data) {
    if (shape_numel(shape) != data.size()) throw ShapeError("npy::save: data length does not match shape");
    auto out = open_out(path);
    write_header(out, "<i4", shape);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(std::int32_t)));
}

}  // namespace hsic::npy
