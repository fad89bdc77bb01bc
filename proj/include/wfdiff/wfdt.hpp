#pragma once

// WFDT tensor files:
//   "WFDT" | u32 version (1) | u8 dtype | u32 ndim | ndim x u64 extents | payload
// All integers and the row-major payload are little-endian. dtype 0 is f32;
// dtype 1 (f64) is accepted as an extension for double-precision tensors.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>

#include "wfdiff/tensor.hpp"

namespace wfdiff {

inline constexpr char kWfdtMagic[4] = {'W', 'F', 'D', 'T'};
inline constexpr std::uint32_t kWfdtVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

namespace detail {

template <class U>
void put_le(std::ostream& os, U value) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(std::istream& is, const char* what) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
        throw FormatError(std::string("WFDT: truncated while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    U value;
    std::memcpy(&value, buf, sizeof(U));
    return value;
}

}  // namespace detail

template <class T>
void write_wfdt(std::ostream& os, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    os.write(kWfdtMagic, 4);
    detail::put_le<std::uint32_t>(os, kWfdtVersion);
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(std::is_same_v<T, float> ? DType::f32 : DType::f64));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto e : t.shape()) detail::put_le<std::uint64_t>(os, e);
    for (const auto v : t.data()) detail::put_le<T>(os, v);
    if (!os) throw FormatError("WFDT: write failed");
}

/// Reads one tensor, converting the stored dtype to T. Non-finite values are
/// rejected.
template <class T = float>
Tensor<T> read_wfdt(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kWfdtMagic, 4) != 0) throw FormatError("WFDT: bad magic");
    const auto version = detail::get_le<std::uint32_t>(is, "version");
    if (version != kWfdtVersion) throw FormatError("WFDT: unsupported version " + std::to_string(version));
    const auto dtype = detail::get_le<std::uint8_t>(is, "dtype");
    if (dtype > 1) throw FormatError("WFDT: unsupported dtype code " + std::to_string(dtype));
    const auto ndim = detail::get_le<std::uint32_t>(is, "ndim");
    if (ndim == 0 || ndim > 16) throw FormatError("WFDT: implausible ndim " + std::to_string(ndim));
    Shape shape(ndim);
    std::size_t n = 1;
    for (auto& e : shape) {
        e = detail::get_le<std::uint64_t>(is, "extents");
        if (e == 0 || e > (std::uint64_t{1} << 32)) throw FormatError("WFDT: invalid extent");
        n *= e;
        if (n > (std::size_t{1} << 34)) throw FormatError("WFDT: tensor too large");
    }
    std::vector<T> data(n);
    for (auto& v : data) {
        v = dtype == 0 ? static_cast<T>(detail::get_le<float>(is, "payload"))
                       : static_cast<T>(detail::get_le<double>(is, "payload"));
    }
    return Tensor<T>::from_external(std::move(shape), std::move(data));
}

template <class T>
void save_wfdt(const Tensor<T>& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_wfdt(os, t);
}

template <class T = float>
Tensor<T> load_wfdt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read_wfdt<T>(is);
}

template <class T>
std::string wfdt_bytes(const Tensor<T>& t) {
    std::ostringstream os(std::ios::binary);
    write_wfdt(os, t);
    return os.str();
}

}  // namespace wfdiff
