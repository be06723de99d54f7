#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cryoforge/common.hpp"

/// Little-endian scalar I/O for the checkpoint and dataset formats.
namespace cryoforge::binary {

static_assert(std::endian::native == std::endian::little, "only little-endian hosts are supported");

template<typename T>
void write(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template<typename T>
[[nodiscard]] T read(std::istream& in, const char* what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    check<IoError>(static_cast<std::size_t>(in.gcount()) == sizeof(T), "unexpected end of data while reading {}", what);
    return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

[[nodiscard]] inline std::string read_string(std::istream& in, const char* what) {
    const auto n = read<std::uint32_t>(in, what);
    check<IoError>(n < (1u << 24), "implausible string length {} while reading {}", n, what);
    std::string s(n, '\0');
    in.read(s.data(), n);
    check<IoError>(static_cast<std::uint32_t>(in.gcount()) == n, "unexpected end of data while reading {}", what);
    return s;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& values) {
    write<std::uint64_t>(out, values.size());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

[[nodiscard]] inline std::vector<double> read_doubles(std::istream& in, const char* what) {
    const auto n = read<std::uint64_t>(in, what);
    check<IoError>(n < (1ull << 32), "implausible array length {} while reading {}", n, what);
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    check<IoError>(static_cast<std::uint64_t>(in.gcount()) == n * sizeof(double),
                   "unexpected end of data while reading {}", what);
    return values;
}

} // namespace cryoforge::binary
