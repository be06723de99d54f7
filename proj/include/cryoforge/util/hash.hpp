#pragma once

#include <cstdint>
#include <string_view>

#include <fmt/format.h>

namespace cryoforge {

/// 64-bit FNV-1a.
[[nodiscard]] constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

[[nodiscard]] inline std::string hex_digest(std::uint64_t h) { return fmt::format("{:016x}", h); }

} // namespace cryoforge
