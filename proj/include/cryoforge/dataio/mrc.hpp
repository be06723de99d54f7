#pragma once

#include <cstdint>
#include <filesystem>

#include "cryoforge/spectral/grid.hpp"

namespace cryoforge::io {

struct MrcVolume {
    spectral::RealVolume volume;
    double pixel_size{1.0};
};

/// MRC2014, mode 2 (float32), cubic volume with cell = side * pixel_size.
void mrc_write(const spectral::RealVolume& volume, double pixel_size, const std::filesystem::path& path);
/// Reads mode-2 cubic volumes with standard axis order. Throws IoError naming the
/// offending header field otherwise.
[[nodiscard]] MrcVolume mrc_read(const std::filesystem::path& path);

} // namespace cryoforge::io
