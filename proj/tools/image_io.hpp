#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "cryoforge/spectral/grid.hpp"

namespace cryoforge::tools {

/// Square grayscale image from an 8/16-bit PNG or a PGM (P2/P5), scaled to [0, 1].
[[nodiscard]] spectral::RealImage read_gray_image(const std::filesystem::path& path);

/// Min-max normalized 8-bit grayscale PNG.
void write_gray_png(const spectral::RealImage& image, const std::filesystem::path& path);

struct Series {
    std::string name;
    std::vector<double> x, y;
    std::array<unsigned char, 3> color{31, 119, 180};
};

struct PlotOptions {
    int width{720};
    int height{420};
    bool log_y{false};
};

/// Line plot without text: light grid at nice ticks, one polyline per series.
/// Non-finite points (and non-positive ones on a log axis) break the line.
void write_line_plot(const std::vector<Series>& series, const std::filesystem::path& path,
                     const PlotOptions& options = {});

} // namespace cryoforge::tools
