#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <vector>

#include "cryoforge/common.hpp"

namespace cryoforge::spectral {

using Complex = std::complex<double>;

/// Square (Rank = 2) or cubic (Rank = 3) array of side `side`, row-major.
/// Images index as (row, col) = (y, x); volumes as (z, y, x).
template<typename T, int Rank>
struct Grid {
    static_assert(Rank == 2 || Rank == 3);

    std::int64_t side{0};
    std::vector<T> values;

    Grid() = default;
    explicit Grid(std::int64_t n, T fill = T{}) : side(n), values(static_cast<std::size_t>(count(n)), fill) {
        check<ShapeError>(n > 0, "grid side must be positive, got {}", n);
    }

    [[nodiscard]] static constexpr std::int64_t count(std::int64_t n) { return Rank == 2 ? n * n : n * n * n; }
    [[nodiscard]] std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    [[nodiscard]] bool consistent() const { return side > 0 && size() == count(side); }

    T& operator()(std::int64_t i, std::int64_t j) requires(Rank == 2) { return values[static_cast<std::size_t>(i * side + j)]; }
    const T& operator()(std::int64_t i, std::int64_t j) const requires(Rank == 2) {
        return values[static_cast<std::size_t>(i * side + j)];
    }
    T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) requires(Rank == 3) {
        return values[static_cast<std::size_t>((z * side + y) * side + x)];
    }
    const T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) const requires(Rank == 3) {
        return values[static_cast<std::size_t>((z * side + y) * side + x)];
    }

    bool operator==(const Grid&) const = default;
};

using RealImage = Grid<double, 2>;
using ComplexImage = Grid<Complex, 2>;
using RealVolume = Grid<double, 3>;
using ComplexVolume = Grid<Complex, 3>;

/// Centered 2D frequency grid. Index s along an axis maps to (s - L/2) / (L * pixel_size),
/// so the DC bin sits at (L/2, L/2).
struct FreqGrid2D {
    std::int64_t side{0};
    double pixel_size{1.0};
    /// (k_x, k_y) per pixel, row-major, k_x varying along columns.
    std::vector<std::array<double, 2>> coords;

    [[nodiscard]] static FreqGrid2D make(std::int64_t side, double pixel_size);

    [[nodiscard]] double frequency(std::int64_t index) const {
        return static_cast<double>(index - side / 2) / (static_cast<double>(side) * pixel_size);
    }
    /// Real-space coordinate of a pixel index in Å, origin at the DC-aligned pixel.
    [[nodiscard]] double position(std::int64_t index) const {
        return static_cast<double>(index - side / 2) * pixel_size;
    }
    [[nodiscard]] std::int64_t pixels() const { return side * side; }
    [[nodiscard]] double nyquist() const { return 0.5 / pixel_size; }
};

void require_even_side(std::int64_t side, const char* what);

} // namespace cryoforge::spectral
