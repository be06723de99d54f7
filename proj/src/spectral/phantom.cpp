#include "cryoforge/spectral/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "cryoforge/spectral/fft.hpp"

namespace cryoforge::spectral {

namespace {
constexpr double kPi = std::numbers::pi;

void require_finite(const Vec3& k) {
    check(std::isfinite(k.x()) && std::isfinite(k.y()) && std::isfinite(k.z()),
          "phantom_ft: non-finite frequency ({}, {}, {})", k.x(), k.y(), k.z());
}
} // namespace

void require_even_side(std::int64_t side, const char* what) {
    check(side > 0 && side % 2 == 0, "{}: side must be a positive even number, got {}", what, side);
}

FreqGrid2D FreqGrid2D::make(std::int64_t side, double pixel_size) {
    require_even_side(side, "FreqGrid2D");
    check(pixel_size > 0.0 && std::isfinite(pixel_size), "FreqGrid2D: pixel size must be positive, got {}", pixel_size);
    FreqGrid2D grid;
    grid.side = side;
    grid.pixel_size = pixel_size;
    grid.coords.resize(static_cast<std::size_t>(side * side));
    for (std::int64_t i = 0; i < side; ++i)
        for (std::int64_t j = 0; j < side; ++j)
            grid.coords[static_cast<std::size_t>(i * side + j)] = {grid.frequency(j), grid.frequency(i)};
    return grid;
}

void GaussianPhantom::validate() const {
    check(!blobs.empty(), "phantom needs at least one blob");
    for (const auto& b : blobs) {
        check(b.width > 0.0 && std::isfinite(b.width), "phantom blob width must be positive, got {}", b.width);
        check(std::isfinite(b.amplitude) && b.center.allFinite(), "phantom blob has non-finite parameters");
    }
}

double GaussianPhantom::mass() const {
    double m = 0.0;
    for (const auto& b : blobs)
        m += b.amplitude * std::pow(2.0 * kPi * b.width * b.width, 1.5);
    return m;
}

GaussianPhantom GaussianPhantom::z_mirrored() const {
    GaussianPhantom out = *this;
    for (auto& b : out.blobs)
        b.center.z() = -b.center.z();
    return out;
}

GaussianPhantom default_phantom(double box) {
    check(box > 0.0, "default_phantom: box must be positive, got {}", box);
    std::mt19937_64 rng(20220405);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> width(0.03, 0.045);
    std::uniform_real_distribution<double> amplitude(0.5, 1.5);
    GaussianPhantom p;
    while (p.blobs.size() < 8) {
        const Vec3 c(unit(rng), unit(rng), unit(rng));
        if (c.norm() > 1.0)
            continue;
        GaussianBlob b;
        b.center = 0.25 * box * c;
        b.width = width(rng) * box;
        b.amplitude = amplitude(rng);
        p.blobs.push_back(b);
    }
    return p;
}

std::vector<Vec3> slice_coords(const Mat3& rotation, const FreqGrid2D& grid) {
    require_rotation(rotation, "slice_coords");
    std::vector<Vec3> out(grid.coords.size());
    for (std::size_t p = 0; p < out.size(); ++p)
        out[p] = rotation * Vec3(grid.coords[p][0], grid.coords[p][1], 0.0);
    return out;
}

std::vector<Complex> phantom_ft(const GaussianPhantom& phantom, std::span<const Vec3> points) {
    phantom.validate();
    std::vector<Complex> out(points.size());
    for (std::size_t p = 0; p < points.size(); ++p) {
        const Vec3& k = points[p];
        require_finite(k);
        const double k2 = k.squaredNorm();
        Complex acc = 0.0;
        for (const auto& b : phantom.blobs) {
            const double s2 = b.width * b.width;
            const double mag = b.amplitude * std::pow(2.0 * kPi * s2, 1.5) * std::exp(-2.0 * kPi * kPi * s2 * k2);
            const double phase = -2.0 * kPi * k.dot(b.center);
            acc += mag * Complex(std::cos(phase), std::sin(phase));
        }
        out[p] = acc;
    }
    return out;
}

RealImage phantom_projection_real(const GaussianPhantom& phantom, const Mat3& rotation, const FreqGrid2D& grid) {
    phantom.validate();
    require_rotation(rotation, "phantom_projection_real");
    RealImage image(grid.side);
    for (const auto& b : phantom.blobs) {
        const Vec3 nu = rotation.transpose() * b.center;
        const double s2 = b.width * b.width;
        const double peak = b.amplitude * std::sqrt(2.0 * kPi) * b.width;
        for (std::int64_t i = 0; i < grid.side; ++i) {
            const double dy = grid.position(i) - nu.y();
            for (std::int64_t j = 0; j < grid.side; ++j) {
                const double dx = grid.position(j) - nu.x();
                image(i, j) += peak * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
            }
        }
    }
    return image;
}

ComplexImage phantom_slice(const GaussianPhantom& phantom, const Mat3& rotation, const FreqGrid2D& grid) {
    const auto points = slice_coords(rotation, grid);
    auto values = phantom_ft(phantom, points);
    const double scale = 1.0 / (static_cast<double>(grid.side) * grid.pixel_size * grid.pixel_size);
    ComplexImage out;
    out.side = grid.side;
    out.values = std::move(values);
    for (auto& v : out.values)
        v *= scale;
    return out;
}

RealVolume phantom_volume_real(const GaussianPhantom& phantom, std::int64_t side, double pixel_size) {
    phantom.validate();
    require_even_side(side, "phantom_volume_real");
    RealVolume volume(side);
    const auto pos = [&](std::int64_t idx) { return static_cast<double>(idx - side / 2) * pixel_size; };
    for (const auto& b : phantom.blobs) {
        const double inv = 1.0 / (2.0 * b.width * b.width);
        for (std::int64_t z = 0; z < side; ++z)
            for (std::int64_t y = 0; y < side; ++y)
                for (std::int64_t x = 0; x < side; ++x) {
                    const Vec3 r(pos(x), pos(y), pos(z));
                    volume(z, y, x) += b.amplitude * std::exp(-(r - b.center).squaredNorm() * inv);
                }
    }
    return volume;
}

ComplexVolume phantom_volume_ft(const GaussianPhantom& phantom, std::int64_t side, double pixel_size) {
    require_even_side(side, "phantom_volume_ft");
    const auto freq = [&](std::int64_t idx) {
        return static_cast<double>(idx - side / 2) / (static_cast<double>(side) * pixel_size);
    };
    std::vector<Vec3> points;
    points.reserve(static_cast<std::size_t>(side * side * side));
    for (std::int64_t z = 0; z < side; ++z)
        for (std::int64_t y = 0; y < side; ++y)
            for (std::int64_t x = 0; x < side; ++x)
                points.emplace_back(freq(x), freq(y), freq(z));
    ComplexVolume out;
    out.side = side;
    out.values = phantom_ft(phantom, points);
    return out;
}

RealVolume spectrum_to_volume(ComplexVolume spectrum, double pixel_size) {
    check<ShapeError>(spectrum.consistent(), "spectrum_to_volume: array does not match its side {}", spectrum.side);
    clear_unpaired_bins(spectrum);
    auto volume = real_part(ifft3_centered(spectrum));
    const double n = static_cast<double>(spectrum.side);
    const double scale = 1.0 / (n * std::sqrt(n) * pixel_size * pixel_size * pixel_size);
    for (auto& v : volume.values)
        v *= scale;
    return volume;
}

ComplexVolume volume_to_spectrum(const RealVolume& volume, double pixel_size, int oversample) {
    check<ShapeError>(volume.consistent(), "volume_to_spectrum: array does not match its side {}", volume.side);
    check(oversample >= 1, "volume_to_spectrum: oversample must be >= 1, got {}", oversample);
    const auto n = volume.side, m = volume.side * oversample, pad = (m - n) / 2;
    RealVolume padded(m);
    for (std::int64_t z = 0; z < n; ++z)
        for (std::int64_t y = 0; y < n; ++y)
            for (std::int64_t x = 0; x < n; ++x)
                padded(z + pad, y + pad, x + pad) = volume(z, y, x);
    auto spectrum = fft3_centered(padded);
    const double md = static_cast<double>(m);
    const double scale = md * std::sqrt(md) * pixel_size * pixel_size * pixel_size;
    for (auto& v : spectrum.values)
        v *= scale;
    return spectrum;
}

ComplexImage voxel_slice_interp(const ComplexVolume& volume_ft, const Mat3& rotation, const FreqGrid2D& grid) {
    check<ShapeError>(volume_ft.consistent(), "voxel_slice_interp: spectrum is not a cube of side {} ({} values)",
                      volume_ft.side, volume_ft.values.size());
    require_even_side(volume_ft.side, "voxel_slice_interp");
    const auto points = slice_coords(rotation, grid);
    const auto m = volume_ft.side;
    const double to_index = static_cast<double>(m) * grid.pixel_size;
    const double centre = static_cast<double>(m / 2);
    ComplexImage out(grid.side);
    for (std::size_t p = 0; p < points.size(); ++p) {
        const Vec3 u = points[p] * to_index + Vec3::Constant(centre);
        const double fx = std::floor(u.x()), fy = std::floor(u.y()), fz = std::floor(u.z());
        const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy),
                   z0 = static_cast<std::int64_t>(fz);
        const double tx = u.x() - fx, ty = u.y() - fy, tz = u.z() - fz;
        // On-grid coordinates need no upper neighbour, so the last plane stays reachable.
        const auto x1 = tx > 0.0 ? x0 + 1 : x0, y1 = ty > 0.0 ? y0 + 1 : y0, z1 = tz > 0.0 ? z0 + 1 : z0;
        if (x0 < 0 || y0 < 0 || z0 < 0 || x1 >= m || y1 >= m || z1 >= m)
            continue;
        const auto& v = volume_ft;
        const Complex c00 = v(z0, y0, x0) * (1 - tx) + v(z0, y0, x1) * tx;
        const Complex c01 = v(z0, y1, x0) * (1 - tx) + v(z0, y1, x1) * tx;
        const Complex c10 = v(z1, y0, x0) * (1 - tx) + v(z1, y0, x1) * tx;
        const Complex c11 = v(z1, y1, x0) * (1 - tx) + v(z1, y1, x1) * tx;
        out.values[p] = (c00 * (1 - ty) + c01 * ty) * (1 - tz) + (c10 * (1 - ty) + c11 * ty) * tz;
    }
    return out;
}

} // namespace cryoforge::spectral
