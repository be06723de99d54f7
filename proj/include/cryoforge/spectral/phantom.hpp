#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cryoforge/spectral/grid.hpp"
#include "cryoforge/util/rotation.hpp"

namespace cryoforge::spectral {

/// Isotropic 3D Gaussian a * exp(-|r - center|^2 / (2 width^2)), lengths in Å.
struct GaussianBlob {
    double amplitude{1.0};
    Vec3 center{Vec3::Zero()};
    double width{1.0};

    bool operator==(const GaussianBlob&) const = default;
};

/// Sum of Gaussian blobs: an analytic density with closed-form transforms.
struct GaussianPhantom {
    std::vector<GaussianBlob> blobs;

    /// Throws DomainError unless there is at least one blob and every width is positive.
    void validate() const;
    /// Integral of the density over space.
    [[nodiscard]] double mass() const;
    /// Density reflected through the xy plane, V(F r).
    [[nodiscard]] GaussianPhantom z_mirrored() const;

    bool operator==(const GaussianPhantom&) const = default;
};

/// Eight asymmetric blobs inside a sphere of radius 0.25 * box, widths
/// 0.03..0.045 * box, drawn from a fixed seed. `box` is L * pixel_size.
[[nodiscard]] GaussianPhantom default_phantom(double box);

/// Slice points R * (k_x, k_y, 0) for every grid pixel, row-major.
[[nodiscard]] std::vector<Vec3> slice_coords(const Mat3& rotation, const FreqGrid2D& grid);

/// Closed-form continuous 3D Fourier transform of the phantom at each point (Å⁻¹).
[[nodiscard]] std::vector<Complex> phantom_ft(const GaussianPhantom& phantom, std::span<const Vec3> points);

/// Exact line integral along z of V(R r), sampled at pixel positions of `grid`.
[[nodiscard]] RealImage phantom_projection_real(const GaussianPhantom& phantom, const Mat3& rotation,
                                                const FreqGrid2D& grid);

/// Central slice in DFT units: phantom_ft on the slice scaled by 1 / (L * pixel_size²),
/// so that ifft2_centered of it is the sampled projection.
[[nodiscard]] ComplexImage phantom_slice(const GaussianPhantom& phantom, const Mat3& rotation,
                                         const FreqGrid2D& grid);

/// Density sampled directly at voxel centers.
[[nodiscard]] RealVolume phantom_volume_real(const GaussianPhantom& phantom, std::int64_t side, double pixel_size);

/// phantom_ft sampled on a centered cube of side `side` with frequency step 1 / (side * pixel_size).
[[nodiscard]] ComplexVolume phantom_volume_ft(const GaussianPhantom& phantom, std::int64_t side, double pixel_size);

/// Real-space volume from a continuous-unit spectrum cube (unpaired bins dropped).
/// Inverse of volume_to_spectrum for band-limited data.
[[nodiscard]] RealVolume spectrum_to_volume(ComplexVolume spectrum, double pixel_size);

/// Continuous-unit spectrum of a voxel volume, zero-padded by `oversample` before the FFT.
[[nodiscard]] ComplexVolume volume_to_spectrum(const RealVolume& volume, double pixel_size, int oversample = 1);

/// Trilinear interpolation of a centered spectrum cube of side M at the slice
/// points of `grid`. The cube's frequency step is 1 / (M * grid.pixel_size), so
/// an M = 2L cube is the 2x oversampled spectrum of an L-voxel box. Points whose
/// interpolation stencil leaves the cube give 0.
[[nodiscard]] ComplexImage voxel_slice_interp(const ComplexVolume& volume_ft, const Mat3& rotation,
                                              const FreqGrid2D& grid);

} // namespace cryoforge::spectral
