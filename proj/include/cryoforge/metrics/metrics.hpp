#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cryoforge/spectral/grid.hpp"
#include "cryoforge/spectral/phantom.hpp"
#include "cryoforge/util/rotation.hpp"

namespace cryoforge::metrics {

/// Correlation per integer-radius shell 0..L/2 (grid units, rounded).
struct FscCurve {
    std::vector<double> shell_freqs;   // Å⁻¹
    std::vector<double> correlations;
    std::vector<bool> zero_energy;     // shell had no energy in either volume; correlation set to 0
    double pixel_size{1.0};
    std::int64_t side{0};
};

[[nodiscard]] FscCurve fsc(const spectral::RealVolume& a, const spectral::RealVolume& b, double pixel_size);

struct Resolution {
    double pixels{0.0};
    double angstrom{0.0};
    bool saturated{false};  // never dropped below the cutoff; reported at Nyquist
};

/// First crossing below `cutoff`, linearly interpolated between shells, as L / s.
/// Clamped at 2 px. A curve already below the cutoff at shell 0 gives infinity.
[[nodiscard]] Resolution resolution_at(const FscCurve& curve, double cutoff);

enum class Hand { Same, Mirrored };

struct RotationAlignment {
    Mat3 gauge{Mat3::Identity()};  // G in pred ≈ G · gt (or G · F gt F when mirrored)
    Hand hand{Hand::Same};
    std::vector<double> errors;    // squared Frobenius norm per image
    double median{0.0};
};

/// Orthogonal Procrustes over SO(3) against gt and against the mirrored gt set;
/// keeps the alignment with the lower median error. Throws NumericalError when
/// the covariance has rank < 2.
[[nodiscard]] RotationAlignment align_rotations(const std::vector<Mat3>& pred, const std::vector<Mat3>& gt);

struct TranslationError {
    double mean_sq_angstrom{0.0};
    double mean_sq_pixels{0.0};
    Vec2 offset{Vec2::Zero()};  // removed mean difference; zero for the raw variant
};

/// Raw mean of |t_pred - t_gt|².
[[nodiscard]] TranslationError translation_error(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt,
                                                 double pixel_size);
/// Same after subtracting the mean difference (labelled "fitted" in reports).
[[nodiscard]] TranslationError translation_error_fitted(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt,
                                                        double pixel_size);

/// R̃ = R_{α+π, β, γ+π}.
[[nodiscard]] Mat3 mirror_rotation(double alpha, double beta, double gamma);
/// R̃ = F R F.
[[nodiscard]] Mat3 mirror_rotation(const Mat3& r);

/// Max abs difference between the analytic projection of the z-mirrored phantom at
/// R̃ and of the phantom at R.
[[nodiscard]] double mirror_projection_check(const spectral::GaussianPhantom& phantom, const Mat3& r,
                                             const spectral::FreqGrid2D& grid);
/// Same comparison through voxelization and trilinear slicing of the mirrored
/// phantom's spectrum; relative L2 error against the analytic slice.
[[nodiscard]] double mirror_projection_check_voxel(const spectral::GaussianPhantom& phantom, const Mat3& r,
                                                   const spectral::FreqGrid2D& grid, int oversample = 3);

/// Translation d (Å) maximizing the cross-correlation of moving(r + d) with reference(r),
/// refined to sub-voxel by a parabola per axis.
[[nodiscard]] Vec3 fit_volume_shift(const spectral::RealVolume& reference, const spectral::RealVolume& moving,
                                    double pixel_size);

/// "shell_index,freq_inv_angstrom,correlation" rows with a header.
[[nodiscard]] std::string fsc_csv(const FscCurve& curve);

} // namespace cryoforge::metrics
