#pragma once

#include <limits>
#include <random>

#include "cryoforge/diffcore/tensor.hpp"
#include "cryoforge/spectral/grid.hpp"
#include "cryoforge/util/rotation.hpp"

namespace cryoforge::forward {

using spectral::ComplexImage;
using spectral::FreqGrid2D;
using spectral::RealImage;

/// Microscope and per-particle CTF parameters. Defocus is positive for underfocus.
struct CtfParams {
    double defocus_u{10000.0};         // Å
    double defocus_v{10000.0};         // Å
    double astigmatism_angle{0.0};     // rad
    double voltage_kv{300.0};
    double spherical_aberration_mm{2.7};
    double amplitude_contrast{0.1};

    void validate() const;
    bool operator==(const CtfParams&) const = default;
};

/// Particle orientation and in-plane shift (Å).
struct Pose {
    Mat3 rotation{Mat3::Identity()};
    Vec2 translation{Vec2::Zero()};

    void validate(double tolerance = 1e-6) const;
    bool operator==(const Pose&) const = default;
};

/// Relativistic electron wavelength in Å.
[[nodiscard]] double electron_wavelength(double voltage_kv);

/// C(k) = -sin(pi λ d(θ) |k|² - (pi/2) Cs λ³ |k|⁴ + asin(w)) on the grid.
/// Even in k bit for bit, so multiplying by it keeps Hermitian symmetry.
[[nodiscard]] RealImage ctf_eval(const CtfParams& params, const FreqGrid2D& grid);

/// exp(-2 pi i k·t) on the grid.
[[nodiscard]] ComplexImage translate_phase(const Vec2& shift, const FreqGrid2D& grid);

/// T_t ⊙ C ⊙ S for one image.
[[nodiscard]] ComplexImage synthesize(const ComplexImage& slice, const RealImage& ctf, const Vec2& shift,
                                      const FreqGrid2D& grid);

/// Grid frequencies as a constant [2, P] tensor: row 0 holds k_x, row 1 k_y.
[[nodiscard]] diff::Tensor frequency_matrix(const FreqGrid2D& grid);

/// Batched differentiable synthesis. slice [B, P], ctf [B, P], shifts [B, 2] in Å,
/// frequencies from frequency_matrix. Gradients reach the slice and the shifts.
[[nodiscard]] diff::ComplexPair synthesize(const diff::ComplexPair& slice, const diff::Tensor& ctf,
                                           const diff::Tensor& shifts, const diff::Tensor& frequencies);

/// Sentinel for noise-free simulation.
inline constexpr double kNoiseOff = std::numeric_limits<double>::infinity();

/// Adds white Gaussian noise of variance Var(image) / 10^(snr_db / 10).
[[nodiscard]] RealImage add_noise_snr(const RealImage& image, double snr_db, std::mt19937_64& rng);

} // namespace cryoforge::forward
