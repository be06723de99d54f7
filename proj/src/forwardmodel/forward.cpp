#include "cryoforge/forwardmodel/forward.hpp"

#include <cmath>
#include <numbers>

#include "cryoforge/diffcore/ops.hpp"

namespace cryoforge::forward {

namespace {
constexpr double kPi = std::numbers::pi;
}

void CtfParams::validate() const {
    check(defocus_u > 0.0 && defocus_v > 0.0, "ctf: defocus values must be positive, got {} and {}", defocus_u,
          defocus_v);
    check(amplitude_contrast >= 0.0 && amplitude_contrast < 1.0, "ctf: amplitude contrast must lie in [0, 1), got {}",
          amplitude_contrast);
    check(voltage_kv > 0.0, "ctf: voltage must be positive, got {} kV", voltage_kv);
    check(spherical_aberration_mm >= 0.0, "ctf: spherical aberration must be non-negative, got {} mm",
          spherical_aberration_mm);
    check(std::isfinite(astigmatism_angle), "ctf: astigmatism angle must be finite");
}

void Pose::validate(double tolerance) const {
    require_rotation(rotation, "pose", tolerance);
    check(translation.allFinite(), "pose: translation must be finite");
}

double electron_wavelength(double voltage_kv) {
    check(voltage_kv > 0.0, "electron_wavelength: voltage must be positive, got {} kV", voltage_kv);
    const double v = voltage_kv * 1e3;
    return 12.2643247 / std::sqrt(v * (1.0 + 0.978466e-6 * v));
}

RealImage ctf_eval(const CtfParams& params, const FreqGrid2D& grid) {
    params.validate();
    const double lambda = electron_wavelength(params.voltage_kv);
    const double cs = params.spherical_aberration_mm * 1e7;
    const double mean_defocus = 0.5 * (params.defocus_u + params.defocus_v);
    const double half_diff = 0.5 * (params.defocus_u - params.defocus_v);
    const double c2a = std::cos(2.0 * params.astigmatism_angle), s2a = std::sin(2.0 * params.astigmatism_angle);
    const double offset = std::asin(params.amplitude_contrast);
    RealImage out(grid.side);
    for (std::size_t p = 0; p < grid.coords.size(); ++p) {
        const double kx = grid.coords[p][0], ky = grid.coords[p][1];
        const double k2 = kx * kx + ky * ky;
        // cos 2(θ - α) from the components directly, so C(-k) = C(k) exactly.
        const double cos2 = k2 > 0.0 ? ((kx * kx - ky * ky) * c2a + 2.0 * kx * ky * s2a) / k2 : 0.0;
        const double defocus = mean_defocus + half_diff * cos2;
        const double chi = kPi * lambda * defocus * k2 - 0.5 * kPi * cs * lambda * lambda * lambda * k2 * k2;
        out.values[p] = -std::sin(chi + offset);
    }
    return out;
}

ComplexImage translate_phase(const Vec2& shift, const FreqGrid2D& grid) {
    check(shift.allFinite(), "translate_phase: shift must be finite");
    ComplexImage out(grid.side);
    for (std::size_t p = 0; p < grid.coords.size(); ++p) {
        const double phase = -2.0 * kPi * (grid.coords[p][0] * shift.x() + grid.coords[p][1] * shift.y());
        out.values[p] = {std::cos(phase), std::sin(phase)};
    }
    return out;
}

ComplexImage synthesize(const ComplexImage& slice, const RealImage& ctf, const Vec2& shift, const FreqGrid2D& grid) {
    check<ShapeError>(slice.side == grid.side && ctf.side == grid.side && slice.consistent() && ctf.consistent(),
                      "synthesize: slice side {} and ctf side {} must match grid side {}", slice.side, ctf.side,
                      grid.side);
    const auto phase = translate_phase(shift, grid);
    ComplexImage out(grid.side);
    for (std::size_t p = 0; p < out.values.size(); ++p)
        out.values[p] = phase.values[p] * (ctf.values[p] * slice.values[p]);
    return out;
}

diff::Tensor frequency_matrix(const FreqGrid2D& grid) {
    const auto n = static_cast<std::int64_t>(grid.coords.size());
    std::vector<Real> values(static_cast<std::size_t>(2 * n));
    for (std::int64_t p = 0; p < n; ++p) {
        values[static_cast<std::size_t>(p)] = static_cast<Real>(grid.coords[static_cast<std::size_t>(p)][0]);
        values[static_cast<std::size_t>(n + p)] = static_cast<Real>(grid.coords[static_cast<std::size_t>(p)][1]);
    }
    return diff::Tensor({2, n}, std::move(values));
}

diff::ComplexPair synthesize(const diff::ComplexPair& slice, const diff::Tensor& ctf, const diff::Tensor& shifts,
                             const diff::Tensor& frequencies) {
    using namespace diff;
    check<ShapeError>(slice.shape().size() == 2 && ctf.shape() == slice.shape(),
                      "synthesize: slice {} and ctf {} must both be [B, P]", to_string(slice.shape()),
                      to_string(ctf.shape()));
    check<ShapeError>(shifts.shape() == Shape{slice.shape()[0], 2},
                      "synthesize: shifts {} must be [B, 2] for slice {}", to_string(shifts.shape()),
                      to_string(slice.shape()));
    check<ShapeError>(frequencies.shape() == Shape{2, slice.shape()[1]},
                      "synthesize: frequencies {} must be [2, P] for slice {}", to_string(frequencies.shape()),
                      to_string(slice.shape()));
    const Tensor phase = mul_scalar(matmul(shifts, frequencies), static_cast<Real>(2.0 * kPi));
    const Tensor c = cos(phase), s = sin(phase);
    const Tensor re = mul(ctf, add(mul(slice.re, c), mul(slice.im, s)));
    const Tensor im = mul(ctf, sub(mul(slice.im, c), mul(slice.re, s)));
    return {re, im};
}

RealImage add_noise_snr(const RealImage& image, double snr_db, std::mt19937_64& rng) {
    check<ShapeError>(image.consistent(), "add_noise_snr: malformed image");
    check(!std::isnan(snr_db) && snr_db != -std::numeric_limits<double>::infinity(),
          "add_noise_snr: snr must be a number or +inf");
    if (std::isinf(snr_db))
        return image;
    double mean = 0.0;
    for (auto v : image.values)
        mean += v;
    mean /= static_cast<double>(image.values.size());
    double var = 0.0;
    for (auto v : image.values)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(image.values.size());
    check(var > 0.0, "add_noise_snr: image has zero variance, SNR is undefined");
    std::normal_distribution<double> noise(0.0, std::sqrt(var / std::pow(10.0, snr_db / 10.0)));
    RealImage out = image;
    for (auto& v : out.values)
        v += noise(rng);
    return out;
}

} // namespace cryoforge::forward
