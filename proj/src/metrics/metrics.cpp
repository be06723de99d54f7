#include "cryoforge/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/SVD>
#include <fmt/format.h>

#include "cryoforge/spectral/fft.hpp"

namespace cryoforge::metrics {

namespace {

double median_of(std::vector<double> v) {
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1)
        return upper;
    return 0.5 * (upper + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

RotationAlignment procrustes(const std::vector<Mat3>& pred, const std::vector<Mat3>& gt) {
    Mat3 m = Mat3::Zero();
    for (std::size_t i = 0; i < pred.size(); ++i)
        m += pred[i] * gt[i].transpose();
    const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto s = svd.singularValues();
    check<NumericalError>(s(1) > 1e-10 * std::max(s(0), 1e-300), "align_rotations: degenerate covariance (rank < 2)");
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    RotationAlignment out;
    out.gauge = svd.matrixU() * d * svd.matrixV().transpose();
    for (std::size_t i = 0; i < pred.size(); ++i)
        out.errors.push_back((pred[i] - out.gauge * gt[i]).squaredNorm());
    out.median = median_of(out.errors);
    return out;
}

void require_same_length(std::size_t a, std::size_t b, const char* what) {
    check<ShapeError>(a == b && a > 0, "{}: need equal nonempty lists, got {} and {}", what, a, b);
}

} // namespace

FscCurve fsc(const spectral::RealVolume& a, const spectral::RealVolume& b, double pixel_size) {
    check<ShapeError>(a.consistent() && b.consistent() && a.side == b.side,
                      "fsc: volumes of side {} and {} differ", a.side, b.side);
    spectral::require_even_side(a.side, "fsc");
    const auto fa = spectral::fft3_centered(a), fb = spectral::fft3_centered(b);
    const auto n = a.side, c = n / 2, shells = c + 1;
    std::vector<double> cross(static_cast<std::size_t>(shells)), ea(cross.size()), eb(cross.size());
    for (std::int64_t z = 0; z < n; ++z)
        for (std::int64_t y = 0; y < n; ++y)
            for (std::int64_t x = 0; x < n; ++x) {
                const double r = std::sqrt(static_cast<double>((z - c) * (z - c) + (y - c) * (y - c) + (x - c) * (x - c)));
                const auto s = static_cast<std::int64_t>(std::lround(r));
                if (s >= shells)
                    continue;
                const auto u = fa(z, y, x), v = fb(z, y, x);
                cross[static_cast<std::size_t>(s)] += (u * std::conj(v)).real();
                ea[static_cast<std::size_t>(s)] += std::norm(u);
                eb[static_cast<std::size_t>(s)] += std::norm(v);
            }
    FscCurve curve;
    curve.pixel_size = pixel_size;
    curve.side = n;
    for (std::int64_t s = 0; s < shells; ++s) {
        const auto i = static_cast<std::size_t>(s);
        const double denom = std::sqrt(ea[i] * eb[i]);
        curve.shell_freqs.push_back(static_cast<double>(s) / (static_cast<double>(n) * pixel_size));
        curve.zero_energy.push_back(denom == 0.0);
        curve.correlations.push_back(denom == 0.0 ? 0.0 : cross[i] / denom);
    }
    return curve;
}

Resolution resolution_at(const FscCurve& curve, double cutoff) {
    check(!curve.correlations.empty(), "resolution_at: empty curve");
    const double side = static_cast<double>(curve.side);
    Resolution out;
    const auto& c = curve.correlations;
    double crossing = -1.0;
    for (std::size_t s = 0; s < c.size(); ++s) {
        if (c[s] >= cutoff)
            continue;
        if (s == 0) {
            crossing = 0.0;
        } else {
            crossing = static_cast<double>(s - 1) + (c[s - 1] - cutoff) / (c[s - 1] - c[s]);
        }
        break;
    }
    if (crossing < 0.0) {
        out.saturated = true;
        out.pixels = 2.0;
    } else {
        out.pixels = crossing > 0.0 ? std::max(2.0, side / crossing) : std::numeric_limits<double>::infinity();
    }
    out.angstrom = out.pixels * curve.pixel_size;
    return out;
}

RotationAlignment align_rotations(const std::vector<Mat3>& pred, const std::vector<Mat3>& gt) {
    require_same_length(pred.size(), gt.size(), "align_rotations");
    auto same = procrustes(pred, gt);
    std::vector<Mat3> mirrored;
    mirrored.reserve(gt.size());
    for (const auto& r : gt)
        mirrored.push_back(mirror_rotation(r));
    auto flipped = procrustes(pred, mirrored);
    flipped.hand = Hand::Mirrored;
    return flipped.median < same.median ? flipped : same;
}

TranslationError translation_error(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt, double pixel_size) {
    require_same_length(pred.size(), gt.size(), "translation_error");
    check(pixel_size > 0.0, "translation_error: pixel size must be positive");
    TranslationError out;
    for (std::size_t i = 0; i < pred.size(); ++i)
        out.mean_sq_angstrom += (pred[i] - gt[i]).squaredNorm();
    out.mean_sq_angstrom /= static_cast<double>(pred.size());
    out.mean_sq_pixels = out.mean_sq_angstrom / (pixel_size * pixel_size);
    return out;
}

TranslationError translation_error_fitted(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt,
                                          double pixel_size) {
    require_same_length(pred.size(), gt.size(), "translation_error_fitted");
    Vec2 offset = Vec2::Zero();
    for (std::size_t i = 0; i < pred.size(); ++i)
        offset += pred[i] - gt[i];
    offset /= static_cast<double>(pred.size());
    std::vector<Vec2> shifted(gt);
    for (auto& t : shifted)
        t += offset;
    auto out = translation_error(pred, shifted, pixel_size);
    out.offset = offset;
    return out;
}

Mat3 mirror_rotation(double alpha, double beta, double gamma) {
    return euler_zyz(alpha + std::numbers::pi, beta, gamma + std::numbers::pi);
}

Mat3 mirror_rotation(const Mat3& r) {
    const Mat3 f = z_mirror();
    return f * r * f;
}

double mirror_projection_check(const spectral::GaussianPhantom& phantom, const Mat3& r,
                               const spectral::FreqGrid2D& grid) {
    const auto a = spectral::phantom_projection_real(phantom.z_mirrored(), mirror_rotation(r), grid);
    const auto b = spectral::phantom_projection_real(phantom, r, grid);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
    return worst;
}

double mirror_projection_check_voxel(const spectral::GaussianPhantom& phantom, const Mat3& r,
                                     const spectral::FreqGrid2D& grid, int oversample) {
    const auto voxels = spectral::phantom_volume_real(phantom.z_mirrored(), grid.side, grid.pixel_size);
    const auto spectrum = spectral::volume_to_spectrum(voxels, grid.pixel_size, oversample);
    const auto sliced = spectral::voxel_slice_interp(spectrum, mirror_rotation(r), grid);
    const auto points = spectral::slice_coords(r, grid);
    const auto exact = spectral::phantom_ft(phantom, points);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < exact.size(); ++i) {
        num += std::norm(sliced.values[i] - exact[i]);
        den += std::norm(exact[i]);
    }
    return std::sqrt(num / den);
}

Vec3 fit_volume_shift(const spectral::RealVolume& reference, const spectral::RealVolume& moving, double pixel_size) {
    check<ShapeError>(reference.consistent() && moving.consistent() && reference.side == moving.side,
                      "fit_volume_shift: volumes of side {} and {} differ", reference.side, moving.side);
    auto prod = spectral::fft3_centered(moving);
    const auto ref = spectral::fft3_centered(reference);
    for (std::size_t i = 0; i < prod.values.size(); ++i)
        prod.values[i] *= std::conj(ref.values[i]);
    const auto corr = spectral::real_part(spectral::ifft3_centered(prod));
    const auto n = corr.side;
    std::size_t best = 0;
    for (std::size_t i = 1; i < corr.values.size(); ++i)
        if (corr.values[i] > corr.values[best])
            best = i;
    const std::int64_t idx[3] = {static_cast<std::int64_t>(best) % n, (static_cast<std::int64_t>(best) / n) % n,
                                 static_cast<std::int64_t>(best) / (n * n)};
    const auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return corr((z + n) % n, (y + n) % n, (x + n) % n);
    };
    Vec3 d;
    for (int axis = 0; axis < 3; ++axis) {
        std::int64_t lo[3] = {idx[0], idx[1], idx[2]}, hi[3] = {idx[0], idx[1], idx[2]};
        --lo[axis];
        ++hi[axis];
        const double fm = at(lo[0], lo[1], lo[2]), f0 = at(idx[0], idx[1], idx[2]), fp = at(hi[0], hi[1], hi[2]);
        const double curvature = fm - 2.0 * f0 + fp;
        const double frac = curvature < 0.0 ? 0.5 * (fm - fp) / curvature : 0.0;
        d[axis] = (static_cast<double>(idx[axis] - n / 2) + frac) * pixel_size;
    }
    return d;
}

std::string fsc_csv(const FscCurve& curve) {
    std::string out = "shell_index,freq_inv_angstrom,correlation\n";
    for (std::size_t s = 0; s < curve.correlations.size(); ++s)
        out += fmt::format("{},{:.9g},{:.9g}\n", s, curve.shell_freqs[s], curve.correlations[s]);
    return out;
}

} // namespace cryoforge::metrics
