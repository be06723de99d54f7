#include <cmath>
#include <numbers>

#include "cryoforge/diffcore/adam.hpp"
#include "cryoforge/diffcore/ops.hpp"
#include "cryoforge/implicitvol/volume.hpp"
#include "cryoforge/spectral/fft.hpp"

namespace cryoforge::implicit {

using diff::Shape;
using diff::Tensor;
using spectral::Complex;

namespace {

constexpr std::int64_t kChunk = 16384;

// Mirror pixel of (i, j) about the DC bin, or -1 when it falls off the grid.
std::int64_t mirror_index(std::int64_t p, std::int64_t side) {
    const auto i = p / side, j = p % side;
    if (i == 0 || j == 0)
        return -1;
    return (side - i) * side + (side - j);
}

} // namespace

SlicePlan SlicePlan::make(const spectral::FreqGrid2D& grid) {
    SlicePlan plan;
    plan.grid = grid;
    const auto n = grid.pixels();
    plan.representative.assign(static_cast<std::size_t>(n), -1);
    plan.conj_sign.assign(static_cast<std::size_t>(n), Real{1});
    std::vector<std::int64_t> evaluated;
    for (std::int64_t p = 0; p < n; ++p) {
        const auto m = mirror_index(p, grid.side);
        if (m >= 0 && m < p) {
            plan.representative[static_cast<std::size_t>(p)] = plan.representative[static_cast<std::size_t>(m)];
            plan.conj_sign[static_cast<std::size_t>(p)] = Real{-1};
            continue;
        }
        plan.representative[static_cast<std::size_t>(p)] = static_cast<std::int64_t>(evaluated.size());
        evaluated.push_back(p);
    }
    const auto u = static_cast<std::int64_t>(evaluated.size());
    std::vector<Real> coords(static_cast<std::size_t>(3 * u), Real{0});
    for (std::int64_t e = 0; e < u; ++e) {
        const auto& k = grid.coords[static_cast<std::size_t>(evaluated[static_cast<std::size_t>(e)])];
        coords[static_cast<std::size_t>(e)] = static_cast<Real>(k[0]);
        coords[static_cast<std::size_t>(u + e)] = static_cast<Real>(k[1]);
    }
    plan.coords = Tensor(Shape{3, u}, std::move(coords));
    return plan;
}

diff::ComplexPair slice_query(const ImplicitVolume& vol, const Tensor& rotations, const SlicePlan& plan) {
    check(vol.config().input_dim == 3, "slice_query needs a 3D volume");
    check<ShapeError>(rotations.dim() == 3 && rotations.size(1) == 3 && rotations.size(2) == 3,
                      "slice_query: rotations {} must be [B, 3, 3]", diff::to_string(rotations.shape()));
    const auto b = rotations.size(0);
    const auto u = plan.evaluated();
    const auto p = plan.grid.pixels();
    const Tensor points = diff::reshape(diff::transpose(diff::matmul(rotations, plan.coords)), {b * u, 3});
    const auto field = vol.evaluate(points);
    std::vector<std::int64_t> rows(static_cast<std::size_t>(b * p));
    std::vector<Real> sign(static_cast<std::size_t>(b * p));
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t q = 0; q < p; ++q) {
            rows[static_cast<std::size_t>(i * p + q)] = i * u + plan.representative[static_cast<std::size_t>(q)];
            sign[static_cast<std::size_t>(i * p + q)] = plan.conj_sign[static_cast<std::size_t>(q)];
        }
    const Tensor re = diff::reshape(diff::gather_rows(field.re, rows), {b, p});
    const Tensor im = diff::reshape(diff::mul(diff::gather_rows(field.im, rows), Tensor(Shape{b * p}, std::move(sign))),
                                    {b, p});
    return {re, im};
}

spectral::ComplexImage slice_query(const ImplicitVolume& vol, const Mat3& rotation, const spectral::FreqGrid2D& grid) {
    require_rotation(rotation, "slice_query");
    diff::NoGradGuard guard;
    std::vector<Real> r(9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            r[static_cast<std::size_t>(3 * i + j)] = static_cast<Real>(rotation(i, j));
    const auto field = slice_query(vol, Tensor(Shape{1, 3, 3}, std::move(r)), SlicePlan::make(grid));
    spectral::ComplexImage out(grid.side);
    for (std::size_t q = 0; q < out.values.size(); ++q)
        out.values[q] = {field.re.at(static_cast<std::int64_t>(q)), field.im.at(static_cast<std::int64_t>(q))};
    return out;
}

spectral::ComplexVolume sample_spectrum(const ImplicitVolume& vol, std::int64_t side, double pixel_size,
                                        const Mat3& transform, const Vec3& shift) {
    check(vol.config().input_dim == 3, "sample_spectrum needs a 3D volume");
    spectral::require_even_side(side, "extract_volume");
    check(pixel_size > 0.0, "extract_volume: pixel size must be positive, got {}", pixel_size);
    diff::NoGradGuard guard;
    const auto total = side * side * side;
    const auto freq = [&](std::int64_t idx) {
        return static_cast<double>(idx - side / 2) / (static_cast<double>(side) * pixel_size);
    };
    spectral::ComplexVolume out(side);
    for (std::int64_t start = 0; start < total; start += kChunk) {
        const auto n = std::min(kChunk, total - start);
        std::vector<Real> pts(static_cast<std::size_t>(3 * n));
        for (std::int64_t e = 0; e < n; ++e) {
            const auto flat = start + e;
            const Vec3 q(freq(flat % side), freq((flat / side) % side), freq(flat / (side * side)));
            const Vec3 k = transform * q;
            for (int d = 0; d < 3; ++d)
                pts[static_cast<std::size_t>(3 * e + d)] = static_cast<Real>(k[d]);
        }
        const auto field = vol.evaluate(Tensor(Shape{n, 3}, std::move(pts)));
        for (std::int64_t e = 0; e < n; ++e) {
            const auto flat = start + e;
            Complex v(field.re.at(e), field.im.at(e));
            if (shift != Vec3::Zero()) {
                const Vec3 q(freq(flat % side), freq((flat / side) % side), freq(flat / (side * side)));
                const double phase = -2.0 * std::numbers::pi * q.dot(shift);
                v *= Complex(std::cos(phase), std::sin(phase));
            }
            out.values[static_cast<std::size_t>(flat)] = v;
        }
    }
    return out;
}

spectral::RealVolume extract_volume(const ImplicitVolume& vol, std::int64_t side, double pixel_size,
                                    const Mat3& transform, const Vec3& shift) {
    auto spectrum = sample_spectrum(vol, side, pixel_size, transform, shift);
    spectral::clear_unpaired_bins(spectrum);
    const auto field = spectral::ifft3_centered(spectrum);
    const double leak = spectral::imaginary_leakage(field);
    check<NumericalError>(leak < 1e-5, "extract_volume: imaginary leakage {:.3g} exceeds 1e-5 of the real part", leak);
    auto volume = spectral::real_part(field);
    const double n = static_cast<double>(side);
    const double scale = 1.0 / (n * std::sqrt(n) * pixel_size * pixel_size * pixel_size);
    for (auto& v : volume.values)
        v *= scale;
    return volume;
}

Fit2dResult fit2d(const spectral::ComplexImage& target, double pixel_size, const VolumeConfig& config,
                  const Fit2dOptions& options) {
    check(config.input_dim == 2, "fit2d needs a 2D representation (input_dim = 2)");
    check<ShapeError>(target.consistent(), "fit2d: malformed target");
    check(options.iterations >= 0, "fit2d: negative iteration count");
    const auto grid = spectral::FreqGrid2D::make(target.side, pixel_size);
    const auto side = target.side;

    double peak = 0.0, asym = 0.0;
    for (auto v : target.values)
        peak = std::max(peak, std::abs(v));
    for (std::int64_t p = 0; p < grid.pixels(); ++p)
        if (const auto m = mirror_index(p, side); m >= 0)
            asym = std::max(asym, std::abs(target.values[static_cast<std::size_t>(p)] -
                                           std::conj(target.values[static_cast<std::size_t>(m)])));
    check(asym <= 1e-8 * std::max(peak, 1e-300), "fit2d: target is not Hermitian (max asymmetry {:.3g})", asym);

    // One evaluation per mirror pair; weights count both members.
    std::vector<std::int64_t> reps;
    std::vector<Real> weights, points, tre, tim;
    std::int64_t paired = 0;
    for (std::int64_t p = 0; p < grid.pixels(); ++p) {
        const auto m = mirror_index(p, side);
        if (m < 0)
            continue;
        ++paired;
        if (m < p)
            continue;
        reps.push_back(p);
        weights.push_back(m == p ? Real{1} : Real{2});
        points.push_back(static_cast<Real>(grid.coords[static_cast<std::size_t>(p)][0]));
        points.push_back(static_cast<Real>(grid.coords[static_cast<std::size_t>(p)][1]));
        tre.push_back(static_cast<Real>(target.values[static_cast<std::size_t>(p)].real()));
        tim.push_back(static_cast<Real>(target.values[static_cast<std::size_t>(p)].imag()));
    }
    const auto u = static_cast<std::int64_t>(reps.size());
    const Tensor pts(Shape{u, 2}, std::move(points));
    const Tensor w(Shape{u}, weights);
    const Tensor target_re(Shape{u}, std::move(tre)), target_im(Shape{u}, std::move(tim));
    const Real norm = Real{1} / static_cast<Real>(paired);

    Fit2dResult result;
    result.model = ImplicitVolume(config, options.seed);
    auto& params = result.model.parameters();
    diff::AdamState adam;
    adam.learning_rate = options.learning_rate;
    const double decay = options.iterations > 1
                                 ? std::pow(options.final_lr_factor, 1.0 / static_cast<double>(options.iterations - 1))
                                 : 1.0;
    auto loss_of = [&](const diff::ComplexPair& f) {
        const auto r = diff::abs_squared(diff::ComplexPair(diff::sub(f.re, target_re), diff::sub(f.im, target_im)));
        return diff::mul_scalar(diff::sum(diff::mul(r, w)), norm);
    };
    for (int it = 0; it < options.iterations; ++it) {
        for (auto& p : params)
            p.zero_grad();
        const Tensor loss = loss_of(result.model.evaluate(pts));
        check<NumericalError>(std::isfinite(loss.item()), "fit2d: non-finite loss at iteration {}", it);
        result.loss_trace.push_back(loss.item());
        diff::backward(loss);
        diff::adam_step(params, adam);
        adam.learning_rate *= decay;
    }

    diff::NoGradGuard guard;
    const auto fitted = result.model.evaluate(pts);
    result.spectrum_mse = loss_of(fitted).item();
    result.fitted_spectrum = spectral::ComplexImage(side);
    for (std::int64_t e = 0; e < u; ++e) {
        const Complex v(fitted.re.at(e), fitted.im.at(e));
        const auto p = reps[static_cast<std::size_t>(e)];
        result.fitted_spectrum.values[static_cast<std::size_t>(p)] = v;
        result.fitted_spectrum.values[static_cast<std::size_t>(mirror_index(p, side))] = std::conj(v);
    }
    auto clean_target = target;
    spectral::clear_unpaired_bins(clean_target);
    result.reconstructed_image = spectral::real_part(spectral::ifft2_centered(result.fitted_spectrum));
    const auto reference = spectral::real_part(spectral::ifft2_centered(clean_target));
    double mse = 0.0;
    for (std::size_t i = 0; i < reference.values.size(); ++i) {
        const double d = result.reconstructed_image.values[i] - reference.values[i];
        mse += d * d;
    }
    result.image_mse = mse / static_cast<double>(reference.values.size());
    return result;
}

} // namespace cryoforge::implicit
