#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cryoforge/metrics/metrics.hpp"
#include "cryoforge/spectral/fft.hpp"
#include "test_support.hpp"

using namespace cryoforge;
using namespace cryoforge::metrics;

namespace {

spectral::RealVolume random_volume(std::int64_t side, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    spectral::RealVolume v(side);
    for (auto& x : v.values)
        x = n(rng);
    return v;
}

FscCurve synthetic_curve(std::vector<double> c, std::int64_t side) {
    FscCurve curve;
    curve.side = side;
    curve.pixel_size = 1.5;
    curve.correlations = std::move(c);
    curve.zero_energy.assign(curve.correlations.size(), false);
    for (std::size_t s = 0; s < curve.correlations.size(); ++s)
        curve.shell_freqs.push_back(static_cast<double>(s) / (static_cast<double>(side) * 1.5));
    return curve;
}

spectral::RealVolume shifted_phantom(std::int64_t side, double apix, const Vec3& shift) {
    auto p = spectral::default_phantom(static_cast<double>(side) * apix);
    for (auto& b : p.blobs)
        b.center += shift;
    return spectral::spectrum_to_volume(spectral::phantom_volume_ft(p, side, apix), apix);
}

} // namespace

TEST_CASE("fsc") {
    std::mt19937_64 rng(1);
    const auto v = random_volume(16, rng);
    auto neg = v;
    for (auto& x : neg.values)
        x = -x;
    const auto self = fsc(v, v, 2.0);
    const auto flip = fsc(v, neg, 2.0);
    REQUIRE(self.correlations.size() == 9);
    for (std::size_t s = 0; s < 9; ++s) {
        CHECK(self.correlations[s] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(flip.correlations[s] == doctest::Approx(-1.0).epsilon(1e-12));
    }
    CHECK(self.shell_freqs[8] == doctest::Approx(0.25));

    SUBCASE("independent volumes decorrelate beyond shell 3") {
        std::vector<double> mean_abs(33, 0.0);
        for (int pair = 0; pair < 10; ++pair) {
            const auto a = random_volume(64, rng), b = random_volume(64, rng);
            const auto c = fsc(a, b, 1.0);
            for (std::size_t s = 0; s < c.correlations.size(); ++s)
                mean_abs[s] += std::abs(c.correlations[s]) / 10.0;
        }
        for (std::size_t s = 4; s < mean_abs.size(); ++s)
            CHECK(mean_abs[s] < 0.1);
    }
    SUBCASE("symmetric and scale invariant") {
        const auto a = random_volume(16, rng);
        auto b = a;
        for (std::size_t i = 0; i < b.values.size(); ++i)
            b.values[i] = 3.0 * b.values[i] + 0.5 * v.values[i];
        const auto ab = fsc(a, b, 1.0), ba = fsc(b, a, 1.0);
        auto scaled = a;
        for (auto& x : scaled.values)
            x *= 7.0;
        const auto sb = fsc(scaled, b, 1.0);
        for (std::size_t s = 0; s < ab.correlations.size(); ++s) {
            CHECK(ab.correlations[s] == doctest::Approx(ba.correlations[s]).epsilon(1e-12));
            CHECK(sb.correlations[s] == doctest::Approx(ab.correlations[s]).epsilon(1e-12));
        }
    }
    SUBCASE("zero energy shells are flagged") {
        const auto c = fsc(spectral::RealVolume(8), spectral::RealVolume(8), 1.0);
        CHECK(c.zero_energy[2]);
        CHECK(c.correlations[2] == 0.0);
    }
    CHECK_THROWS_AS((void)fsc(spectral::RealVolume(8), spectral::RealVolume(10), 1.0), ShapeError);
}

TEST_CASE("resolution readout") {
    const auto sat = resolution_at(synthetic_curve({1, 1, 1, 1, 1, 1, 1, 1, 1}, 16), 0.5);
    CHECK(sat.saturated);
    CHECK(sat.pixels == 2.0);
    CHECK(sat.angstrom == 3.0);

    // Crosses 0.5 exactly at s = L/4 = 4.
    const auto quarter = resolution_at(synthetic_curve({1, 0.9, 0.8, 0.7, 0.5, 0.3, 0.1, 0, 0}, 16), 0.5);
    CHECK(!quarter.saturated);
    CHECK(quarter.pixels == doctest::Approx(4.0));

    const auto interp = resolution_at(synthetic_curve({1, 0.9, 0.8, 0.6, 0.4, 0.3, 0.1, 0, 0}, 16), 0.5);
    CHECK(interp.pixels == doctest::Approx(16.0 / 3.5));
    CHECK(resolution_at(synthetic_curve({1, 0.9, 0.8, 0.6, 0.4, 0.3, 0.1, 0, 0}, 16), 0.143).pixels ==
          doctest::Approx(16.0 / (5.0 + 0.157 / 0.2)));

    SUBCASE("lower curves never give finer resolution") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(0.0, 0.2);
        for (int t = 0; t < 200; ++t) {
            std::vector<double> hi{1.0}, lo{1.0};
            for (int s = 1; s < 17; ++s) {
                hi.push_back(std::max(-1.0, hi.back() - u(rng)));
                lo.push_back(std::min(hi.back(), lo.back()) - u(rng) * 0.5);
            }
            CHECK(resolution_at(synthetic_curve(lo, 32), 0.5).pixels >=
                  resolution_at(synthetic_curve(hi, 32), 0.5).pixels - 1e-12);
        }
    }
    SUBCASE("tracks a low-pass cutoff within one shell") {
        const auto gt = shifted_phantom(32, 2.0, Vec3::Zero());
        for (int sc : {4, 6, 8, 11}) {
            auto spec = spectral::fft3_centered(gt);
            for (std::int64_t z = 0; z < 32; ++z)
                for (std::int64_t y = 0; y < 32; ++y)
                    for (std::int64_t x = 0; x < 32; ++x)
                        if (std::lround(std::sqrt(static_cast<double>((z - 16) * (z - 16) + (y - 16) * (y - 16) +
                                                                      (x - 16) * (x - 16)))) > sc)
                            spec(z, y, x) = 0.0;
            const auto low = spectral::real_part(spectral::ifft3_centered(spec));
            const auto r = resolution_at(fsc(gt, low, 2.0), 0.5);
            CHECK(32.0 / r.pixels == doctest::Approx(sc + 0.5).epsilon(1.0 / (sc + 0.5)));
        }
    }
}

TEST_CASE("rotation alignment") {
    std::mt19937_64 rng(5);
    std::vector<Mat3> gt;
    for (int i = 0; i < 50; ++i)
        gt.push_back(support::random_rotation(rng));

    const auto same = align_rotations(gt, gt);
    CHECK(same.hand == Hand::Same);
    CHECK(same.median < 1e-20);
    CHECK(same.gauge.isApprox(Mat3::Identity(), 1e-12));

    const Mat3 g0 = support::random_rotation(rng);
    std::vector<Mat3> pred, mirrored;
    for (const auto& r : gt) {
        pred.push_back(g0 * r);
        mirrored.push_back(g0 * mirror_rotation(r));
    }
    const auto rotated = align_rotations(pred, gt);
    CHECK((rotated.gauge - g0).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(rotated.median < 1e-16);
    CHECK(rotated.hand == Hand::Same);

    const auto flipped = align_rotations(mirrored, gt);
    CHECK(flipped.hand == Hand::Mirrored);
    CHECK(flipped.median < 1e-16);

    SUBCASE("gauge freedom on the ground truth") {
        std::vector<Mat3> noisy, moved;
        const Mat3 h = support::random_rotation(rng);
        for (const auto& r : gt) {
            noisy.push_back(nearest_rotation(r + 0.2 * Mat3::Random()));
            moved.push_back(h * r);
        }
        const auto a = align_rotations(noisy, gt), b = align_rotations(noisy, moved);
        CHECK(a.median == doctest::Approx(b.median).epsilon(1e-9));
        CHECK(a.median > 1e-3);
    }
    CHECK_THROWS_AS((void)align_rotations({}, {}), ShapeError);
    CHECK_THROWS_AS((void)align_rotations({Mat3::Zero()}, {Mat3::Identity()}), NumericalError);
}

TEST_CASE("translation error") {
    const std::vector<Vec2> gt{{0, 0}, {1, 2}, {-3, 0.5}};
    CHECK(translation_error(gt, gt, 2.0).mean_sq_angstrom == 0.0);
    std::vector<Vec2> off;
    for (const auto& t : gt)
        off.push_back(t + Vec2(3, 4));
    const auto e = translation_error(off, gt, 2.0);
    CHECK(e.mean_sq_angstrom == doctest::Approx(25.0));
    CHECK(e.mean_sq_pixels == doctest::Approx(6.25));
    const auto f = translation_error_fitted(off, gt, 2.0);
    CHECK(f.mean_sq_angstrom == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(f.offset.isApprox(Vec2(3, 4)));
    CHECK_THROWS_AS((void)translation_error(gt, off, 0.0), DomainError);
}

TEST_CASE("mirror algebra") {
    const Mat3 f = z_mirror();
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi), tilt(0.0, std::numbers::pi);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double a = ang(rng), b = tilt(rng), g = ang(rng);
        const Mat3 r = euler_zyz(a, b, g);
        const Mat3 m = mirror_rotation(a, b, g);
        worst = std::max(worst, (f * r - m * f).cwiseAbs().maxCoeff());
        CHECK((m - mirror_rotation(r)).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(worst < 1e-12);
    CHECK((mirror_rotation(0.7, 0.0, -1.9) - euler_zyz(0.7, 0.0, -1.9)).cwiseAbs().maxCoeff() < 1e-12);
    const Mat3 about_y = Vec3(-1, 1, -1).asDiagonal();
    CHECK((mirror_rotation(about_y) - about_y).cwiseAbs().maxCoeff() == 0.0);

    SUBCASE("projections agree under the mirror map") {
        const auto grid = spectral::FreqGrid2D::make(32, 2.0);
        spectral::GaussianPhantom three;
        three.blobs = {{1.0, Vec3(6, -2, 9), 3.0}, {0.7, Vec3(-8, 4, -3), 2.5}, {1.3, Vec3(2, 7, 4), 4.0}};
        spectral::GaussianPhantom symmetric;
        symmetric.blobs = {{1.0, Vec3(0, 0, 0), 4.0}, {0.5, Vec3(5, -3, 0), 3.0}};
        for (int i = 0; i < 20; ++i) {
            const Mat3 r = support::random_rotation(rng);
            CHECK(mirror_projection_check(three, r, grid) < 1e-10);
            CHECK(mirror_projection_check(symmetric, r, grid) < 1e-12);
        }
        const auto box = spectral::default_phantom(64.0);
        for (int i = 0; i < 3; ++i)
            CHECK(mirror_projection_check_voxel(box, support::random_rotation(rng), grid) < 5e-2);
    }
}

TEST_CASE("volume shift fit") {
    const auto ref = shifted_phantom(32, 2.0, Vec3::Zero());
    const Vec3 d(3.0, -4.4, 1.1);
    // moved(r + d) = ref(r)
    const auto moved = shifted_phantom(32, 2.0, d);
    const Vec3 fit = fit_volume_shift(ref, moved, 2.0);
    CHECK((fit - d).norm() < 0.3);
    CHECK(fit_volume_shift(ref, ref, 2.0).norm() < 1e-9);
}

TEST_CASE("fsc csv") {
    const auto csv = fsc_csv(synthetic_curve({1, 0.5}, 2));
    CHECK(csv == "shell_index,freq_inv_angstrom,correlation\n0,0,1\n1,0.333333333,0.5\n");
}
