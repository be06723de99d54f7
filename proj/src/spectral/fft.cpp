#include "cryoforge/spectral/fft.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include <fftw3.h>

namespace cryoforge::spectral {

namespace {

std::mutex g_plan_mutex;

// Circular shift by side/2 on every axis. For even sides this is its own inverse.
template<typename T, int Rank>
Grid<T, Rank> half_shift(const Grid<T, Rank>& in) {
    Grid<T, Rank> out(in.side);
    const auto n = in.side, h = in.side / 2;
    if constexpr (Rank == 2) {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                out((i + h) % n, (j + h) % n) = in(i, j);
    } else {
        for (std::int64_t z = 0; z < n; ++z)
            for (std::int64_t y = 0; y < n; ++y)
                for (std::int64_t x = 0; x < n; ++x)
                    out((z + h) % n, (y + h) % n, (x + h) % n) = in(z, y, x);
    }
    return out;
}

template<int Rank>
Grid<Complex, Rank> transform(const Grid<Complex, Rank>& input, int sign, const char* what) {
    check<ShapeError>(input.consistent(), "{}: array does not match its side {}", what, input.side);
    require_even_side(input.side, what);
    auto data = half_shift(input);
    auto* buffer = reinterpret_cast<fftw_complex*>(data.values.data());
    int dims[3] = {static_cast<int>(input.side), static_cast<int>(input.side), static_cast<int>(input.side)};
    fftw_plan plan;
    {
        std::lock_guard lock(g_plan_mutex);
        plan = fftw_plan_dft(Rank, dims, buffer, buffer, sign, FFTW_ESTIMATE);
    }
    check<NumericalError>(plan != nullptr, "{}: FFTW could not create a plan", what);
    fftw_execute(plan);
    {
        std::lock_guard lock(g_plan_mutex);
        fftw_destroy_plan(plan);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(data.size()));
    for (auto& v : data.values)
        v *= scale;
    return half_shift(data);
}

template<int Rank>
Grid<Complex, Rank> to_complex(const Grid<double, Rank>& in) {
    Grid<Complex, Rank> out;
    out.side = in.side;
    out.values.assign(in.values.begin(), in.values.end());
    return out;
}

template<int Rank>
Grid<double, Rank> real_of(const Grid<Complex, Rank>& in) {
    Grid<double, Rank> out;
    out.side = in.side;
    out.values.resize(in.values.size());
    std::transform(in.values.begin(), in.values.end(), out.values.begin(), [](Complex c) { return c.real(); });
    return out;
}

template<int Rank>
double leakage(const Grid<Complex, Rank>& in) {
    double re = 0.0, im = 0.0;
    for (auto c : in.values) {
        re = std::max(re, std::abs(c.real()));
        im = std::max(im, std::abs(c.imag()));
    }
    if (im == 0.0)
        return 0.0;
    return re > 0.0 ? im / re : std::numeric_limits<double>::infinity();
}

} // namespace

ComplexImage fft2_centered(const RealImage& image) { return transform<2>(to_complex(image), FFTW_FORWARD, "fft2_centered"); }
ComplexImage fft2_centered(const ComplexImage& image) { return transform<2>(image, FFTW_FORWARD, "fft2_centered"); }
ComplexImage ifft2_centered(const ComplexImage& spectrum) {
    return transform<2>(spectrum, FFTW_BACKWARD, "ifft2_centered");
}

ComplexVolume fft3_centered(const RealVolume& volume) { return transform<3>(to_complex(volume), FFTW_FORWARD, "fft3_centered"); }
ComplexVolume fft3_centered(const ComplexVolume& volume) { return transform<3>(volume, FFTW_FORWARD, "fft3_centered"); }
ComplexVolume ifft3_centered(const ComplexVolume& spectrum) {
    return transform<3>(spectrum, FFTW_BACKWARD, "ifft3_centered");
}

RealImage real_part(const ComplexImage& image) { return real_of(image); }
RealVolume real_part(const ComplexVolume& volume) { return real_of(volume); }

double imaginary_leakage(const ComplexImage& image) { return leakage(image); }
double imaginary_leakage(const ComplexVolume& volume) { return leakage(volume); }

void clear_unpaired_bins(ComplexImage& spectrum) {
    for (std::int64_t t = 0; t < spectrum.side; ++t) {
        spectrum(0, t) = 0.0;
        spectrum(t, 0) = 0.0;
    }
}

void clear_unpaired_bins(ComplexVolume& spectrum) {
    const auto n = spectrum.side;
    for (std::int64_t a = 0; a < n; ++a)
        for (std::int64_t b = 0; b < n; ++b) {
            spectrum(0, a, b) = 0.0;
            spectrum(a, 0, b) = 0.0;
            spectrum(a, b, 0) = 0.0;
        }
}

} // namespace cryoforge::spectral
