#pragma once

#include "cryoforge/spectral/grid.hpp"

/// Centered unitary FFTs. Forward and inverse both scale by 1/sqrt(N) where N is
/// the number of samples, which for an L×L image is 1/L. Only even sides are
/// accepted; the zero-frequency bin lands at index side/2 on every axis.
namespace cryoforge::spectral {

[[nodiscard]] ComplexImage fft2_centered(const RealImage& image);
[[nodiscard]] ComplexImage fft2_centered(const ComplexImage& image);
[[nodiscard]] ComplexImage ifft2_centered(const ComplexImage& spectrum);

[[nodiscard]] ComplexVolume fft3_centered(const RealVolume& volume);
[[nodiscard]] ComplexVolume fft3_centered(const ComplexVolume& volume);
[[nodiscard]] ComplexVolume ifft3_centered(const ComplexVolume& spectrum);

[[nodiscard]] RealImage real_part(const ComplexImage& image);
[[nodiscard]] RealVolume real_part(const ComplexVolume& volume);

/// max |imag| / max |real| over the array (0 for an all-zero array).
[[nodiscard]] double imaginary_leakage(const ComplexImage& image);
[[nodiscard]] double imaginary_leakage(const ComplexVolume& volume);

/// Zeroes every bin with index 0 on some axis. Those bins have no partner at
/// -k on an even grid, so clearing them makes a conjugate-symmetric field
/// exactly Hermitian in the DFT sense.
void clear_unpaired_bins(ComplexImage& spectrum);
void clear_unpaired_bins(ComplexVolume& spectrum);

} // namespace cryoforge::spectral
