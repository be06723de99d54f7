#pragma once

#include <cstdint>
#include <vector>

#include "cryoforge/diffcore/tensor.hpp"

/// Differentiable op set.
///
/// Broadcasting follows the usual trailing-axis rule: shapes are right-aligned,
/// and an extent of 1 (or a missing leading axis) stretches to match the other
/// operand. Gradients of broadcast operands are summed over the stretched axes.
///
/// matmul contracts the last axis of the left operand with the second-to-last
/// of the right one. Rank-2 x rank-2, rank-3 x rank-3 (batched, equal batch),
/// and mixed rank-2/rank-3 (the rank-2 side is shared across the batch) are
/// accepted.
///
/// conv2d takes NCHW input and OIkk weights, zero-pads by k/2 on each side and
/// applies the given stride, so stride 1 keeps the spatial size.
namespace cryoforge::diff {

// Elementwise binary ops with broadcasting.
[[nodiscard]] Tensor add(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor sub(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor mul(const Tensor& a, const Tensor& b);
[[nodiscard]] Tensor div(const Tensor& a, const Tensor& b);

// Scalar ops.
[[nodiscard]] Tensor add_scalar(const Tensor& a, Real s);
[[nodiscard]] Tensor mul_scalar(const Tensor& a, Real s);
[[nodiscard]] Tensor neg(const Tensor& a);

// Unary maps.
[[nodiscard]] Tensor sin(const Tensor& a);
/// sin(omega * a) in one pass.
[[nodiscard]] Tensor sine(const Tensor& a, Real omega);
[[nodiscard]] Tensor cos(const Tensor& a);
[[nodiscard]] Tensor exp(const Tensor& a);
[[nodiscard]] Tensor relu(const Tensor& a);
[[nodiscard]] Tensor tanh(const Tensor& a);
[[nodiscard]] Tensor sqrt(const Tensor& a);
[[nodiscard]] Tensor square(const Tensor& a);
/// min(a, limit); the gradient is zero where the limit is active.
[[nodiscard]] Tensor clamp_max(const Tensor& a, Real limit);

// Contractions.
[[nodiscard]] Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
[[nodiscard]] Tensor transpose(const Tensor& a);
/// y = x W + b for x [N, in], W [in, out], b [out]. Fused for speed.
[[nodiscard]] Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
[[nodiscard]] Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::int64_t stride = 1);
[[nodiscard]] Tensor max_pool2x2(const Tensor& input);

// Reductions.
[[nodiscard]] Tensor sum(const Tensor& a);
[[nodiscard]] Tensor sum(const Tensor& a, std::int64_t axis, bool keepdim = false);
[[nodiscard]] Tensor mean(const Tensor& a);
[[nodiscard]] Tensor mean(const Tensor& a, std::int64_t axis, bool keepdim = false);
[[nodiscard]] Tensor l2_norm_squared(const Tensor& a);

// Layout.
[[nodiscard]] Tensor reshape(const Tensor& a, Shape shape);
[[nodiscard]] Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
/// Sub-range [start, start + length) along one axis.
[[nodiscard]] Tensor narrow(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length);
/// Rows of a (axis 0) picked by index; repeated indices accumulate in the gradient.
[[nodiscard]] Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& rows);

// Complex helpers over paired tensors.
[[nodiscard]] ComplexPair complex_mul(const ComplexPair& a, const ComplexPair& b);
[[nodiscard]] ComplexPair complex_scale(const ComplexPair& a, const Tensor& real_factor);
[[nodiscard]] ComplexPair conj(const ComplexPair& a);
[[nodiscard]] Tensor abs_squared(const ComplexPair& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, Real s) { return add_scalar(a, s); }
inline Tensor operator+(Real s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, Real s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, Real s) { return mul_scalar(a, s); }
inline Tensor operator*(Real s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, Real s) { return mul_scalar(a, Real{1} / s); }

} // namespace cryoforge::diff
