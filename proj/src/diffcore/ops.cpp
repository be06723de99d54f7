#include "cryoforge/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

namespace cryoforge::diff {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, const char* op) {
    if (axis < 0)
        axis += rank;
    check<ShapeError>(axis >= 0 && axis < rank, "{}: axis out of range for rank {}", op, rank);
    return axis;
}

// ---------------------------------------------------------------- broadcasting

enum class Pattern { Same, BSuffix, ASuffix, BPrefix, APrefix, General };

struct BroadcastPlan {
    Shape out;
    Pattern pattern{Pattern::General};
    std::int64_t block{1}; // suffix: numel of the short operand; prefix: inner run length
    std::vector<std::int64_t> a_strides, b_strides;
};

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size())
        return false;
    const auto offset = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[offset + i])
            return false;
    return true;
}

// small == big[0..k) followed by ones, same rank.
bool is_prefix(const Shape& small, const Shape& big, std::int64_t& inner) {
    if (small.size() != big.size())
        return false;
    std::size_t k = small.size();
    while (k > 0 && small[k - 1] == 1)
        --k;
    for (std::size_t i = 0; i < k; ++i)
        if (small[i] != big[i])
            return false;
    inner = 1;
    for (std::size_t i = k; i < big.size(); ++i)
        inner *= big[i];
    return true;
}

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    const auto rank = std::max(a.size(), b.size());
    plan.out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::int64_t ea = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
        const std::int64_t eb = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
        check<ShapeError>(ea == eb || ea == 1 || eb == 1, "{}: shapes {} and {} do not broadcast", op,
                          to_string(a), to_string(b));
        plan.out[i] = ea == 1 ? eb : ea;
    }
    std::int64_t inner = 1;
    if (a == b) {
        plan.pattern = Pattern::Same;
    } else if (plan.out == a && is_suffix(b, a)) {
        plan.pattern = Pattern::BSuffix;
        plan.block = shape_numel(b);
    } else if (plan.out == b && is_suffix(a, b)) {
        plan.pattern = Pattern::ASuffix;
        plan.block = shape_numel(a);
    } else if (plan.out == a && is_prefix(b, a, inner)) {
        plan.pattern = Pattern::BPrefix;
        plan.block = inner;
    } else if (plan.out == b && is_prefix(a, b, inner)) {
        plan.pattern = Pattern::APrefix;
        plan.block = inner;
    } else {
        plan.pattern = Pattern::General;
        auto strides_for = [&](const Shape& s) {
            std::vector<std::int64_t> strides(rank, 0);
            std::int64_t stride = 1;
            for (std::size_t i = rank; i-- > 0;) {
                const std::int64_t e = i + s.size() >= rank ? s[i + s.size() - rank] : 1;
                strides[i] = e == 1 ? 0 : stride;
                stride *= e;
            }
            return strides;
        };
        plan.a_strides = strides_for(a);
        plan.b_strides = strides_for(b);
    }
    return plan;
}

// f(out_index, a_index, b_index)
template<typename F>
void broadcast_loop(const BroadcastPlan& plan, F&& f) {
    const std::int64_t n = shape_numel(plan.out);
    switch (plan.pattern) {
        case Pattern::Same:
            for (std::int64_t i = 0; i < n; ++i)
                f(i, i, i);
            return;
        case Pattern::BSuffix:
            for (std::int64_t r = 0; r < n; r += plan.block)
                for (std::int64_t j = 0; j < plan.block; ++j)
                    f(r + j, r + j, j);
            return;
        case Pattern::ASuffix:
            for (std::int64_t r = 0; r < n; r += plan.block)
                for (std::int64_t j = 0; j < plan.block; ++j)
                    f(r + j, j, r + j);
            return;
        case Pattern::BPrefix:
            for (std::int64_t r = 0, k = 0; r < n; r += plan.block, ++k)
                for (std::int64_t j = 0; j < plan.block; ++j)
                    f(r + j, r + j, k);
            return;
        case Pattern::APrefix:
            for (std::int64_t r = 0, k = 0; r < n; r += plan.block, ++k)
                for (std::int64_t j = 0; j < plan.block; ++j)
                    f(r + j, k, r + j);
            return;
        case Pattern::General: {
            const auto rank = plan.out.size();
            std::vector<std::int64_t> counter(rank, 0);
            std::int64_t ia = 0, ib = 0;
            for (std::int64_t o = 0; o < n; ++o) {
                f(o, ia, ib);
                for (std::size_t d = rank; d-- > 0;) {
                    ia += plan.a_strides[d];
                    ib += plan.b_strides[d];
                    if (++counter[d] < plan.out[d])
                        break;
                    ia -= plan.a_strides[d] * plan.out[d];
                    ib -= plan.b_strides[d] * plan.out[d];
                    counter[d] = 0;
                }
            }
            return;
        }
    }
}

// forward(x, y) -> value; grad_a(x, y, out) / grad_b(x, y, out) are partial derivatives.
template<typename Fwd, typename Da, typename Db>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
    auto plan = plan_broadcast(op, a.shape(), b.shape());
    std::vector<Real> out(static_cast<std::size_t>(shape_numel(plan.out)));
    const Real* pa = a.data().data();
    const Real* pb = b.data().data();
    broadcast_loop(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { out[o] = fwd(pa[ia], pb[ib]); });
    Shape out_shape = plan.out;
    return detail::make_result(
            op, std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()},
            [plan = std::move(plan), da, db](detail::Node& self) {
                auto& na = *self.parents[0];
                auto& nb = *self.parents[1];
                const Real* g = self.grad.data();
                const Real* pa = na.value.data();
                const Real* pb = nb.value.data();
                const Real* py = self.value.data();
                if (na.requires_grad) {
                    Real* ga = na.ensure_grad().data();
                    broadcast_loop(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                        ga[ia] += g[o] * da(pa[ia], pb[ib], py[o]);
                    });
                }
                if (nb.requires_grad) {
                    Real* gb = nb.ensure_grad().data();
                    broadcast_loop(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                        gb[ib] += g[o] * db(pa[ia], pb[ib], py[o]);
                    });
                }
            });
}

// fwd(x) -> y; dfdx(x, y).
template<typename Fwd, typename D>
Tensor unary_op(const char* op, const Tensor& a, Fwd fwd, D dfdx) {
    const auto src = a.data();
    std::vector<Real> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i)
        out[i] = fwd(src[i]);
    return detail::make_result(op, a.shape(), std::move(out), {a.node_ptr()}, [dfdx](detail::Node& self) {
        auto& na = *self.parents[0];
        auto& ga = na.ensure_grad();
        const auto n = self.value.size();
        for (std::size_t i = 0; i < n; ++i)
            ga[i] += self.grad[i] * dfdx(na.value[i], self.value[i]);
    });
}

using Arr = Eigen::Array<Real, Eigen::Dynamic, 1>;
using MapArr = Eigen::Map<Arr>;
using ConstMapArr = Eigen::Map<const Arr>;

// Vectorized variant: fwd(x) is an array expression, grad(x, y) the local derivative expression.
template<typename Fwd, typename D>
Tensor array_op(const char* op, const Tensor& a, Fwd fwd, D dfdx) {
    const auto src = a.data();
    const auto n = static_cast<Eigen::Index>(src.size());
    std::vector<Real> out(src.size());
    MapArr(out.data(), n) = fwd(ConstMapArr(src.data(), n));
    return detail::make_result(op, a.shape(), std::move(out), {a.node_ptr()}, [dfdx](detail::Node& self) {
        auto& na = *self.parents[0];
        const auto m = static_cast<Eigen::Index>(self.value.size());
        MapArr(na.ensure_grad().data(), m) +=
                ConstMapArr(self.grad.data(), m) *
                dfdx(ConstMapArr(na.value.data(), m), ConstMapArr(self.value.data(), m));
    });
}

// Splits a shape around one axis into (outer, extent, inner).
struct AxisSplit {
    std::int64_t outer{1}, extent{1}, inner{1};
};

AxisSplit split_axis(const Shape& shape, std::int64_t axis) {
    AxisSplit s;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(shape.size()); ++i) {
        if (i < axis)
            s.outer *= shape[i];
        else if (i == axis)
            s.extent = shape[i];
        else
            s.inner *= shape[i];
    }
    return s;
}

} // namespace

// ------------------------------------------------------------------ binary

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b, [](Real x, Real y) { return x + y; },
                     [](Real, Real, Real) { return Real{1}; }, [](Real, Real, Real) { return Real{1}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b, [](Real x, Real y) { return x - y; },
                     [](Real, Real, Real) { return Real{1}; }, [](Real, Real, Real) { return Real{-1}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b, [](Real x, Real y) { return x * y; },
                     [](Real, Real y, Real) { return y; }, [](Real x, Real, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op("div", a, b, [](Real x, Real y) { return x / y; },
                     [](Real, Real y, Real) { return Real{1} / y; },
                     [](Real, Real y, Real out) { return -out / y; });
}

// ------------------------------------------------------------------ scalar / unary

Tensor add_scalar(const Tensor& a, Real s) {
    return unary_op("add_scalar", a, [s](Real x) { return x + s; }, [](Real, Real) { return Real{1}; });
}

Tensor mul_scalar(const Tensor& a, Real s) {
    return array_op("mul_scalar", a, [s](const auto& x) { return x * s; },
                    [s](const auto& x, const auto&) { return Arr::Constant(x.size(), s); });
}

Tensor neg(const Tensor& a) {
    return array_op("neg", a, [](const auto& x) { return -x; },
                    [](const auto& x, const auto&) { return Arr::Constant(x.size(), Real{-1}); });
}

Tensor sin(const Tensor& a) {
    return array_op("sin", a, [](const auto& x) { return x.sin(); }, [](const auto& x, const auto&) { return x.cos(); });
}

Tensor sine(const Tensor& a, Real omega) {
    return array_op("sine", a, [omega](const auto& x) { return (x * omega).sin(); },
                    [omega](const auto& x, const auto&) { return (x * omega).cos() * omega; });
}

Tensor cos(const Tensor& a) {
    return array_op("cos", a, [](const auto& x) { return x.cos(); }, [](const auto& x, const auto&) { return -x.sin(); });
}

Tensor exp(const Tensor& a) {
    return array_op("exp", a, [](const auto& x) { return x.exp(); }, [](const auto&, const auto& y) { return y; });
}

Tensor relu(const Tensor& a) {
    return array_op("relu", a, [](const auto& x) { return x.max(Real{0}); },
                    [](const auto& x, const auto&) { return (x > Real{0}).template cast<Real>(); });
}

Tensor tanh(const Tensor& a) {
    return array_op("tanh", a, [](const auto& x) { return x.tanh(); },
                    [](const auto&, const auto& y) { return Real{1} - y.square(); });
}

Tensor sqrt(const Tensor& a) {
    return unary_op("sqrt", a, [](Real x) { return std::sqrt(x); }, [](Real, Real y) { return Real{0.5} / y; });
}

Tensor square(const Tensor& a) {
    return array_op("square", a, [](const auto& x) { return x.square(); },
                    [](const auto& x, const auto&) { return x * Real{2}; });
}

Tensor clamp_max(const Tensor& a, Real limit) {
    return unary_op("clamp_max", a, [limit](Real x) { return x > limit ? limit : x; },
                    [limit](Real x, Real) { return x > limit ? Real{0} : Real{1}; });
}

// ------------------------------------------------------------------ contractions

Tensor transpose(const Tensor& a) {
    check<ShapeError>(a.dim() >= 2, "transpose: needs rank >= 2, got shape {}", to_string(a.shape()));
    Shape shape = a.shape();
    const auto rows = shape[shape.size() - 2];
    const auto cols = shape[shape.size() - 1];
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    const auto batch = a.numel() / std::max<std::int64_t>(rows * cols, 1);
    const auto src = a.data();
    std::vector<Real> out(src.size());
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < cols; ++j)
                out[b * rows * cols + j * rows + i] = src[b * rows * cols + i * cols + j];
    return detail::make_result("transpose", std::move(shape), std::move(out), {a.node_ptr()},
                               [batch, rows, cols](detail::Node& self) {
                                   auto& ga = self.parents[0]->ensure_grad();
                                   for (std::int64_t b = 0; b < batch; ++b)
                                       for (std::int64_t i = 0; i < rows; ++i)
                                           for (std::int64_t j = 0; j < cols; ++j)
                                               ga[b * rows * cols + i * cols + j] +=
                                                       self.grad[b * rows * cols + j * rows + i];
                               });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto ra = a.dim();
    const auto rb = b.dim();
    check<ShapeError>((ra == 2 || ra == 3) && (rb == 2 || rb == 3), "matmul: unsupported ranks, shapes {} and {}",
                      to_string(a.shape()), to_string(b.shape()));
    const std::int64_t m = a.size(-2), k = a.size(-1);
    const std::int64_t kb = b.size(-2), n = b.size(-1);
    check<ShapeError>(k == kb, "matmul: inner extents differ, shapes {} and {}", to_string(a.shape()),
                      to_string(b.shape()));

    // Rank-3 x rank-2 folds the batch into the rows.
    if (ra == 3 && rb == 2) {
        auto flat = reshape(a, {a.size(0) * m, k});
        return reshape(matmul(flat, b), {a.size(0), m, n});
    }

    std::int64_t batch = 1;
    if (ra == 3 && rb == 3) {
        check<ShapeError>(a.size(0) == b.size(0), "matmul: batch extents differ, shapes {} and {}",
                          to_string(a.shape()), to_string(b.shape()));
        batch = a.size(0);
    } else if (rb == 3) {
        batch = b.size(0);
    }
    const std::int64_t stride_a = ra == 3 ? m * k : 0;
    const std::int64_t stride_b = rb == 3 ? k * n : 0;

    std::vector<Real> out(static_cast<std::size_t>(batch * m * n));
    for (std::int64_t i = 0; i < batch; ++i) {
        ConstMapMat ma(a.data().data() + i * stride_a, m, k);
        ConstMapMat mb(b.data().data() + i * stride_b, k, n);
        MapMat mc(out.data() + i * m * n, m, n);
        mc.noalias() = ma * mb;
    }
    Shape shape = (ra == 2 && rb == 2) ? Shape{m, n} : Shape{batch, m, n};
    return detail::make_result(
            "matmul", std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
            [batch, m, k, n, stride_a, stride_b](detail::Node& self) {
                auto& na = *self.parents[0];
                auto& nb = *self.parents[1];
                for (std::int64_t i = 0; i < batch; ++i) {
                    ConstMapMat g(self.grad.data() + i * m * n, m, n);
                    if (na.requires_grad) {
                        MapMat ga(na.ensure_grad().data() + i * stride_a, m, k);
                        ConstMapMat mb(nb.value.data() + i * stride_b, k, n);
                        ga.noalias() += g * mb.transpose();
                    }
                    if (nb.requires_grad) {
                        MapMat gb(nb.ensure_grad().data() + i * stride_b, k, n);
                        ConstMapMat ma(na.value.data() + i * stride_a, m, k);
                        gb.noalias() += ma.transpose() * g;
                    }
                }
            });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check<ShapeError>(x.dim() == 2 && weight.dim() == 2 && x.size(1) == weight.size(0),
                      "linear: input {} does not match weight {}", to_string(x.shape()), to_string(weight.shape()));
    const std::int64_t rows = x.size(0), in = x.size(1), outw = weight.size(1);
    const bool has_bias = bias.defined();
    if (has_bias)
        check<ShapeError>(bias.numel() == outw, "linear: bias {} does not match weight {}", to_string(bias.shape()),
                          to_string(weight.shape()));
    std::vector<Real> out(static_cast<std::size_t>(rows * outw));
    MapMat y(out.data(), rows, outw);
    y.noalias() = ConstMapMat(x.data().data(), rows, in) * ConstMapMat(weight.data().data(), in, outw);
    if (has_bias)
        y.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.data().data(), outw);
    std::vector<NodePtr> parents{x.node_ptr(), weight.node_ptr()};
    if (has_bias)
        parents.push_back(bias.node_ptr());
    return detail::make_result("linear", {rows, outw}, std::move(out), std::move(parents),
                               [rows, in, outw](detail::Node& self) {
                                   auto& nx = *self.parents[0];
                                   auto& nw = *self.parents[1];
                                   ConstMapMat g(self.grad.data(), rows, outw);
                                   if (nx.requires_grad)
                                       MapMat(nx.ensure_grad().data(), rows, in).noalias() +=
                                               g * ConstMapMat(nw.value.data(), in, outw).transpose();
                                   if (nw.requires_grad)
                                       MapMat(nw.ensure_grad().data(), in, outw).noalias() +=
                                               ConstMapMat(nx.value.data(), rows, in).transpose() * g;
                                   if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                                       Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> gb(
                                               self.parents[2]->ensure_grad().data(), outw);
                                       gb += g.colwise().sum();
                                   }
                               });
}

namespace {

struct ConvGeometry {
    std::int64_t batch, channels, height, width, out_channels, kernel, stride, pad, out_h, out_w;
    [[nodiscard]] std::int64_t patch() const { return channels * kernel * kernel; }
    [[nodiscard]] std::int64_t out_pixels() const { return out_h * out_w; }
};

// cols[(c, ki, kj), (b, oy, ox)]
void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
    const std::int64_t ncols = g.batch * g.out_pixels();
    for (std::int64_t c = 0; c < g.channels; ++c)
        for (std::int64_t ki = 0; ki < g.kernel; ++ki)
            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                Real* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for (std::int64_t b = 0; b < g.batch; ++b) {
                    const Real* plane = x + (b * g.channels + c) * g.height * g.width;
                    Real* dst = row + b * g.out_pixels();
                    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                        const std::int64_t iy = oy * g.stride + ki - g.pad;
                        for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                            const std::int64_t ix = ox * g.stride + kj - g.pad;
                            dst[oy * g.out_w + ox] = (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                                                             ? plane[iy * g.width + ix]
                                                             : Real{0};
                        }
                    }
                }
            }
}

void col2im_add(const ConvGeometry& g, const Real* cols, Real* dx) {
    const std::int64_t ncols = g.batch * g.out_pixels();
    for (std::int64_t c = 0; c < g.channels; ++c)
        for (std::int64_t ki = 0; ki < g.kernel; ++ki)
            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                const Real* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for (std::int64_t b = 0; b < g.batch; ++b) {
                    Real* plane = dx + (b * g.channels + c) * g.height * g.width;
                    const Real* src = row + b * g.out_pixels();
                    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                        const std::int64_t iy = oy * g.stride + ki - g.pad;
                        if (iy < 0 || iy >= g.height)
                            continue;
                        for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                            const std::int64_t ix = ox * g.stride + kj - g.pad;
                            if (ix >= 0 && ix < g.width)
                                plane[iy * g.width + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::int64_t stride) {
    check<ShapeError>(input.dim() == 4 && weight.dim() == 4 && weight.size(1) == input.size(1) &&
                              weight.size(2) == weight.size(3),
                      "conv2d: input {} does not match weight {}", to_string(input.shape()),
                      to_string(weight.shape()));
    check<ShapeError>(stride >= 1, "conv2d: stride must be >= 1, got {}", stride);
    ConvGeometry g{};
    g.batch = input.size(0);
    g.channels = input.size(1);
    g.height = input.size(2);
    g.width = input.size(3);
    g.out_channels = weight.size(0);
    g.kernel = weight.size(2);
    g.stride = stride;
    g.pad = g.kernel / 2;
    g.out_h = (g.height + 2 * g.pad - g.kernel) / stride + 1;
    g.out_w = (g.width + 2 * g.pad - g.kernel) / stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias)
        check<ShapeError>(bias.numel() == g.out_channels, "conv2d: bias {} does not match {} output channels",
                          to_string(bias.shape()), g.out_channels);

    const std::int64_t ncols = g.batch * g.out_pixels();
    std::vector<Real> cols(static_cast<std::size_t>(g.patch() * ncols));
    im2col(g, input.data().data(), cols.data());
    RowMat prod(g.out_channels, ncols);
    prod.noalias() = ConstMapMat(weight.data().data(), g.out_channels, g.patch()) * ConstMapMat(cols.data(), g.patch(), ncols);

    std::vector<Real> out(static_cast<std::size_t>(g.batch * g.out_channels * g.out_pixels()));
    for (std::int64_t b = 0; b < g.batch; ++b)
        for (std::int64_t o = 0; o < g.out_channels; ++o) {
            const Real shift = has_bias ? bias.data()[o] : Real{0};
            const Real* src = prod.data() + o * ncols + b * g.out_pixels();
            Real* dst = out.data() + (b * g.out_channels + o) * g.out_pixels();
            for (std::int64_t p = 0; p < g.out_pixels(); ++p)
                dst[p] = src[p] + shift;
        }

    std::vector<NodePtr> parents{input.node_ptr(), weight.node_ptr()};
    if (has_bias)
        parents.push_back(bias.node_ptr());
    return detail::make_result(
            "conv2d", {g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), std::move(parents),
            [g](detail::Node& self) {
                auto& nx = *self.parents[0];
                auto& nw = *self.parents[1];
                const std::int64_t ncols = g.batch * g.out_pixels();
                RowMat grad(g.out_channels, ncols);
                for (std::int64_t b = 0; b < g.batch; ++b)
                    for (std::int64_t o = 0; o < g.out_channels; ++o)
                        std::copy_n(self.grad.data() + (b * g.out_channels + o) * g.out_pixels(), g.out_pixels(),
                                    grad.data() + o * ncols + b * g.out_pixels());
                if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                    auto& gb = self.parents[2]->ensure_grad();
                    for (std::int64_t o = 0; o < g.out_channels; ++o)
                        gb[o] += grad.row(o).sum();
                }
                if (nw.requires_grad) {
                    std::vector<Real> cols(static_cast<std::size_t>(g.patch() * ncols));
                    im2col(g, nx.value.data(), cols.data());
                    MapMat(nw.ensure_grad().data(), g.out_channels, g.patch()).noalias() +=
                            grad * ConstMapMat(cols.data(), g.patch(), ncols).transpose();
                }
                if (nx.requires_grad) {
                    RowMat dcols(g.patch(), ncols);
                    dcols.noalias() = ConstMapMat(nw.value.data(), g.out_channels, g.patch()).transpose() * grad;
                    col2im_add(g, dcols.data(), nx.ensure_grad().data());
                }
            });
}

Tensor max_pool2x2(const Tensor& input) {
    check<ShapeError>(input.dim() == 4 && input.size(2) >= 2 && input.size(3) >= 2,
                      "max_pool2x2: needs NCHW input with H, W >= 2, got {}", to_string(input.shape()));
    const std::int64_t planes = input.size(0) * input.size(1);
    const std::int64_t h = input.size(2), w = input.size(3);
    const std::int64_t oh = h / 2, ow = w / 2;
    const auto src = input.data();
    std::vector<Real> out(static_cast<std::size_t>(planes * oh * ow));
    std::vector<std::int64_t> argmax(out.size());
    for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < oh; ++i)
            for (std::int64_t j = 0; j < ow; ++j) {
                std::int64_t best = p * h * w + (2 * i) * w + 2 * j;
                for (std::int64_t di = 0; di < 2; ++di)
                    for (std::int64_t dj = 0; dj < 2; ++dj) {
                        const std::int64_t idx = p * h * w + (2 * i + di) * w + (2 * j + dj);
                        if (src[idx] > src[best])
                            best = idx;
                    }
                const auto o = (p * oh + i) * ow + j;
                out[o] = src[best];
                argmax[o] = best;
            }
    return detail::make_result("max_pool2x2", {input.size(0), input.size(1), oh, ow}, std::move(out),
                               {input.node_ptr()}, [argmax = std::move(argmax)](detail::Node& self) {
                                   auto& ga = self.parents[0]->ensure_grad();
                                   for (std::size_t o = 0; o < argmax.size(); ++o)
                                       ga[argmax[o]] += self.grad[o];
                               });
}

// ------------------------------------------------------------------ reductions

Tensor sum(const Tensor& a) {
    const auto src = a.data();
    Real total = 0;
    for (Real v : src)
        total += v;
    return detail::make_result("sum", {}, {total}, {a.node_ptr()}, [](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        const Real g = self.grad[0];
        for (auto& v : ga)
            v += g;
    });
}

Tensor sum(const Tensor& a, std::int64_t axis, bool keepdim) {
    axis = normalize_axis(axis, a.dim(), "sum");
    const auto s = split_axis(a.shape(), axis);
    Shape shape = a.shape();
    if (keepdim)
        shape[axis] = 1;
    else
        shape.erase(shape.begin() + axis);
    const auto src = a.data();
    std::vector<Real> out(static_cast<std::size_t>(s.outer * s.inner), Real{0});
    for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t k = 0; k < s.extent; ++k)
            for (std::int64_t i = 0; i < s.inner; ++i)
                out[o * s.inner + i] += src[(o * s.extent + k) * s.inner + i];
    return detail::make_result("sum_axis", std::move(shape), std::move(out), {a.node_ptr()}, [s](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        for (std::int64_t o = 0; o < s.outer; ++o)
            for (std::int64_t k = 0; k < s.extent; ++k)
                for (std::int64_t i = 0; i < s.inner; ++i)
                    ga[(o * s.extent + k) * s.inner + i] += self.grad[o * s.inner + i];
    });
}

Tensor mean(const Tensor& a) {
    check<ShapeError>(a.numel() > 0, "mean: empty tensor");
    return mul_scalar(sum(a), Real{1} / static_cast<Real>(a.numel()));
}

Tensor mean(const Tensor& a, std::int64_t axis, bool keepdim) {
    const auto extent = a.size(axis);
    check<ShapeError>(extent > 0, "mean: empty axis");
    return mul_scalar(sum(a, axis, keepdim), Real{1} / static_cast<Real>(extent));
}

Tensor l2_norm_squared(const Tensor& a) {
    const auto src = a.data();
    Real total = 0;
    for (Real v : src)
        total += v * v;
    return detail::make_result("l2_norm_squared", {}, {total}, {a.node_ptr()}, [](detail::Node& self) {
        auto& na = *self.parents[0];
        auto& ga = na.ensure_grad();
        const Real g2 = 2 * self.grad[0];
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += g2 * na.value[i];
    });
}

// ------------------------------------------------------------------ layout

Tensor reshape(const Tensor& a, Shape shape) {
    check<ShapeError>(shape_numel(shape) == a.numel(), "reshape: cannot view {} as {}", to_string(a.shape()),
                      to_string(shape));
    std::vector<Real> out(a.data().begin(), a.data().end());
    return detail::make_result("reshape", std::move(shape), std::move(out), {a.node_ptr()}, [](detail::Node& self) {
        auto& ga = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
    check<ShapeError>(!parts.empty(), "concat: no operands");
    const auto& first = parts.front().shape();
    axis = normalize_axis(axis, static_cast<std::int64_t>(first.size()), "concat");
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        Shape expect = first;
        expect[axis] = p.shape().size() == first.size() ? p.shape()[axis] : -1;
        check<ShapeError>(p.shape() == expect, "concat: shape {} does not match {} off axis {}",
                          to_string(p.shape()), to_string(first), axis);
        shape[axis] += p.shape()[axis];
    }
    const auto total = split_axis(shape, axis);
    std::vector<Real> out(static_cast<std::size_t>(shape_numel(shape)));
    std::vector<std::int64_t> offsets;
    std::vector<NodePtr> parents;
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const auto s = split_axis(p.shape(), axis);
        const auto src = p.data();
        for (std::int64_t o = 0; o < s.outer; ++o)
            std::copy_n(src.data() + o * s.extent * s.inner, s.extent * s.inner,
                        out.data() + (o * total.extent + offset) * total.inner);
        offsets.push_back(offset);
        offset += s.extent;
        parents.push_back(p.node_ptr());
    }
    return detail::make_result("concat", std::move(shape), std::move(out), std::move(parents),
                               [total, offsets = std::move(offsets)](detail::Node& self) {
                                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                       auto& np = *self.parents[k];
                                       if (!np.requires_grad)
                                           continue;
                                       auto& gp = np.ensure_grad();
                                       const std::int64_t ext = static_cast<std::int64_t>(gp.size()) /
                                                                (total.outer * total.inner);
                                       for (std::int64_t o = 0; o < total.outer; ++o)
                                           for (std::int64_t e = 0; e < ext * total.inner; ++e)
                                               gp[o * ext * total.inner + e] +=
                                                       self.grad[(o * total.extent + offsets[k]) * total.inner + e];
                                   }
                               });
}

Tensor narrow(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length) {
    axis = normalize_axis(axis, a.dim(), "narrow");
    const auto s = split_axis(a.shape(), axis);
    check<ShapeError>(start >= 0 && length >= 0 && start + length <= s.extent,
                      "narrow: range [{}, {}) exceeds extent {} of shape {}", start, start + length, s.extent,
                      to_string(a.shape()));
    Shape shape = a.shape();
    shape[axis] = length;
    const auto src = a.data();
    std::vector<Real> out(static_cast<std::size_t>(s.outer * length * s.inner));
    for (std::int64_t o = 0; o < s.outer; ++o)
        std::copy_n(src.data() + (o * s.extent + start) * s.inner, length * s.inner,
                    out.data() + o * length * s.inner);
    return detail::make_result("narrow", std::move(shape), std::move(out), {a.node_ptr()},
                               [s, start, length](detail::Node& self) {
                                   auto& ga = self.parents[0]->ensure_grad();
                                   for (std::int64_t o = 0; o < s.outer; ++o)
                                       for (std::int64_t e = 0; e < length * s.inner; ++e)
                                           ga[(o * s.extent + start) * s.inner + e] +=
                                                   self.grad[o * length * s.inner + e];
                               });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& rows) {
    check<ShapeError>(a.dim() >= 1, "gather_rows: needs rank >= 1");
    const std::int64_t nrows = a.size(0);
    const std::int64_t width = nrows > 0 ? a.numel() / nrows : 0;
    Shape shape = a.shape();
    shape[0] = static_cast<std::int64_t>(rows.size());
    const auto src = a.data();
    std::vector<Real> out(static_cast<std::size_t>(shape[0] * width));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        check<ShapeError>(rows[r] >= 0 && rows[r] < nrows, "gather_rows: index {} out of range [0, {})", rows[r],
                          nrows);
        std::copy_n(src.data() + rows[r] * width, width, out.data() + static_cast<std::int64_t>(r) * width);
    }
    return detail::make_result("gather_rows", std::move(shape), std::move(out), {a.node_ptr()},
                               [rows, width](detail::Node& self) {
                                   auto& ga = self.parents[0]->ensure_grad();
                                   for (std::size_t r = 0; r < rows.size(); ++r)
                                       for (std::int64_t e = 0; e < width; ++e)
                                           ga[rows[r] * width + e] += self.grad[static_cast<std::int64_t>(r) * width + e];
                               });
}

// ------------------------------------------------------------------ complex

ComplexPair complex_mul(const ComplexPair& a, const ComplexPair& b) {
    return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

ComplexPair complex_scale(const ComplexPair& a, const Tensor& real_factor) {
    return {mul(a.re, real_factor), mul(a.im, real_factor)};
}

ComplexPair conj(const ComplexPair& a) {
    return {a.re, neg(a.im)};
}

Tensor abs_squared(const ComplexPair& a) {
    return add(square(a.re), square(a.im));
}

} // namespace cryoforge::diff
