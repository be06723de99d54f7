#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cryoforge/diffcore/ops.hpp"

namespace gradcheck {

using cryoforge::Real;
using cryoforge::diff::Shape;
using cryoforge::diff::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Real> v(static_cast<std::size_t>(cryoforge::diff::shape_numel(shape)));
    for (auto& x : v)
        x = static_cast<Real>(u(rng));
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Weighted sum of every output entry so each output element influences the check.
inline Tensor probe(const Tensor& out, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    auto w = random_tensor(out.shape(), rng, -1.0, 1.0, false);
    return cryoforge::diff::sum(cryoforge::diff::mul(out, w));
}

/// Largest norm-wise relative error between analytic and central-difference
/// gradients over all inputs.
inline double max_relative_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, double step = 1e-5) {
    for (auto& x : inputs)
        x.zero_grad();
    cryoforge::diff::backward(f(inputs));
    double worst = 0.0;
    for (auto& x : inputs) {
        if (!x.requires_grad())
            continue;
        std::vector<double> analytic(x.grad().begin(), x.grad().end());
        if (analytic.empty())
            analytic.assign(static_cast<std::size_t>(x.numel()), 0.0);
        double diff2 = 0.0, ref2 = 0.0;
        cryoforge::diff::NoGradGuard guard;
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            auto data = x.mutable_data();
            const Real keep = data[static_cast<std::size_t>(i)];
            data[static_cast<std::size_t>(i)] = keep + static_cast<Real>(step);
            const double plus = f(inputs).item();
            data[static_cast<std::size_t>(i)] = keep - static_cast<Real>(step);
            const double minus = f(inputs).item();
            data[static_cast<std::size_t>(i)] = keep;
            const double numeric = (plus - minus) / (2.0 * step);
            diff2 += (numeric - analytic[static_cast<std::size_t>(i)]) * (numeric - analytic[static_cast<std::size_t>(i)]);
            ref2 += numeric * numeric;
        }
        worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-8));
    }
    return worst;
}

} // namespace gradcheck
