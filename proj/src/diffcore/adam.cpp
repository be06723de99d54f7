#include "cryoforge/diffcore/adam.hpp"

#include <cmath>

namespace cryoforge::diff {

void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.first_moment.empty() && state.step_count == 0) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(static_cast<std::size_t>(p.numel()), Real{0});
            state.second_moment.emplace_back(static_cast<std::size_t>(p.numel()), Real{0});
        }
    }
    check<ShapeError>(state.first_moment.size() == params.size() && state.second_moment.size() == params.size(),
                      "adam_step: state tracks {} parameters, got {}", state.first_moment.size(), params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        check<ShapeError>(static_cast<std::int64_t>(state.first_moment[i].size()) == params[i].numel() &&
                                  static_cast<std::int64_t>(state.second_moment[i].size()) == params[i].numel(),
                          "adam_step: parameter {} has {} elements but its moments have {}", i, params[i].numel(),
                          state.first_moment[i].size());
        check<ShapeError>(params[i].has_grad(), "adam_step: parameter {} (shape {}) has no gradient", i,
                          to_string(params[i].shape()));
    }

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    const auto b1 = static_cast<Real>(state.beta1);
    const auto b2 = static_cast<Real>(state.beta2);
    const auto step = static_cast<Real>(state.learning_rate / correction1);
    const auto root_c2 = static_cast<Real>(std::sqrt(correction2));
    const auto eps = static_cast<Real>(state.epsilon);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].mutable_data();
        const auto grad = params[i].grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const Real g = grad[j];
            m[j] = b1 * m[j] + (1 - b1) * g;
            v[j] = b2 * v[j] + (1 - b2) * g * g;
            values[j] -= step * m[j] / (std::sqrt(v[j]) / root_c2 + eps);
        }
    }
}

} // namespace cryoforge::diff
