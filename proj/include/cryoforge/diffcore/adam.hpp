#pragma once

#include <cstdint>
#include <vector>

#include "cryoforge/diffcore/tensor.hpp"

namespace cryoforge::diff {

/// Moments and hyperparameters of one Adam instance. Moment buffers are created
/// lazily on the first step, one per parameter tensor, in parameter order.
struct AdamState {
    std::int64_t step_count{0};
    std::vector<std::vector<Real>> first_moment;
    std::vector<std::vector<Real>> second_moment;
    double learning_rate{1e-4};
    double beta1{0.9};
    double beta2{0.999};
    double epsilon{1e-8};
};

/// One bias-corrected Adam update of every parameter from its accumulated gradient.
/// Throws if a parameter has no gradient or no longer matches its moment buffers.
void adam_step(std::vector<Tensor>& params, AdamState& state);

} // namespace cryoforge::diff
