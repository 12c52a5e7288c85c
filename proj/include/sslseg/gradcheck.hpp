#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sslseg/tensor.hpp"

namespace sslseg {

// A differentiable computation under test: builds its output on the given
// tape from the given inputs. The function must be pure in the inputs (any
// internal state must be rebuilt per call), because it is re-evaluated many
// times with perturbed values.
using GradCheckFn =
    std::function<TensorPtr(Tape&, const std::vector<TensorPtr>&)>;

// Central-difference gradient verification. The output is reduced to a
// scalar through a fixed random positive weighting so every output element
// participates; the analytic gradient of that scalar is then compared
// against (f(x+eps) - f(x-eps)) / (2 eps) one input element at a time.
// Returns the maximum relative error max(|ga - gn| / max(1, |gn|)).
// Inputs are marked as gradient-carrying and their values are restored on
// return. Intended for small problems (up to ~1e4 input scalars).
double check_gradients(const GradCheckFn& fn,
                       const std::vector<TensorPtr>& inputs,
                       double eps = 1e-5, std::uint64_t seed = 0x9c0ffee);

}  // namespace sslseg
