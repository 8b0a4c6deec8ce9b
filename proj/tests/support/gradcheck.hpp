#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "soundstream/tensor.hpp"

namespace soundstream::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // tensor with the largest error and its worst entry
};

// Compares tape gradients of `loss_fn` against central finite differences.
//
// The error of one tensor is ||a - n|| / max(||a||, ||n||) over its probed
// entries; the result reports the largest over all tensors. Entry-wise ratios
// are meaningless in float32 for entries near zero, where the rounding of the
// loss dominates the difference quotient.
// `max_per_param` limits how many (randomly chosen) entries are probed per
// tensor; 0 checks every entry.
GradCheckResult grad_check(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn, float step = 1e-3f,
                           std::size_t max_per_param = 0, std::uint64_t seed = 1);

// Directional form: compares <grad, v> with the central difference of the
// loss along unit directions v spanning all parameters jointly. Direction 0
// is the analytic gradient itself; the others mix it with an independent
// random unit vector, so every probe carries a derivative of order ||grad||
// rather than ||grad|| / sqrt(n). The step is spread over every entry, which
// keeps losses with sharply curved regions (log of a near-zero spectral bin)
// or large float32 sums checkable. Reports the max over directions of
// |a - n| / max(|a|, |n|).
GradCheckResult directional_check(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn,
                                  int directions = 8, float step = 1e-2f, std::uint64_t seed = 1);

Tensor random_tensor(Shape shape, std::mt19937_64& rng, float scale = 1.0f, bool requires_grad = false);

// sum(w * t) with fixed random weights; turns any tensor into a scalar loss
// whose gradient is dense.
Tensor random_projection(const Tensor& t, std::uint64_t seed);

}  // namespace soundstream::testing
