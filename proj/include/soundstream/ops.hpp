#pragma once

#include <vector>

#include "soundstream/tensor.hpp"

// Differentiable operations used by the codec. Each op records a backward
// node on the active tape when any input requires a gradient; otherwise it
// runs as plain inference.
namespace soundstream::ops {

enum class ConvPadding {
  // Only past samples are padded. For stride s the last tap of output u lands
  // on input u*s + s - 1, so an output never sees beyond its own stride window.
  Causal,
  // Symmetric "same" padding, floor((K-1)*dilation/2) on the left.
  Centered,
};

struct Conv1dOptions {
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  ConvPadding padding = ConvPadding::Causal;
};

// x: [C_in x T], weight: [C_out x C_in/groups x K], bias: [C_out] or undefined.
// Output: [C_out x ceil(T / stride)].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv1dOptions& opts = {});

// x: [C_in x S], weight: [C_in x C_out x K]. The future-dependent tail of the
// full transposed convolution is trimmed, so the output is [C_out x S*stride]
// and output v depends only on inputs <= floor(v / stride).
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride);

enum class Padding2d { Same, Valid };

struct Conv2dOptions {
  int stride_f = 1;
  int stride_t = 1;
  Padding2d padding = Padding2d::Same;
};

// x: [C x F x T], weight: [C_out x C x KF x KT]. Same padding splits the
// total pad with the extra sample on the trailing side; output is
// ceil(F/stride_f) x ceil(T/stride_t).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opts = {});

Tensor elu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

// Scalar reductions accumulate in double.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor transpose(const Tensor& a);  // 2-D only
Tensor reshape(const Tensor& a, Shape shape);

// Average pooling over time of a [C x T] signal; padded positions are not
// counted in the average.
Tensor avg_pool1d(const Tensor& x, int width, int stride, int padding);

// Forward value is `quantized`; the gradient flows to `y` unchanged.
Tensor straight_through(const Tensor& y, const Tensor& quantized);

// Feature-wise linear modulation of activations [C x S]. cond is a one-hot
// [2 x S] (or [2 x 1], broadcast over time); weight [2C x 2] and bias [2C]
// produce gamma (rows 0..C-1) and beta (rows C..2C-1).
Tensor film(const Tensor& activations, const Tensor& cond, const Tensor& weight, const Tensor& bias);

// mean(max(0, 1 - sign * x)), sign in {+1, -1}.
Tensor hinge_mean(const Tensor& x, float sign);
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);
Tensor sum_abs_diff(const Tensor& a, const Tensor& b);
// a, b: [bins x frames]; returns sum over frames of the L2 norm of a - b.
Tensor sum_frame_l2_diff(const Tensor& a, const Tensor& b);
Tensor log_eps(const Tensor& x, float eps);

// Fixed (non-learned) matrix product: a [M x K] constant, x [K x N].
Tensor matmul_const(const std::vector<float>& a, std::int64_t rows, const Tensor& x);

}  // namespace soundstream::ops
