#pragma once

// Inference kernels shared by the offline ops and the streaming runtime.
//
// Both paths must produce bit-identical outputs for the same receptive field,
// so each output element is accumulated in a fixed order (bias, then input
// channel, then tap) independent of the sequence length or tiling.

#include <cstdint>

#include "soundstream/ops.hpp"

namespace soundstream::detail {

int conv_pad_left(int kernel, int dilation, int stride, ops::ConvPadding padding);

// out[co, u] = bias[co] + sum_{ci in group(co), k} w[co, ci, k] * xp[ci, u*stride + k*dilation]
// xp holds `cin` rows of `xp_len` samples with all padding already applied.
void conv1d_valid(const float* xp, std::int64_t xp_len, int cin, const float* weight, const float* bias, int cout,
                  int kernel, int stride, int dilation, int groups, float* out, std::int64_t out_len);

// Number of past input frames a causal transposed convolution needs.
int conv_transpose_history(int kernel, int stride);

// Causal transposed convolution over `frames` input columns preceded by
// conv_transpose_history(kernel, stride) history columns in xh.
// weight: [cin x cout x kernel]; out: [cout x frames*stride].
void conv_transpose1d_valid(const float* xh, std::int64_t frames, int cin, const float* weight, const float* bias,
                            int cout, int kernel, int stride, float* out);

float elu_scalar(float x);

}  // namespace soundstream::detail
