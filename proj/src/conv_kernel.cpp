#include "conv_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace soundstream::detail {

namespace {

constexpr int kChannelBlock = 4;
constexpr std::int64_t kTile = 256;

// Accumulates a block of up to kChannelBlock output rows over one tile.
// `rows[ci * kernel + k]` points at the first input sample used by tap k of
// input channel ci for output t0.
void accumulate_tile(const float* const* rows, int cin, int kernel, const float* weight, std::int64_t w_row_stride,
                     const float* bias, int nblock, std::int64_t n, float (*acc)[kTile]) {
  for (int b = 0; b < nblock; ++b) {
    const float init = bias != nullptr ? bias[b] : 0.0f;
    for (std::int64_t t = 0; t < n; ++t) acc[b][t] = init;
  }
  for (int ci = 0; ci < cin; ++ci) {
    for (int k = 0; k < kernel; ++k) {
      const float* src = rows[ci * kernel + k];
      const std::int64_t widx = static_cast<std::int64_t>(ci) * kernel + k;
      if (nblock == kChannelBlock) {
        const float w0 = weight[0 * w_row_stride + widx];
        const float w1 = weight[1 * w_row_stride + widx];
        const float w2 = weight[2 * w_row_stride + widx];
        const float w3 = weight[3 * w_row_stride + widx];
        float* a0 = acc[0];
        float* a1 = acc[1];
        float* a2 = acc[2];
        float* a3 = acc[3];
        for (std::int64_t t = 0; t < n; ++t) {
          const float v = src[t];
          a0[t] += w0 * v;
          a1[t] += w1 * v;
          a2[t] += w2 * v;
          a3[t] += w3 * v;
        }
      } else {
        for (int b = 0; b < nblock; ++b) {
          const float wv = weight[b * w_row_stride + widx];
          float* a = acc[b];
          for (std::int64_t t = 0; t < n; ++t) a[t] += wv * src[t];
        }
      }
    }
  }
}

}  // namespace

int conv_pad_left(int kernel, int dilation, int stride, ops::ConvPadding padding) {
  const int span = (kernel - 1) * dilation;
  return padding == ops::ConvPadding::Causal ? span - (stride - 1) : span / 2;
}

void conv1d_valid(const float* xp, std::int64_t xp_len, int cin, const float* weight, const float* bias, int cout,
                  int kernel, int stride, int dilation, int groups, float* out, std::int64_t out_len) {
  if (out_len <= 0) return;
  const std::int64_t needed = (out_len - 1) * stride + static_cast<std::int64_t>(kernel - 1) * dilation + 1;
  if (xp_len < needed) throw std::logic_error("conv1d_valid: padded input too short");

  // Strided access is made contiguous by splitting the input into phases.
  const float* base = xp;
  std::int64_t phase_len = xp_len;
  std::vector<float> phases;
  if (stride > 1) {
    phase_len = (xp_len + stride - 1) / stride;
    phases.assign(static_cast<std::size_t>(cin) * stride * phase_len, 0.0f);
    for (int ci = 0; ci < cin; ++ci) {
      const float* row = xp + static_cast<std::int64_t>(ci) * xp_len;
      float* dst = phases.data() + static_cast<std::int64_t>(ci) * stride * phase_len;
      for (std::int64_t j = 0; j < xp_len; ++j) dst[(j % stride) * phase_len + j / stride] = row[j];
    }
    base = phases.data();
  }
  auto tap_ptr = [&](int ci, int k, std::int64_t t0) -> const float* {
    const std::int64_t off = static_cast<std::int64_t>(k) * dilation;
    if (stride == 1) return base + static_cast<std::int64_t>(ci) * xp_len + off + t0;
    const std::int64_t phase = off % stride;
    return base + (static_cast<std::int64_t>(ci) * stride + phase) * phase_len + off / stride + t0;
  };

  const int cin_g = cin / groups;
  const int cout_g = cout / groups;
  const std::int64_t w_row_stride = static_cast<std::int64_t>(cin_g) * kernel;
  std::vector<const float*> rows(static_cast<std::size_t>(cin_g) * kernel);
  alignas(64) float acc[kChannelBlock][kTile];

  for (int g = 0; g < groups; ++g) {
    for (int cb = 0; cb < cout_g; cb += kChannelBlock) {
      const int nblock = std::min(kChannelBlock, cout_g - cb);
      const int co0 = g * cout_g + cb;
      const float* wblk = weight + static_cast<std::int64_t>(co0) * w_row_stride;
      const float* bblk = bias != nullptr ? bias + co0 : nullptr;
      for (std::int64_t t0 = 0; t0 < out_len; t0 += kTile) {
        const std::int64_t n = std::min(kTile, out_len - t0);
        for (int ci = 0; ci < cin_g; ++ci) {
          for (int k = 0; k < kernel; ++k) rows[static_cast<std::size_t>(ci) * kernel + k] = tap_ptr(g * cin_g + ci, k, t0);
        }
        accumulate_tile(rows.data(), cin_g, kernel, wblk, w_row_stride, bblk, nblock, n, acc);
        for (int b = 0; b < nblock; ++b) {
          std::copy(acc[b], acc[b] + n, out + static_cast<std::int64_t>(co0 + b) * out_len + t0);
        }
      }
    }
  }
}

int conv_transpose_history(int kernel, int stride) { return (kernel + stride - 1) / stride - 1; }

void conv_transpose1d_valid(const float* xh, std::int64_t frames, int cin, const float* weight, const float* bias,
                            int cout, int kernel, int stride, float* out) {
  if (frames <= 0) return;
  const int history = conv_transpose_history(kernel, stride);
  const std::int64_t xh_len = frames + history;
  const std::int64_t out_len = frames * stride;
  std::vector<float> w_phase;
  std::vector<float> phase_out(static_cast<std::size_t>(cout) * frames);

  for (int r = 0; r < stride; ++r) {
    const int taps = r < kernel ? (kernel - r + stride - 1) / stride : 0;
    if (taps == 0) {
      for (int co = 0; co < cout; ++co) {
        const float b = bias != nullptr ? bias[co] : 0.0f;
        for (std::int64_t q = 0; q < frames; ++q) out[static_cast<std::int64_t>(co) * out_len + q * stride + r] = b;
      }
      continue;
    }
    // Tap j' (ascending in time) reads input q - (taps-1) + j' with kernel
    // index r + (taps-1-j')*stride.
    w_phase.assign(static_cast<std::size_t>(cout) * cin * taps, 0.0f);
    for (int co = 0; co < cout; ++co) {
      for (int ci = 0; ci < cin; ++ci) {
        for (int jp = 0; jp < taps; ++jp) {
          const int k = r + (taps - 1 - jp) * stride;
          w_phase[(static_cast<std::size_t>(co) * cin + ci) * taps + jp] =
              weight[(static_cast<std::int64_t>(ci) * cout + co) * kernel + k];
        }
      }
    }
    const int skip = history - (taps - 1);
    // The input rows start `skip` columns in; pass a shifted copy so that the
    // kernel sees a contiguous [cin x (frames + taps - 1)] block.
    const std::int64_t len = frames + taps - 1;
    std::vector<float> view(static_cast<std::size_t>(cin) * len);
    for (int ci = 0; ci < cin; ++ci) {
      std::copy(xh + static_cast<std::int64_t>(ci) * xh_len + skip, xh + static_cast<std::int64_t>(ci) * xh_len + skip + len,
                view.begin() + static_cast<std::int64_t>(ci) * len);
    }
    conv1d_valid(view.data(), len, cin, w_phase.data(), bias, cout, taps, 1, 1, 1, phase_out.data(), frames);
    for (int co = 0; co < cout; ++co) {
      const float* src = phase_out.data() + static_cast<std::int64_t>(co) * frames;
      float* dst = out + static_cast<std::int64_t>(co) * out_len + r;
      for (std::int64_t q = 0; q < frames; ++q) dst[q * stride] = src[q];
    }
  }
}

float elu_scalar(float x) { return x >= 0.0f ? x : std::expm1(x); }

}  // namespace soundstream::detail
