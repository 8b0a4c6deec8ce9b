#include "soundstream/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "conv_kernel.hpp"

namespace soundstream::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined tensor");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
}

Tensor finish(Tensor out) {
  debug_check_finite(out.data(), "forward");
  return out;
}

}  // namespace

// --- convolutions -----------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv1dOptions& opts) {
  require(x.defined() && weight.defined(), "conv1d: undefined input");
  require(x.ndim() == 2, "conv1d: input must be [C_in x T], got " + shape_to_string(x.shape()));
  require(weight.ndim() == 3, "conv1d: weight must be [C_out x C_in/groups x K]");
  require(opts.stride >= 1 && opts.dilation >= 1 && opts.groups >= 1, "conv1d: stride, dilation and groups must be >= 1");
  const int cin = static_cast<int>(x.dim(0));
  const std::int64_t T = x.dim(1);
  const int cout = static_cast<int>(weight.dim(0));
  const int cin_g = static_cast<int>(weight.dim(1));
  const int K = static_cast<int>(weight.dim(2));
  const int s = opts.stride;
  const int d = opts.dilation;
  const int groups = opts.groups;
  require(cin % groups == 0 && cout % groups == 0, "conv1d: channels not divisible by groups");
  require(cin_g * groups == cin, "conv1d: weight expects " + std::to_string(cin_g * groups) + " input channels, got " +
                                     std::to_string(cin));
  require(!bias.defined() || (bias.ndim() == 1 && bias.dim(0) == cout), "conv1d: bias must be [C_out]");

  const std::int64_t out_len = (T + s - 1) / s;
  const std::int64_t pad = detail::conv_pad_left(K, d, s, opts.padding);
  const std::int64_t lo = -pad;
  const std::int64_t xp_len = (out_len - 1) * s + static_cast<std::int64_t>(K - 1) * d + 1;
  auto xp = std::make_shared<std::vector<float>>(static_cast<std::size_t>(cin) * xp_len, 0.0f);
  for (int ci = 0; ci < cin; ++ci) {
    const float* src = x.ptr() + ci * T;
    float* dst = xp->data() + ci * xp_len;
    for (std::int64_t j = 0; j < xp_len; ++j) {
      const std::int64_t t = lo + j;
      if (t >= 0 && t < T) dst[j] = src[t];
    }
  }
  Tensor out({cout, out_len});
  detail::conv1d_valid(xp->data(), xp_len, cin, weight.ptr(), bias.defined() ? bias.ptr() : nullptr, cout, K, s, d,
                       groups, out.ptr(), out_len);

  if (should_record({&x, &weight, &bias})) {
    active_tape()->record({x, weight, bias}, out, [=]() mutable {
      const float* g = out.grad().data();
      const int cout_g = cout / groups;
      const std::int64_t cols = static_cast<std::int64_t>(cin_g) * K;
      const bool need_w = weight.requires_grad();
      const bool need_x = x.requires_grad();
      std::vector<float> gxp(need_x ? xp->size() : 0, 0.0f);
      RowMat xcol(cols, out_len);
      for (int gi = 0; gi < groups; ++gi) {
        for (int ci = 0; ci < cin_g; ++ci) {
          const float* row = xp->data() + (gi * cin_g + ci) * xp_len;
          for (int k = 0; k < K; ++k) {
            float* dst = xcol.data() + (static_cast<std::int64_t>(ci) * K + k) * out_len;
            const std::int64_t off = static_cast<std::int64_t>(k) * d;
            for (std::int64_t u = 0; u < out_len; ++u) dst[u] = row[u * s + off];
          }
        }
        ConstMapMat G(g + static_cast<std::int64_t>(gi) * cout_g * out_len, cout_g, out_len);
        if (need_w) {
          MapMat GW(weight.grad().data() + static_cast<std::int64_t>(gi) * cout_g * cols, cout_g, cols);
          GW.noalias() += G * xcol.transpose();
        }
        if (need_x) {
          ConstMapMat W(weight.ptr() + static_cast<std::int64_t>(gi) * cout_g * cols, cout_g, cols);
          RowMat gcol = W.transpose() * G;
          for (int ci = 0; ci < cin_g; ++ci) {
            float* row = gxp.data() + (gi * cin_g + ci) * xp_len;
            for (int k = 0; k < K; ++k) {
              const float* src = gcol.data() + (static_cast<std::int64_t>(ci) * K + k) * out_len;
              const std::int64_t off = static_cast<std::int64_t>(k) * d;
              for (std::int64_t u = 0; u < out_len; ++u) row[u * s + off] += src[u];
            }
          }
        }
      }
      if (need_x) {
        auto gx = x.grad();
        for (int ci = 0; ci < cin; ++ci) {
          for (std::int64_t j = 0; j < xp_len; ++j) {
            const std::int64_t t = lo + j;
            if (t >= 0 && t < T) gx[ci * T + t] += gxp[ci * xp_len + j];
          }
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad();
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::int64_t u = 0; u < out_len; ++u) acc += g[co * out_len + u];
          gb[co] += static_cast<float>(acc);
        }
      }
    });
  }
  return finish(out);
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  require(x.defined() && weight.defined(), "conv_transpose1d: undefined input");
  require(x.ndim() == 2, "conv_transpose1d: input must be [C_in x S]");
  require(weight.ndim() == 3, "conv_transpose1d: weight must be [C_in x C_out x K]");
  require(stride >= 1, "conv_transpose1d: stride must be >= 1");
  const int cin = static_cast<int>(x.dim(0));
  const std::int64_t S = x.dim(1);
  require(weight.dim(0) == cin, "conv_transpose1d: weight expects " + std::to_string(weight.dim(0)) +
                                    " input channels, got " + std::to_string(cin));
  const int cout = static_cast<int>(weight.dim(1));
  const int K = static_cast<int>(weight.dim(2));
  require(!bias.defined() || (bias.ndim() == 1 && bias.dim(0) == cout), "conv_transpose1d: bias must be [C_out]");

  const int history = detail::conv_transpose_history(K, stride);
  const std::int64_t xh_len = S + history;
  std::vector<float> xh(static_cast<std::size_t>(cin) * xh_len, 0.0f);
  for (int ci = 0; ci < cin; ++ci) std::copy(x.ptr() + ci * S, x.ptr() + (ci + 1) * S, xh.begin() + ci * xh_len + history);
  const std::int64_t out_len = S * stride;
  Tensor out({cout, out_len});
  detail::conv_transpose1d_valid(xh.data(), S, cin, weight.ptr(), bias.defined() ? bias.ptr() : nullptr, cout, K, stride,
                                 out.ptr());

  if (should_record({&x, &weight, &bias})) {
    active_tape()->record({x, weight, bias}, out, [=]() mutable {
      const float* g = out.grad().data();
      const std::int64_t rows = static_cast<std::int64_t>(cout) * K;
      RowMat gcol(rows, S);
      for (int co = 0; co < cout; ++co) {
        for (int k = 0; k < K; ++k) {
          float* dst = gcol.data() + (static_cast<std::int64_t>(co) * K + k) * S;
          for (std::int64_t u = 0; u < S; ++u) {
            const std::int64_t v = u * stride + k;
            dst[u] = v < out_len ? g[co * out_len + v] : 0.0f;
          }
        }
      }
      if (x.requires_grad()) {
        ConstMapMat W(weight.ptr(), cin, rows);
        MapMat GX(x.grad().data(), cin, S);
        GX.noalias() += W * gcol;
      }
      if (weight.requires_grad()) {
        ConstMapMat X(x.ptr(), cin, S);
        MapMat GW(weight.grad().data(), cin, rows);
        GW.noalias() += X * gcol.transpose();
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad();
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::int64_t v = 0; v < out_len; ++v) acc += g[co * out_len + v];
          gb[co] += static_cast<float>(acc);
        }
      }
    });
  }
  return finish(out);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opts) {
  require(x.defined() && weight.defined(), "conv2d: undefined input");
  require(x.ndim() == 3, "conv2d: input must be [C x F x T]");
  require(weight.ndim() == 4, "conv2d: weight must be [C_out x C_in x KF x KT]");
  require(opts.stride_f >= 1 && opts.stride_t >= 1, "conv2d: strides must be >= 1");
  const int cin = static_cast<int>(x.dim(0));
  const std::int64_t F = x.dim(1);
  const std::int64_t T = x.dim(2);
  const int cout = static_cast<int>(weight.dim(0));
  require(weight.dim(1) == cin, "conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                                    std::to_string(cin));
  const int KF = static_cast<int>(weight.dim(2));
  const int KT = static_cast<int>(weight.dim(3));
  require(!bias.defined() || (bias.ndim() == 1 && bias.dim(0) == cout), "conv2d: bias must be [C_out]");
  const int sf = opts.stride_f;
  const int st = opts.stride_t;

  std::int64_t OF = 0, OT = 0, pf = 0, pt = 0;
  if (opts.padding == Padding2d::Same) {
    OF = (F + sf - 1) / sf;
    OT = (T + st - 1) / st;
    pf = std::max<std::int64_t>((OF - 1) * sf + KF - F, 0) / 2;
    pt = std::max<std::int64_t>((OT - 1) * st + KT - T, 0) / 2;
  } else {
    require(F >= KF && T >= KT, "conv2d: kernel " + std::to_string(KF) + "x" + std::to_string(KT) +
                                    " does not fit input " + shape_to_string(x.shape()));
    OF = (F - KF) / sf + 1;
    OT = (T - KT) / st + 1;
  }
  const std::int64_t cols = static_cast<std::int64_t>(cin) * KF * KT;
  const std::int64_t npos = OF * OT;
  auto xcol = std::make_shared<RowMat>(cols, npos);
  for (int c = 0; c < cin; ++c) {
    for (int kf = 0; kf < KF; ++kf) {
      for (int kt = 0; kt < KT; ++kt) {
        float* dst = xcol->data() + ((static_cast<std::int64_t>(c) * KF + kf) * KT + kt) * npos;
        for (std::int64_t of = 0; of < OF; ++of) {
          const std::int64_t fi = of * sf - pf + kf;
          for (std::int64_t ot = 0; ot < OT; ++ot) {
            const std::int64_t ti = ot * st - pt + kt;
            dst[of * OT + ot] = (fi >= 0 && fi < F && ti >= 0 && ti < T) ? x.ptr()[(c * F + fi) * T + ti] : 0.0f;
          }
        }
      }
    }
  }
  Tensor out({cout, OF, OT});
  {
    ConstMapMat W(weight.ptr(), cout, cols);
    MapMat O(out.ptr(), cout, npos);
    O.noalias() = W * (*xcol);
    if (bias.defined()) {
      for (int co = 0; co < cout; ++co) O.row(co).array() += bias.ptr()[co];
    }
  }

  if (should_record({&x, &weight, &bias})) {
    active_tape()->record({x, weight, bias}, out, [=]() mutable {
      ConstMapMat G(out.grad().data(), cout, npos);
      if (weight.requires_grad()) {
        MapMat GW(weight.grad().data(), cout, cols);
        GW.noalias() += G * xcol->transpose();
      }
      if (x.requires_grad()) {
        ConstMapMat W(weight.ptr(), cout, cols);
        RowMat gcol = W.transpose() * G;
        auto gx = x.grad();
        for (int c = 0; c < cin; ++c) {
          for (int kf = 0; kf < KF; ++kf) {
            for (int kt = 0; kt < KT; ++kt) {
              const float* src = gcol.data() + ((static_cast<std::int64_t>(c) * KF + kf) * KT + kt) * npos;
              for (std::int64_t of = 0; of < OF; ++of) {
                const std::int64_t fi = of * sf - pf + kf;
                if (fi < 0 || fi >= F) continue;
                for (std::int64_t ot = 0; ot < OT; ++ot) {
                  const std::int64_t ti = ot * st - pt + kt;
                  if (ti >= 0 && ti < T) gx[(c * F + fi) * T + ti] += src[of * OT + ot];
                }
              }
            }
          }
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad();
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::int64_t p = 0; p < npos; ++p) acc += G(co, p);
          gb[co] += static_cast<float>(acc);
        }
      }
    });
  }
  return finish(out);
}

// --- elementwise ------------------------------------------------------------

Tensor elu(const Tensor& x) {
  Tensor out(x.shape());
  const float* in = x.ptr();
  float* o = out.ptr();
  for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = detail::elu_scalar(in[i]);
  if (should_record({&x})) {
    active_tape()->record({x}, out, [=]() mutable {
      auto gx = x.grad();
      const float* g = out.grad().data();
      const float* xv = x.ptr();
      const float* ov = out.ptr();
      for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i] * (xv[i] >= 0.0f ? 1.0f : ov[i] + 1.0f);
    });
  }
  return finish(out);
}

Tensor leaky_relu(const Tensor& x, float slope) {
  Tensor out(x.shape());
  const float* in = x.ptr();
  float* o = out.ptr();
  for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = in[i] >= 0.0f ? in[i] : slope * in[i];
  if (should_record({&x})) {
    active_tape()->record({x}, out, [=]() mutable {
      auto gx = x.grad();
      const float* g = out.grad().data();
      const float* xv = x.ptr();
      for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += xv[i] >= 0.0f ? g[i] : slope * g[i];
    });
  }
  return finish(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  if (should_record({&a, &b})) {
    active_tape()->record({a, b}, out, [=]() mutable {
      const float* g = out.grad().data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i];
      }
    });
  }
  return finish(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
  if (should_record({&a, &b})) {
    active_tape()->record({a, b}, out, [=]() mutable {
      const float* g = out.grad().data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::int64_t i = 0; i < b.numel(); ++i) gb[i] -= g[i];
      }
    });
  }
  return finish(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  if (should_record({&a, &b})) {
    active_tape()->record({a, b}, out, [=]() mutable {
      const float* g = out.grad().data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * b.ptr()[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i] * a.ptr()[i];
      }
    });
  }
  return finish(out);
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * s;
  if (should_record({&a})) {
    active_tape()->record({a}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto ga = a.grad();
      for (std::int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * s;
    });
  }
  return finish(out);
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (should_record({&a})) {
    active_tape()->record({a}, out, [=]() mutable {
      const float g = out.grad()[0];
      auto ga = a.grad();
      for (auto& v : ga) v += g;
    });
  }
  return finish(out);
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&a})) {
    active_tape()->record({a}, out, [=]() mutable {
      const float g = static_cast<float>(out.grad()[0] / n);
      auto ga = a.grad();
      for (auto& v : ga) v += g;
    });
  }
  return finish(out);
}

Tensor transpose(const Tensor& a) {
  require(a.ndim() == 2, "transpose: 2-D tensor required");
  const std::int64_t R = a.dim(0);
  const std::int64_t C = a.dim(1);
  Tensor out({C, R});
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t c = 0; c < C; ++c) out.ptr()[c * R + r] = a.ptr()[r * C + c];
  if (should_record({&a})) {
    active_tape()->record({a}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto ga = a.grad();
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) ga[r * C + c] += g[c * R + r];
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), "reshape: size mismatch " + shape_to_string(a.shape()) + " -> " +
                                               shape_to_string(shape));
  Tensor out(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()));
  if (should_record({&a})) {
    active_tape()->record({a}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto ga = a.grad();
      for (std::int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor avg_pool1d(const Tensor& x, int width, int stride, int padding) {
  require(x.ndim() == 2, "avg_pool1d: input must be [C x T]");
  require(width >= 1 && stride >= 1 && padding >= 0 && padding < width, "avg_pool1d: bad window");
  const std::int64_t C = x.dim(0);
  const std::int64_t T = x.dim(1);
  const std::int64_t out_len = (T + 2 * padding - width) / stride + 1;
  require(out_len >= 1, "avg_pool1d: input shorter than window");
  Tensor out({C, out_len});
  auto window = [=](std::int64_t u) {
    const std::int64_t lo = std::max<std::int64_t>(u * stride - padding, 0);
    const std::int64_t hi = std::min<std::int64_t>(u * stride - padding + width, T);
    return std::pair{lo, hi};
  };
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t u = 0; u < out_len; ++u) {
      auto [lo, hi] = window(u);
      float acc = 0.0f;
      for (std::int64_t t = lo; t < hi; ++t) acc += x.ptr()[c * T + t];
      out.ptr()[c * out_len + u] = acc / static_cast<float>(hi - lo);
    }
  }
  if (should_record({&x})) {
    active_tape()->record({x}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto gx = x.grad();
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t u = 0; u < out_len; ++u) {
          auto [lo, hi] = window(u);
          const float share = g[c * out_len + u] / static_cast<float>(hi - lo);
          for (std::int64_t t = lo; t < hi; ++t) gx[c * T + t] += share;
        }
      }
    });
  }
  return finish(out);
}

Tensor straight_through(const Tensor& y, const Tensor& quantized) {
  require_same_shape(y, quantized, "straight_through");
  Tensor out(y.shape(), std::vector<float>(quantized.data().begin(), quantized.data().end()));
  if (should_record({&y})) {
    active_tape()->record({y}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto gy = y.grad();
      for (std::int64_t i = 0; i < y.numel(); ++i) gy[i] += g[i];
    });
  }
  return out;
}

Tensor film(const Tensor& activations, const Tensor& cond, const Tensor& weight, const Tensor& bias) {
  require(activations.ndim() == 2, "film: activations must be [C x S]");
  const std::int64_t C = activations.dim(0);
  const std::int64_t S = activations.dim(1);
  require(cond.ndim() == 2 && cond.dim(0) == 2, "film: conditioning must be [2 x S]");
  const std::int64_t SC = cond.dim(1);
  require(SC == S || SC == 1, "film: conditioning length " + std::to_string(SC) + " does not match activations " +
                                  std::to_string(S));
  for (std::int64_t n = 0; n < SC; ++n) {
    const float c0 = cond.ptr()[n];
    const float c1 = cond.ptr()[SC + n];
    require((c0 == 1.0f && c1 == 0.0f) || (c0 == 0.0f && c1 == 1.0f), "film: malformed one-hot conditioning");
  }
  require(weight.ndim() == 2 && weight.dim(0) == 2 * C && weight.dim(1) == 2, "film: weight must be [2C x 2]");
  require(bias.ndim() == 1 && bias.dim(0) == 2 * C, "film: bias must be [2C]");

  auto cond_at = [&](int j, std::int64_t n) { return cond.ptr()[j * SC + (SC == 1 ? 0 : n)]; };
  std::vector<float> gamma(static_cast<std::size_t>(C * S)), beta(static_cast<std::size_t>(C * S));
  Tensor out({C, S});
  const float* w = weight.ptr();
  const float* b = bias.ptr();
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t n = 0; n < S; ++n) {
      const float c0 = cond_at(0, n);
      const float c1 = cond_at(1, n);
      const float gm = w[c * 2] * c0 + w[c * 2 + 1] * c1 + b[c];
      const float bt = w[(C + c) * 2] * c0 + w[(C + c) * 2 + 1] * c1 + b[C + c];
      gamma[c * S + n] = gm;
      beta[c * S + n] = bt;
      out.ptr()[c * S + n] = gm * activations.ptr()[c * S + n] + bt;
    }
  }
  if (should_record({&activations, &weight, &bias})) {
    Tensor a = activations;
    Tensor cnd = cond.detach();
    active_tape()->record({activations, weight, bias}, out, [=, gamma = std::move(gamma)]() mutable {
      const float* g = out.grad().data();
      const std::int64_t sc = cnd.dim(1);
      auto cat = [&](int j, std::int64_t n) { return cnd.ptr()[j * sc + (sc == 1 ? 0 : n)]; };
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::int64_t i = 0; i < C * S; ++i) ga[i] += g[i] * gamma[i];
      }
      const bool need_w = weight.requires_grad();
      const bool need_b = bias.requires_grad();
      if (!need_w && !need_b) return;
      for (std::int64_t c = 0; c < C; ++c) {
        double gg0 = 0, gg1 = 0, gb0 = 0, gb1 = 0, sg = 0, sb = 0;
        for (std::int64_t n = 0; n < S; ++n) {
          const double dg = static_cast<double>(g[c * S + n]) * a.ptr()[c * S + n];
          const double db = g[c * S + n];
          gg0 += dg * cat(0, n);
          gg1 += dg * cat(1, n);
          gb0 += db * cat(0, n);
          gb1 += db * cat(1, n);
          sg += dg;
          sb += db;
        }
        if (need_w) {
          auto gw = weight.grad();
          gw[c * 2] += static_cast<float>(gg0);
          gw[c * 2 + 1] += static_cast<float>(gg1);
          gw[(C + c) * 2] += static_cast<float>(gb0);
          gw[(C + c) * 2 + 1] += static_cast<float>(gb1);
        }
        if (need_b) {
          auto gbias = bias.grad();
          gbias[c] += static_cast<float>(sg);
          gbias[C + c] += static_cast<float>(sb);
        }
      }
    });
  }
  return finish(out);
}

// --- losses -----------------------------------------------------------------

Tensor hinge_mean(const Tensor& x, float sign) {
  require(x.defined() && x.numel() > 0, "hinge_mean: empty logits");
  double acc = 0.0;
  for (float v : x.data()) acc += std::max(0.0, 1.0 - static_cast<double>(sign) * v);
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&x})) {
    active_tape()->record({x}, out, [=]() mutable {
      const float g = static_cast<float>(out.grad()[0] / n);
      auto gx = x.grad();
      for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (1.0 - static_cast<double>(sign) * x.ptr()[i] > 0.0) gx[i] -= sign * g;
      }
    });
  }
  return out;
}

namespace {
Tensor abs_diff_reduce(const Tensor& a, const Tensor& b, bool average, const char* name) {
  require_same_shape(a, b, name);
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += std::fabs(static_cast<double>(a.ptr()[i]) - b.ptr()[i]);
  const double n = average ? static_cast<double>(a.numel()) : 1.0;
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (should_record({&a, &b})) {
    active_tape()->record({a, b}, out, [=]() mutable {
      const float g = static_cast<float>(out.grad()[0] / n);
      for (std::int64_t i = 0; i < a.numel(); ++i) {
        const float diff = a.ptr()[i] - b.ptr()[i];
        const float sgn = diff > 0.0f ? g : (diff < 0.0f ? -g : 0.0f);
        if (a.requires_grad()) a.grad()[i] += sgn;
        if (b.requires_grad()) b.grad()[i] -= sgn;
      }
    });
  }
  return out;
}
}  // namespace

Tensor mean_abs_diff(const Tensor& a, const Tensor& b) { return abs_diff_reduce(a, b, true, "mean_abs_diff"); }
Tensor sum_abs_diff(const Tensor& a, const Tensor& b) { return abs_diff_reduce(a, b, false, "sum_abs_diff"); }

Tensor sum_frame_l2_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sum_frame_l2_diff");
  require(a.ndim() == 2, "sum_frame_l2_diff: expected [bins x frames]");
  const std::int64_t B = a.dim(0);
  const std::int64_t N = a.dim(1);
  std::vector<double> norms(static_cast<std::size_t>(N), 0.0);
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t t = 0; t < N; ++t) {
      const double d = static_cast<double>(a.ptr()[i * N + t]) - b.ptr()[i * N + t];
      norms[t] += d * d;
    }
  }
  double acc = 0.0;
  for (auto& v : norms) {
    v = std::sqrt(v);
    acc += v;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (should_record({&a, &b})) {
    active_tape()->record({a, b}, out, [=]() mutable {
      const double g = out.grad()[0];
      for (std::int64_t i = 0; i < B; ++i) {
        for (std::int64_t t = 0; t < N; ++t) {
          if (norms[t] == 0.0) continue;
          const double d = static_cast<double>(a.ptr()[i * N + t]) - b.ptr()[i * N + t];
          const float v = static_cast<float>(g * d / norms[t]);
          if (a.requires_grad()) a.grad()[i * N + t] += v;
          if (b.requires_grad()) b.grad()[i * N + t] -= v;
        }
      }
    });
  }
  return out;
}

Tensor log_eps(const Tensor& x, float eps) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.ptr()[i] = std::log(x.ptr()[i] + eps);
  if (should_record({&x})) {
    active_tape()->record({x}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto gx = x.grad();
      for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i] / (x.ptr()[i] + eps);
    });
  }
  return finish(out);
}

Tensor matmul_const(const std::vector<float>& a, std::int64_t rows, const Tensor& x) {
  require(x.ndim() == 2, "matmul_const: x must be 2-D");
  const std::int64_t K = x.dim(0);
  const std::int64_t N = x.dim(1);
  require(static_cast<std::int64_t>(a.size()) == rows * K, "matmul_const: inner dimension mismatch");
  auto A = std::make_shared<std::vector<float>>(a);
  Tensor out({rows, N});
  {
    ConstMapMat Am(A->data(), rows, K);
    ConstMapMat X(x.ptr(), K, N);
    MapMat O(out.ptr(), rows, N);
    O.noalias() = Am * X;
  }
  if (should_record({&x})) {
    active_tape()->record({x}, out, [=]() mutable {
      ConstMapMat Am(A->data(), rows, K);
      ConstMapMat G(out.grad().data(), rows, N);
      MapMat GX(x.grad().data(), K, N);
      GX.noalias() += Am.transpose() * G;
    });
  }
  return finish(out);
}

}  // namespace soundstream::ops
