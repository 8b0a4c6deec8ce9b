#include "soundstream/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>

#include "soundstream/ops.hpp"

namespace soundstream {

namespace {

bool is_power_of_two(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

struct FftPlan {
  std::vector<std::size_t> bitrev;
  std::vector<std::complex<double>> twiddles;  // exp(-2*pi*i*k/n), k < n/2
};

const FftPlan& plan_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> plans;
  std::lock_guard lock(mu);
  auto& slot = plans[n];
  if (!slot) {
    slot = std::make_unique<FftPlan>();
    int bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    slot->bitrev.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      slot->bitrev[i] = r;
    }
    slot->twiddles.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      slot->twiddles[k] = {std::cos(ang), std::sin(ang)};
    }
  }
  return *slot;
}

}  // namespace

void fft_inplace(std::vector<std::complex<double>>& data, bool inverse) {
  const std::size_t n = data.size();
  if (!is_power_of_two(static_cast<std::int64_t>(n))) throw std::invalid_argument("fft length must be a power of two");
  const FftPlan& plan = plan_for(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < plan.bitrev[i]) std::swap(data[i], data[plan.bitrev[i]]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t j = 0; j < half; ++j) {
        std::complex<double> w = plan.twiddles[j * step];
        if (inverse) w = std::conj(w);
        const auto u = data[start + j];
        const auto v = data[start + j + half] * w;
        data[start + j] = u + v;
        data[start + j + half] = u - v;
      }
    }
  }
}

std::vector<float> hann_window(int n) {
  std::vector<float> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n));
  }
  return w;
}

std::int64_t stft_frame_count(std::int64_t samples, int window_len, int hop) {
  if (samples < window_len) return 0;
  return (samples - window_len) / hop + 1;
}

namespace ops {

Tensor stft(const Tensor& x, int window_len, int hop) {
  if (!x.defined()) throw std::invalid_argument("stft: undefined input");
  if (!(x.ndim() == 1 || (x.ndim() == 2 && x.dim(0) == 1))) {
    throw std::invalid_argument("stft: expected a mono signal, got " + shape_to_string(x.shape()));
  }
  if (!is_power_of_two(window_len)) throw std::invalid_argument("stft: window length must be a power of two");
  if (hop < 1 || hop > window_len) throw std::invalid_argument("stft: hop must be in [1, window_len]");
  const std::int64_t T = x.numel();
  if (T < window_len) {
    throw std::invalid_argument("stft: signal of " + std::to_string(T) + " samples is shorter than the window (" +
                                std::to_string(window_len) + ")");
  }
  const std::int64_t frames = stft_frame_count(T, window_len, hop);
  const int F = window_len / 2;
  const auto window = std::make_shared<std::vector<float>>(hann_window(window_len));

  Tensor out({2, F, frames});
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(window_len));
  for (std::int64_t f = 0; f < frames; ++f) {
    for (int n = 0; n < window_len; ++n) buf[n] = {static_cast<double>((*window)[n]) * x.ptr()[f * hop + n], 0.0};
    fft_inplace(buf, false);
    for (int k = 0; k < F; ++k) {
      out.ptr()[k * frames + f] = static_cast<float>(buf[k].real());
      out.ptr()[(F + k) * frames + f] = static_cast<float>(buf[k].imag());
    }
  }

  if (should_record({&x})) {
    active_tape()->record({x}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto gx = x.grad();
      std::vector<std::complex<double>> z(static_cast<std::size_t>(window_len));
      for (std::int64_t f = 0; f < frames; ++f) {
        std::fill(z.begin(), z.end(), std::complex<double>{});
        for (int k = 0; k < F; ++k) z[k] = {g[k * frames + f], g[(F + k) * frames + f]};
        // d re_k/dx_n = w_n cos, d im_k/dx_n = -w_n sin  =>  Re(sum_k z_k e^{+i theta}).
        fft_inplace(z, true);
        for (int n = 0; n < window_len; ++n) {
          gx[f * hop + n] += static_cast<float>((*window)[n] * z[n].real());
        }
      }
    });
  }
  return out;
}

Tensor spectral_magnitude(const Tensor& spec, SpectrumKind kind) {
  if (spec.ndim() != 3 || spec.dim(0) != 2) throw std::invalid_argument("spectral_magnitude: expected [2 x F x N]");
  const std::int64_t n = spec.dim(1) * spec.dim(2);
  Tensor out({spec.dim(1), spec.dim(2)});
  const float* re = spec.ptr();
  const float* im = spec.ptr() + n;
  for (std::int64_t i = 0; i < n; ++i) {
    const float p = re[i] * re[i] + im[i] * im[i];
    out.ptr()[i] = kind == SpectrumKind::Power ? p : std::sqrt(p);
  }
  if (should_record({&spec})) {
    active_tape()->record({spec}, out, [=]() mutable {
      const float* g = out.grad().data();
      auto gs = spec.grad();
      const float* r = spec.ptr();
      const float* m = spec.ptr() + n;
      for (std::int64_t i = 0; i < n; ++i) {
        float dr, di;
        if (kind == SpectrumKind::Power) {
          dr = 2.0f * r[i];
          di = 2.0f * m[i];
        } else {
          const float mag = out.ptr()[i];
          if (mag == 0.0f) continue;
          dr = r[i] / mag;
          di = m[i] / mag;
        }
        gs[i] += g[i] * dr;
        gs[n + i] += g[i] * di;
      }
    });
  }
  return out;
}

}  // namespace ops

double MelFilterbank::hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelFilterbank::mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(int num_bins, int fft_bins, int window_len, double sample_rate)
    : num_bins_(num_bins), fft_bins_(fft_bins) {
  if (num_bins < 1 || fft_bins < 1) throw std::invalid_argument("mel filterbank: bin counts must be positive");
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(num_bins) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(num_bins + 1));
  }
  weights_.assign(static_cast<std::size_t>(num_bins) * fft_bins, 0.0f);
  for (int m = 0; m < num_bins; ++m) {
    const double lo = edges[m];
    const double mid = edges[m + 1];
    const double hi = edges[m + 2];
    for (int k = 0; k < fft_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / window_len;
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      weights_[static_cast<std::size_t>(m) * fft_bins + k] = static_cast<float>(w);
    }
    // Short windows leave narrow low-frequency triangles without any bin
    // centre inside them. Such filters sample the spectrum at their centre
    // frequency by linear interpolation between the neighbouring bins.
    float* row = weights_.data() + static_cast<std::size_t>(m) * fft_bins;
    bool empty = true;
    for (int k = 0; k < fft_bins && empty; ++k) empty = row[k] == 0.0f;
    if (empty) {
      const double pos = std::min(mid * window_len / sample_rate, static_cast<double>(fft_bins - 1));
      const int k0 = static_cast<int>(std::floor(pos));
      const double frac = pos - k0;
      row[k0] = static_cast<float>(1.0 - frac);
      if (k0 + 1 < fft_bins && frac > 0.0) row[k0 + 1] = static_cast<float>(frac);
    }
  }
}

const MelFilterbank& cached_mel_filterbank(int num_bins, int window_len, double sample_rate) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, double>, std::unique_ptr<MelFilterbank>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{num_bins, window_len, sample_rate}];
  if (!slot) slot = std::make_unique<MelFilterbank>(num_bins, window_len / 2, window_len, sample_rate);
  return *slot;
}

namespace ops {

Tensor mel_spectrogram(const Tensor& x, int window_len, int num_bins, double sample_rate, SpectrumKind kind) {
  if (window_len < 4) throw std::invalid_argument("mel_spectrogram: window too short");
  const Tensor spec = stft(x, window_len, window_len / 4);
  const Tensor mag = spectral_magnitude(spec, kind);
  const MelFilterbank& bank = cached_mel_filterbank(num_bins, window_len, sample_rate);
  return matmul_const(bank.weights(), bank.num_bins(), mag);
}

}  // namespace ops

}  // namespace soundstream
