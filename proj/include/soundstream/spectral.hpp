#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "soundstream/tensor.hpp"

namespace soundstream {

// In-place iterative radix-2 FFT. `inverse` flips the exponent sign; no
// 1/N scaling is applied in either direction.
void fft_inplace(std::vector<std::complex<double>>& data, bool inverse = false);

// Periodic Hann window of length n.
std::vector<float> hann_window(int n);

// Number of frames of a non-centred STFT: floor((T - W) / H) + 1.
std::int64_t stft_frame_count(std::int64_t samples, int window_len, int hop);

namespace ops {

// x: [T] (or [1 x T]). Returns [2 x W/2 x frames]: real and imaginary parts
// of the Hann-windowed DFT, Nyquist bin dropped.
Tensor stft(const Tensor& x, int window_len, int hop);

enum class SpectrumKind { Magnitude, Power };

// [2 x F x N] -> [F x N]; sqrt(re^2 + im^2) or re^2 + im^2.
Tensor spectral_magnitude(const Tensor& spec, SpectrumKind kind = SpectrumKind::Magnitude);

}  // namespace ops

// HTK-scale triangular mel filters spanning 0 .. sample_rate/2, evaluated at
// the retained DFT bin centres, without area normalisation.
class MelFilterbank {
 public:
  MelFilterbank(int num_bins, int fft_bins, int window_len, double sample_rate);

  int num_bins() const { return num_bins_; }
  int fft_bins() const { return fft_bins_; }
  // Row-major [num_bins x fft_bins].
  const std::vector<float>& weights() const { return weights_; }

  static double hz_to_mel(double hz);
  static double mel_to_hz(double mel);

 private:
  int num_bins_;
  int fft_bins_;
  std::vector<float> weights_;
};

const MelFilterbank& cached_mel_filterbank(int num_bins, int window_len, double sample_rate);

namespace ops {

// x: [T]. Mel spectrogram [num_bins x frames] with window s and hop s/4.
Tensor mel_spectrogram(const Tensor& x, int window_len, int num_bins, double sample_rate,
                       SpectrumKind kind = SpectrumKind::Magnitude);

}  // namespace ops

}  // namespace soundstream
