#include "soundstream/rvq.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace soundstream {

namespace {

double squared_distance(const float* a, const float* b, int dim) {
  double acc = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    acc += d * d;
  }
  return acc;
}

int nearest_in(const float* table, int count, int dim, const float* v) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < count; ++i) {
    const double d = squared_distance(table + static_cast<std::size_t>(i) * dim, v, dim);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

IndexMatrix IndexMatrix::prefix(int n) const {
  if (n < 0 || n > num_layers) throw std::invalid_argument("IndexMatrix::prefix: layer count out of range");
  IndexMatrix out(frames, n);
  for (std::int64_t s = 0; s < frames; ++s)
    for (int i = 0; i < n; ++i) out.at(s, i) = at(s, i);
  return out;
}

Codebook::Codebook(int size, int dim)
    : vectors(static_cast<std::size_t>(size) * dim, 0.0f),
      ema_count(static_cast<std::size_t>(size), 0.0f),
      ema_sum(static_cast<std::size_t>(size) * dim, 0.0f),
      usage(static_cast<std::size_t>(size), 0.0f),
      size_(size),
      dim_(dim) {}

int Codebook::nearest(const float* v) const { return nearest_in(vectors.data(), size_, dim_, v); }

ResidualVQ::ResidualVQ(int num_layers, int codebook_size, int dim, RvqOptions options)
    : codebook_size_(codebook_size), dim_(dim), options_(options) {
  if (num_layers < 1) throw std::invalid_argument("rvq: need at least one layer");
  if (codebook_size < 1 || !std::has_single_bit(static_cast<unsigned>(codebook_size))) {
    throw std::invalid_argument("rvq: codebook size must be a power of two, got " + std::to_string(codebook_size));
  }
  if (dim < 1) throw std::invalid_argument("rvq: dimension must be positive");
  layers_.assign(static_cast<std::size_t>(num_layers), Codebook(codebook_size, dim));
  for (auto& cb : layers_) std::fill(cb.usage.begin(), cb.usage.end(), 2.0f * options_.dead_threshold);
}

int ResidualVQ::bits_per_index() const { return std::countr_zero(static_cast<unsigned>(codebook_size_)); }

RvqQuantized ResidualVQ::quantize(const Tensor& y, int n_q) const {
  if (!initialized_) throw std::logic_error("rvq: codebooks are not initialised");
  if (n_q < 1 || n_q > num_layers()) {
    throw std::invalid_argument("rvq: n_q=" + std::to_string(n_q) + " outside [1, " + std::to_string(num_layers()) +
                                "]");
  }
  if (y.ndim() != 2 || y.dim(1) != dim_) {
    throw std::invalid_argument("rvq: expected [S x " + std::to_string(dim_) + "], got " + shape_to_string(y.shape()));
  }
  const std::int64_t S = y.dim(0);
  RvqQuantized out;
  out.indices = IndexMatrix(S, n_q);
  out.quantized = Tensor({S, static_cast<std::int64_t>(dim_)});
  out.layer_inputs.assign(static_cast<std::size_t>(n_q), {});
  out.layer_assignments.assign(static_cast<std::size_t>(n_q), {});

  std::vector<float> residual(y.data().begin(), y.data().end());
  float* q = out.quantized.ptr();
  for (int i = 0; i < n_q; ++i) {
    const Codebook& cb = layers_[static_cast<std::size_t>(i)];
    out.layer_inputs[i] = residual;
    auto& assign = out.layer_assignments[i];
    assign.resize(static_cast<std::size_t>(S));
    for (std::int64_t s = 0; s < S; ++s) {
      float* r = residual.data() + s * dim_;
      const int idx = cb.nearest(r);
      const float* c = cb.vector(idx);
      assign[s] = idx;
      out.indices.at(s, i) = idx;
      for (int j = 0; j < dim_; ++j) {
        q[s * dim_ + j] += c[j];
        r[j] -= c[j];
      }
    }
  }
  return out;
}

Tensor ResidualVQ::decode(const IndexMatrix& indices) const {
  if (indices.num_layers < 1 || indices.num_layers > num_layers()) {
    throw std::invalid_argument("rvq decode: layer count " + std::to_string(indices.num_layers) + " out of range");
  }
  if (indices.frames < 1) throw std::invalid_argument("rvq decode: no frames");
  Tensor out({indices.frames, static_cast<std::int64_t>(dim_)});
  float* q = out.ptr();
  for (int i = 0; i < indices.num_layers; ++i) {
    const Codebook& cb = layers_[static_cast<std::size_t>(i)];
    for (std::int64_t s = 0; s < indices.frames; ++s) {
      const int idx = indices.at(s, i);
      if (idx < 0 || idx >= codebook_size_) {
        throw std::out_of_range("rvq decode: index " + std::to_string(idx) + " outside codebook of " +
                                std::to_string(codebook_size_));
      }
      const float* c = cb.vector(idx);
      for (int j = 0; j < dim_; ++j) q[s * dim_ + j] += c[j];
    }
  }
  return out;
}

std::vector<std::int32_t> lloyd_kmeans(std::span<const float> points, int dim, std::vector<float>& centroids,
                                       int max_iterations, double tolerance, std::mt19937_64& rng) {
  const std::int64_t n = static_cast<std::int64_t>(points.size()) / dim;
  const int k = static_cast<int>(centroids.size() / dim);
  if (n == 0) throw std::invalid_argument("kmeans: no points");
  std::vector<std::int32_t> assign(static_cast<std::size_t>(n), 0);
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  std::vector<double> sums(centroids.size());
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k));
  for (int it = 0; it < max_iterations; ++it) {
    for (std::int64_t p = 0; p < n; ++p) assign[p] = nearest_in(centroids.data(), k, dim, points.data() + p * dim);
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::int64_t p = 0; p < n; ++p) {
      ++counts[assign[p]];
      for (int j = 0; j < dim; ++j) sums[static_cast<std::size_t>(assign[p]) * dim + j] += points[p * dim + j];
    }
    double shift = 0.0, norm = 0.0;
    for (int c = 0; c < k; ++c) {
      float* cv = centroids.data() + static_cast<std::size_t>(c) * dim;
      if (counts[c] == 0) {
        const float* src = points.data() + pick(rng) * dim;
        for (int j = 0; j < dim; ++j) {
          shift += (src[j] - cv[j]) * static_cast<double>(src[j] - cv[j]);
          norm += static_cast<double>(cv[j]) * cv[j];
          cv[j] = src[j];
        }
        continue;
      }
      for (int j = 0; j < dim; ++j) {
        const float nv = static_cast<float>(sums[static_cast<std::size_t>(c) * dim + j] / counts[c]);
        shift += (nv - cv[j]) * static_cast<double>(nv - cv[j]);
        norm += static_cast<double>(cv[j]) * cv[j];
        cv[j] = nv;
      }
    }
    if (std::sqrt(shift) <= tolerance * std::sqrt(norm)) break;
  }
  for (std::int64_t p = 0; p < n; ++p) assign[p] = nearest_in(centroids.data(), k, dim, points.data() + p * dim);
  return assign;
}

void ResidualVQ::kmeans_init(const Tensor& y, std::mt19937_64& rng) {
  if (y.ndim() != 2 || y.dim(1) != dim_) throw std::invalid_argument("kmeans_init: expected [S x D] embeddings");
  const std::int64_t n = y.dim(0);
  if (n == 0) throw std::invalid_argument("kmeans_init: empty batch");
  std::vector<float> residual(y.data().begin(), y.data().end());
  for (auto& cb : layers_) {
    // Initial centroids: distinct frames when there are enough, otherwise
    // frames drawn with replacement.
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
    for (int c = 0; c < codebook_size_; ++c) {
      const std::int64_t src = c < n ? order[c] : pick(rng);
      std::copy_n(residual.data() + src * dim_, dim_, cb.vector(c));
    }
    const auto assign =
        lloyd_kmeans(residual, dim_, cb.vectors, options_.kmeans_iterations, options_.kmeans_tolerance, rng);

    std::fill(cb.ema_count.begin(), cb.ema_count.end(), 0.0f);
    std::fill(cb.ema_sum.begin(), cb.ema_sum.end(), 0.0f);
    for (std::int64_t p = 0; p < n; ++p) {
      const int a = assign[p];
      cb.ema_count[a] += 1.0f;
    }
    for (int c = 0; c < codebook_size_; ++c) {
      for (int j = 0; j < dim_; ++j) cb.ema_sum[static_cast<std::size_t>(c) * dim_ + j] = cb.vector(c)[j] * cb.ema_count[c];
    }
    std::fill(cb.usage.begin(), cb.usage.end(), 2.0f * options_.dead_threshold);

    for (std::int64_t p = 0; p < n; ++p) {
      const float* c = cb.vector(cb.nearest(residual.data() + p * dim_));
      for (int j = 0; j < dim_; ++j) residual[p * dim_ + j] -= c[j];
    }
  }
  initialized_ = true;
}

void ResidualVQ::ema_update(int layer, std::span<const float> inputs, std::span<const std::int32_t> assignments) {
  Codebook& cb = layers_.at(static_cast<std::size_t>(layer));
  const std::size_t n = assignments.size();
  if (inputs.size() != n * static_cast<std::size_t>(dim_)) throw std::invalid_argument("ema_update: size mismatch");
  std::vector<double> counts(static_cast<std::size_t>(codebook_size_), 0.0);
  std::vector<double> sums(cb.ema_sum.size(), 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const int a = assignments[p];
    counts[a] += 1.0;
    for (int j = 0; j < dim_; ++j) sums[static_cast<std::size_t>(a) * dim_ + j] += inputs[p * dim_ + j];
  }
  const double d = options_.decay;
  const double ud = options_.usage_decay;
  for (int c = 0; c < codebook_size_; ++c) {
    cb.ema_count[c] = static_cast<float>(d * cb.ema_count[c] + (1.0 - d) * counts[c]);
    cb.usage[c] = static_cast<float>(ud * cb.usage[c] + (1.0 - ud) * counts[c]);
    float* es = cb.ema_sum.data() + static_cast<std::size_t>(c) * dim_;
    const double* bs = sums.data() + static_cast<std::size_t>(c) * dim_;
    for (int j = 0; j < dim_; ++j) es[j] = static_cast<float>(d * es[j] + (1.0 - d) * bs[j]);
    // Vectors without assignments keep their value; only their statistics decay.
    if (counts[c] > 0.0) {
      const double denom = static_cast<double>(cb.ema_count[c]) + options_.epsilon;
      float* v = cb.vector(c);
      for (int j = 0; j < dim_; ++j) v[j] = static_cast<float>(es[j] / denom);
    }
  }
}

int ResidualVQ::replace_dead(int layer, std::span<const float> inputs, std::mt19937_64& rng) {
  Codebook& cb = layers_.at(static_cast<std::size_t>(layer));
  const std::int64_t n = static_cast<std::int64_t>(inputs.size()) / dim_;
  if (n == 0) throw std::invalid_argument("replace_dead: empty batch");
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  int replaced = 0;
  for (int c = 0; c < codebook_size_; ++c) {
    if (cb.usage[c] >= options_.dead_threshold) continue;
    const float* src = inputs.data() + pick(rng) * dim_;
    std::copy_n(src, dim_, cb.vector(c));
    cb.usage[c] = 2.0f * options_.dead_threshold;
    cb.ema_count[c] = 0.0f;
    std::fill_n(cb.ema_sum.begin() + static_cast<std::ptrdiff_t>(c) * dim_, dim_, 0.0f);
    ++replaced;
  }
  return replaced;
}

int sample_nq(std::mt19937_64& rng, int max_layers, bool dropout) {
  if (max_layers < 1) throw std::invalid_argument("sample_nq: need at least one layer");
  if (!dropout) return max_layers;
  return std::uniform_int_distribution<int>(1, max_layers)(rng);
}

}  // namespace soundstream
