#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "soundstream/tensor.hpp"

namespace soundstream {

struct RvqOptions {
  float decay = 0.99f;         // codebook EMA
  float epsilon = 1e-5f;       // added to the EMA count before dividing
  float usage_decay = 0.99f;   // assignment-count EMA used for dead-vector detection
  float dead_threshold = 2.0f;
  int kmeans_iterations = 10;
  double kmeans_tolerance = 1e-4;  // relative centroid shift
};

// Indices of S frames by n_q layers, frame-major.
struct IndexMatrix {
  std::int64_t frames = 0;
  int num_layers = 0;
  std::vector<std::int32_t> data;

  IndexMatrix() = default;
  IndexMatrix(std::int64_t frames, int num_layers)
      : frames(frames), num_layers(num_layers), data(static_cast<std::size_t>(frames * num_layers), 0) {}

  std::int32_t& at(std::int64_t frame, int layer) { return data[static_cast<std::size_t>(frame * num_layers + layer)]; }
  std::int32_t at(std::int64_t frame, int layer) const {
    return data[static_cast<std::size_t>(frame * num_layers + layer)];
  }
  // First `n` layers of every frame.
  IndexMatrix prefix(int n) const;
  bool operator==(const IndexMatrix&) const = default;
};

class Codebook {
 public:
  Codebook() = default;
  Codebook(int size, int dim);

  int size() const { return size_; }
  int dim() const { return dim_; }

  // Index of the nearest vector in squared L2 distance, evaluated in double;
  // ties resolve to the lowest index.
  int nearest(const float* v) const;
  const float* vector(int i) const { return vectors.data() + static_cast<std::size_t>(i) * dim_; }
  float* vector(int i) { return vectors.data() + static_cast<std::size_t>(i) * dim_; }

  std::vector<float> vectors;    // [size x dim]
  std::vector<float> ema_count;  // [size]
  std::vector<float> ema_sum;    // [size x dim]
  std::vector<float> usage;      // [size]

 private:
  int size_ = 0;
  int dim_ = 0;
};

// Result of quantizing S frames: the chosen indices, the quantized
// embeddings, and each layer's input (the running residual) kept for the
// codebook update.
struct RvqQuantized {
  IndexMatrix indices;
  Tensor quantized;  // [S x D]
  // layer_inputs[i] holds frames * D values for every frame that reached layer i.
  std::vector<std::vector<float>> layer_inputs;
  std::vector<std::vector<std::int32_t>> layer_assignments;
};

class ResidualVQ {
 public:
  ResidualVQ() = default;
  ResidualVQ(int num_layers, int codebook_size, int dim, RvqOptions options = {});

  int num_layers() const { return static_cast<int>(layers_.size()); }
  int codebook_size() const { return codebook_size_; }
  int dim() const { return dim_; }
  int bits_per_index() const;
  const RvqOptions& options() const { return options_; }

  bool initialized() const { return initialized_; }
  void set_initialized(bool on) { initialized_ = on; }

  Codebook& layer(int i) { return layers_.at(static_cast<std::size_t>(i)); }
  const Codebook& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }

  // y: [S x D]. Each layer quantizes the residual left by the previous ones.
  RvqQuantized quantize(const Tensor& y, int n_q) const;
  IndexMatrix encode(const Tensor& y, int n_q) const { return quantize(y, n_q).indices; }
  // Sum of the selected codewords, accumulated layer by layer in the same
  // order as quantize(), so the result is bit-identical to its `quantized`.
  Tensor decode(const IndexMatrix& indices) const;

  // Lloyd k-means on the frames of `y` ([S x D]), layer by layer, each layer
  // fitted to the residuals of the already initialised layers.
  void kmeans_init(const Tensor& y, std::mt19937_64& rng);

  // EMA statistics update for one layer from its inputs and assignments.
  void ema_update(int layer, std::span<const float> inputs, std::span<const std::int32_t> assignments);
  // Reseeds every vector whose usage fell below the threshold with a frame
  // drawn from `inputs`. Returns the number of replaced vectors.
  int replace_dead(int layer, std::span<const float> inputs, std::mt19937_64& rng);

 private:
  std::vector<Codebook> layers_;
  int codebook_size_ = 0;
  int dim_ = 0;
  RvqOptions options_;
  bool initialized_ = false;
};

// Lloyd's algorithm on `points` (n x dim) starting from `centroids`
// (k x dim, updated in place). Empty clusters are reseeded from random
// points. Returns the final assignment of every point.
std::vector<std::int32_t> lloyd_kmeans(std::span<const float> points, int dim, std::vector<float>& centroids,
                                       int max_iterations, double tolerance, std::mt19937_64& rng);

// Number of active quantizer layers for one training example.
int sample_nq(std::mt19937_64& rng, int max_layers, bool dropout);

}  // namespace soundstream
