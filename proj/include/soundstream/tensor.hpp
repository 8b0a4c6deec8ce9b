#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace soundstream {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense row-major float32 array with an optional gradient buffer.
//
// Tensor is a handle: copies share storage. Parameters are shared between a
// model and the tape that records operations on them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from(std::initializer_list<float> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const;
  std::int64_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float* ptr();
  const float* ptr() const;
  float item() const;
  float operator[](std::int64_t i) const { return data()[static_cast<std::size_t>(i)]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  // Allocates a zero gradient on first use. Gradients are accumulators
  // reachable through any handle, so this is available on const handles.
  std::span<float> grad() const;
  void zero_grad() const;

  // Deep copy of the values; the result does not track gradients.
  Tensor detach() const;
  // Copy of the values under a new shape of equal size; not recorded.
  Tensor reshaped(Shape shape) const;

  std::uint64_t id() const;
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable operations.
//
// Every op executed while a TapeScope is active, with at least one input that
// requires a gradient, appends a node. Nodes are topologically ordered by
// construction: an op can only consume tensors that already exist.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_fn);

  // Runs reverse-mode accumulation from a scalar loss. A tape can be
  // consumed once; call clear() to reuse it.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void clear();

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on this thread (inference inside a training step).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// True when an op over `inputs` must be recorded on the active tape.
bool should_record(std::initializer_list<const Tensor*> inputs);

void backward(const Tensor& loss, Tape& tape);

// Debug builds abort on NaN/Inf in forward or backward values.
void debug_check_finite(std::span<const float> values, const char* where);

}  // namespace soundstream
