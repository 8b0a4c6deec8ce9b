#include "soundstream/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace soundstream {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
};

namespace {
std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<float> data, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}
}  // namespace

}  // namespace detail

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : impl_(detail::make_impl(shape, std::vector<float>(static_cast<std::size_t>(std::max<std::int64_t>(shape_numel(shape), 0))),
                              requires_grad)) {}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : impl_(detail::make_impl(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::from(std::initializer_list<float> values, bool requires_grad) {
  return Tensor({static_cast<std::int64_t>(values.size())}, std::vector<float>(values), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = impl_->shape;
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw std::out_of_range("tensor axis out of range");
  return s[static_cast<std::size_t>(axis)];
}

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<float> Tensor::data() { return impl_->data; }
std::span<const float> Tensor::data() const { return impl_->data; }
float* Tensor::ptr() { return impl_->data.data(); }
const float* Tensor::ptr() const { return impl_->data.data(); }

float Tensor::item() const {
  if (impl_->data.size() != 1) throw std::logic_error("item() on non-scalar tensor " + shape_to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<float> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + shape_to_string(this->shape()) + " to " + shape_to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>(*impl_);
  impl->shape = std::move(shape);
  impl->grad.clear();
  impl->requires_grad = false;
  impl->id = detail::g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(impl));
}

std::uint64_t Tensor::id() const { return impl_ ? impl_->id : 0; }

// --- Tape -------------------------------------------------------------------

namespace {
thread_local Tape* t_active_tape = nullptr;
}

Tape* active_tape() { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (t_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_fn) {
  if (consumed_) throw std::logic_error("recording on a consumed tape; call clear() first");
  for (const auto& in : inputs) {
    if (in.defined() && in.id() >= output.id()) {
      throw std::logic_error("tape cycle: op input was created after its output");
    }
  }
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("tape already consumed by a previous backward pass");
  if (!loss.defined() || loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
  if (!loss.requires_grad()) throw std::invalid_argument("loss does not depend on any parameter");

  Tensor root = loss;
  root.grad()[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on a path to the loss
    it->backward_fn();
#ifndef NDEBUG
    for (auto& in : it->inputs) {
      if (in.defined() && in.has_grad()) debug_check_finite(in.grad(), "backward");
    }
#endif
  }
  consumed_ = true;
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

void debug_check_finite(std::span<const float> values, const char* where) {
#ifndef NDEBUG
  for (float v : values) {
    if (!std::isfinite(v)) {
      std::fprintf(stderr, "non-finite value in %s\n", where);
      std::abort();
    }
  }
#else
  (void)values;
  (void)where;
#endif
}

}  // namespace soundstream
