#include "wildfire/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace wildfire {

Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw DimensionError("extent of axis " + std::to_string(i) + " must be positive, got " +
                           shape_str(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  impl_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<TensorImpl>()) {
  check_shape(shape);
  if (numel_of(shape) != static_cast<Index>(values.size())) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Index Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(r));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::vector<float> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<float>(impl_->data.size(), 0.0f);
  return impl_->grad;
}

std::span<float> Tensor::grad_buffer() { return grad_of(*impl_); }

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  auto copy = std::make_shared<TensorImpl>(*impl_);
  return Tensor(std::move(copy));
}

Tensor Tensor::detach() const {
  auto copy = std::make_shared<TensorImpl>();
  copy->shape = impl_->shape;
  copy->data = impl_->data;
  return Tensor(std::move(copy));
}

Tensor Tensor::view(Shape shape) const {
  check_shape(shape);
  if (numel_of(shape) != numel()) {
    throw DimensionError("cannot view " + shape_str(this->shape()) + " as " + shape_str(shape));
  }
  auto copy = std::make_shared<TensorImpl>();
  copy->shape = std::move(shape);
  copy->data = impl_->data;
  return Tensor(std::move(copy));
}

std::vector<float>& grad_of(TensorImpl& t) {
  if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0f);
  return t.grad;
}

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local FlopCounter* g_flop_counter = nullptr;
}  // namespace

Tape* active_tape() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

FlopCounter::FlopCounter() : previous_(g_flop_counter) { g_flop_counter = this; }
FlopCounter::~FlopCounter() { g_flop_counter = previous_; }

void count_flops(std::uint64_t flops) noexcept {
  if (g_flop_counter) g_flop_counter->add(flops);
}

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  if (consumed_) throw AutodiffError("cannot record onto a consumed tape");
  Node node;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.shared_impl());
  node.output = output.shared_impl();
  node.fn = std::move(fn);
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss, bool retain) {
  if (consumed_) {
    throw AutodiffError("backward called twice on a tape that was not retained");
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw AutodiffError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                   [&](const Node& n) { return n.output.get() == loss.impl(); });
  if (!on_tape) throw AutodiffError("loss was not produced by an op recorded on this tape");

  // Non-leaf gradients are per-sweep; leaves accumulate across sweeps.
  for (auto& n : nodes_) std::fill(n.output->grad.begin(), n.output->grad.end(), 0.0f);
  grad_of(*loss.impl())[0] = 1.0f;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn();
  }

  if (!retain) {
    for (auto& n : nodes_) {
      n.fn = nullptr;
      n.inputs.clear();
    }
    consumed_ = true;
  }
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace wildfire
