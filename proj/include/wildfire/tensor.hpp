#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wildfire/error.hpp"

namespace wildfire {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

/// Dense row-major float32 array with shared ownership. Copies of a Tensor
/// alias the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float* ptr() { return impl_->data.data(); }
  const float* ptr() const { return impl_->data.data(); }
  float item() const;
  float operator[](Index i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true);

  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  /// Gradient buffer; zeros of the right shape when none was accumulated.
  std::vector<float> grad() const;
  std::span<float> grad_buffer();
  void zero_grad();

  Tensor clone() const;
  /// Deep copy that does not require grad.
  Tensor detach() const;
  /// Untracked copy with new extents (see ops::reshape for the recorded
  /// variant). Product of extents must match.
  Tensor view(Shape shape) const;

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared_impl() const noexcept { return impl_; }
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// Allocates (zeroed) and returns the gradient buffer of an impl.
std::vector<float>& grad_of(TensorImpl& t);

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so reverse iteration is a valid topological order for backward.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);

  /// Reverse sweep from a scalar loss. Without `retain` the saved
  /// activations are released and a second call throws.
  void backward(const Tensor& loss, bool retain = false);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  void clear();

 private:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for ops on this thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

/// Accumulates estimated FLOPs of ops executed on this thread while alive.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t total() const noexcept { return total_; }
  void add(std::uint64_t flops) noexcept { total_ += flops; }

 private:
  std::uint64_t total_ = 0;
  FlopCounter* previous_;
};

void count_flops(std::uint64_t flops) noexcept;

}  // namespace wildfire
