#pragma once

// Dense n-dimensional 64-bit tensors with tape-based reverse-mode
// differentiation. Only the operations the LMDA network needs are provided.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmda {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);
/// Row-major strides.
std::vector<std::size_t> shape_strides(const Shape& shape);

namespace detail {
struct TensorStorage;
}

/// Handle to shared tensor storage. Copies alias the same buffer; use
/// clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated as zeros on first access.
  std::span<double> grad_buffer() const;
  void zero_grad();
  void clear_grad();

  /// Deep copy of the values; the copy does not require grad.
  Tensor clone() const;
  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }
  bool defined() const { return impl_ != nullptr; }

 private:
  std::shared_ptr<detail::TensorStorage> impl_;
};

/// Ordered record of differentiable operations. backward() replays the
/// rules in exact reverse recording order.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule);
  std::size_t size() const { return entries_.size(); }
  bool is_recorded(const Tensor& t) const;
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  /// Intermediate gradients are reset on each call; leaf gradients
  /// accumulate across calls until zero_grad().
  void backward(const Tensor& loss);

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule rule;
  };
  std::vector<Entry> entries_;
};

/// Installs a tape as the recording target of the current thread for the
/// lifetime of the scope. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// backward() on the active tape.
void backward(const Tensor& loss);

/// True when an op over `inputs` must be recorded: a tape is active and at
/// least one input requires grad.
bool should_record(std::initializer_list<const Tensor*> inputs);

// ---------------------------------------------------------------------------
// Differentiable operations.

/// 2-D cross-correlation, NCHW, grouped, zero padding, stride 1.
/// kernel: [Dout, Din/groups, Kh, Kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t groups = 1,
              std::size_t pad_h = 0, std::size_t pad_w = 0);

/// out[b,h,c,t] = sum_d x[b,d,c,t] * w[h,d,c]
Tensor channel_contract(const Tensor& x, const Tensor& w);

Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

/// Non-overlapping average pooling along the last axis; the remainder
/// T mod k is discarded.
Tensor avg_pool_time(const Tensor& x, std::size_t k);

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = true);
Tensor sum(const Tensor& x);
Tensor transpose_axes(const Tensor& x, std::size_t a, std::size_t b);
Tensor reshape(const Tensor& x, Shape shape);
/// Tiles an extent-1 axis n times.
Tensor repeat_axis(const Tensor& x, std::size_t axis, std::size_t n);
/// Extends `axis` by copies of its first and last slices.
Tensor pad_replicate(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after);

/// Elementwise product. `y` may have extent 1 on any axis where `x` does
/// not; it is broadcast along those axes.
Tensor hadamard(const Tensor& x, const Tensor& y);
Tensor add(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double factor);

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [B,I] (or [I]), weight [O,I], bias [O] -> x W^T + b.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization over axis 1 of a rank-4 tensor. In training mode the
/// batch statistics are used and the running statistics are updated
/// (unbiased variance); otherwise the running statistics are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training);

}  // namespace lmda
