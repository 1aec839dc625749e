#include "lmda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace lmda {

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<std::size_t> shape_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

Tensor::Tensor() : Tensor(Shape{}, 0.0) {}

Tensor::Tensor(Shape shape, double fill)
    : impl_(std::make_shared<detail::TensorStorage>()) {
  impl_->data.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorStorage>()) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape) + " holds " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return impl_->data[0];
}

namespace {
std::size_t flat_index(const Shape& shape,
                       std::initializer_list<std::size_t> index) {
  if (index.size() != shape.size()) {
    throw ShapeError("index rank mismatch for " + shape_to_string(shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape[axis]) {
      throw ShapeError("index out of range on axis " + std::to_string(axis));
    }
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}
}  // namespace

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return impl_->data[flat_index(impl_->shape, index)];
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return impl_->data[flat_index(impl_->shape, index)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output,
                  BackwardRule rule) {
  entries_.push_back({std::move(inputs), std::move(output), std::move(rule)});
}

bool Tape::is_recorded(const Tensor& t) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.output.is_same(t); });
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_to_string(loss.shape()));
  }
  if (!is_recorded(loss)) {
    throw std::logic_error("backward(): loss was not recorded on this tape");
  }
  for (auto& e : entries_) e.output.clear_grad();
  Tensor seed = loss;
  seed.grad_buffer()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->rule();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!g_active_tape) throw std::logic_error("backward(): no active tape");
  g_active_tape->backward(loss);
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// ---------------------------------------------------------------------------
// Operations

namespace {

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op,
                  const char* name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + name + " must have rank " +
                     std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

Tensor finish(Tensor out, std::vector<Tensor> inputs, Tape::BackwardRule rule,
              const char* op) {
  check_finite(out, op);
  bool record = false;
  if (g_active_tape) {
    for (const auto& in : inputs) record = record || in.requires_grad();
  }
  if (record) {
    out.set_requires_grad(true);
    g_active_tape->record(std::move(inputs), out, std::move(rule));
  }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t groups,
              std::size_t pad_h, std::size_t pad_w) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const std::size_t B = input.dim(0), Din = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t Dout = kernel.dim(0), Cg = kernel.dim(1),
                    Kh = kernel.dim(2), Kw = kernel.dim(3);
  if (groups == 0 || Din % groups != 0) {
    throw ShapeError("conv2d: input depth " + std::to_string(Din) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (Dout % groups != 0) {
    throw ShapeError("conv2d: output depth " + std::to_string(Dout) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (Cg != Din / groups) {
    throw ShapeError("conv2d: kernel input depth " + std::to_string(Cg) +
                     " != input depth / groups = " +
                     std::to_string(Din / groups));
  }
  if (Kh > H + 2 * pad_h) {
    throw ShapeError("conv2d: kernel height " + std::to_string(Kh) +
                     " exceeds padded input height " +
                     std::to_string(H + 2 * pad_h));
  }
  if (Kw > W + 2 * pad_w) {
    throw ShapeError("conv2d: kernel width " + std::to_string(Kw) +
                     " exceeds padded input width " +
                     std::to_string(W + 2 * pad_w));
  }
  const std::size_t Ho = H + 2 * pad_h - Kh + 1;
  const std::size_t Wo = W + 2 * pad_w - Kw + 1;
  const std::size_t out_per_group = Dout / groups;

  // Visits every (output row, input row, tap) triple with the valid output
  // column range for that tap.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t oc = 0; oc < Dout; ++oc) {
        const std::size_t g = oc / out_per_group;
        for (std::size_t icg = 0; icg < Cg; ++icg) {
          const std::size_t ic = g * Cg + icg;
          for (std::size_t kh = 0; kh < Kh; ++kh) {
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) -
                                        static_cast<std::ptrdiff_t>(pad_h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              const std::size_t out_off = ((b * Dout + oc) * Ho + oh) * Wo;
              const std::size_t in_off =
                  ((b * Din + ic) * H + static_cast<std::size_t>(ih)) * W;
              for (std::size_t kw = 0; kw < Kw; ++kw) {
                const std::size_t k_idx = ((oc * Cg + icg) * Kh + kh) * Kw + kw;
                // iw = ow + kw - pad_w must lie in [0, W)
                const std::size_t lo = kw < pad_w ? pad_w - kw : 0;
                const std::size_t hi = std::min(Wo, W + pad_w - kw);
                if (lo >= hi) continue;
                fn(out_off, in_off + lo + kw - pad_w, k_idx, lo, hi - lo);
              }
            }
          }
        }
      }
    }
  };

  Tensor out(Shape{B, Dout, Ho, Wo});
  {
    const double* in = input.data().data();
    const double* k = kernel.data().data();
    double* o = out.mutable_data().data();
    for_each_tap([&](std::size_t out_off, std::size_t in_start,
                     std::size_t k_idx, std::size_t lo, std::size_t n) {
      const double w = k[k_idx];
      double* orow = o + out_off + lo;
      const double* irow = in + in_start;
      for (std::size_t i = 0; i < n; ++i) orow[i] += w * irow[i];
    });
  }
  return finish(
      out, {input, kernel},
      [input, kernel, out, for_each_tap]() mutable {
        const double* go = out.grad().data();
        const double* in = input.data().data();
        const double* k = kernel.data().data();
        double* gi = input.requires_grad() ? input.grad_buffer().data() : nullptr;
        double* gk =
            kernel.requires_grad() ? kernel.grad_buffer().data() : nullptr;
        for_each_tap([&](std::size_t out_off, std::size_t in_start,
                         std::size_t k_idx, std::size_t lo, std::size_t n) {
          const double* grow = go + out_off + lo;
          if (gi) {
            const double w = k[k_idx];
            double* girow = gi + in_start;
            for (std::size_t i = 0; i < n; ++i) girow[i] += w * grow[i];
          }
          if (gk) {
            const double* irow = in + in_start;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (std::size_t i = 0; i < n; ++i) acc += grow[i] * irow[i];
            gk[k_idx] += acc;
          }
        });
      },
      "conv2d");
}

Tensor channel_contract(const Tensor& x, const Tensor& w) {
  require_rank(x, 4, "channel_contract", "x");
  require_rank(w, 3, "channel_contract", "w");
  const std::size_t B = x.dim(0), Dx = x.dim(1), C = x.dim(2), T = x.dim(3);
  const std::size_t H = w.dim(0);
  if (w.dim(1) != Dx) {
    throw ShapeError("channel_contract: weight depth " +
                     std::to_string(w.dim(1)) + " != input depth " +
                     std::to_string(Dx));
  }
  if (w.dim(2) != C) {
    throw ShapeError("channel_contract: weight channels " +
                     std::to_string(w.dim(2)) + " != input channels " +
                     std::to_string(C));
  }
  Tensor out(Shape{B, H, C, T});
  {
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* od = out.mutable_data().data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t d = 0; d < Dx; ++d)
          for (std::size_t c = 0; c < C; ++c) {
            const double wv = wd[(h * Dx + d) * C + c];
            const double* xr = xd + ((b * Dx + d) * C + c) * T;
            double* orow = od + ((b * H + h) * C + c) * T;
            for (std::size_t t = 0; t < T; ++t) orow[t] += wv * xr[t];
          }
  }
  return finish(
      out, {x, w},
      [x, w, out, B, Dx, C, T, H]() mutable {
        const double* go = out.grad().data();
        const double* xd = x.data().data();
        const double* wd = w.data().data();
        double* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
        double* gw = w.requires_grad() ? w.grad_buffer().data() : nullptr;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t d = 0; d < Dx; ++d)
              for (std::size_t c = 0; c < C; ++c) {
                const std::size_t widx = (h * Dx + d) * C + c;
                const double* grow = go + ((b * H + h) * C + c) * T;
                const std::size_t xoff = ((b * Dx + d) * C + c) * T;
                if (gx) {
                  for (std::size_t t = 0; t < T; ++t)
                    gx[xoff + t] += wd[widx] * grow[t];
                }
                if (gw) {
                  double acc = 0.0;
                  for (std::size_t t = 0; t < T; ++t)
                    acc += xd[xoff + t] * grow[t];
                  gw[widx] += acc;
                }
              }
      },
      "channel_contract");
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  const auto xs = x.data();
  auto os = out.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    os[i] = 0.5 * xs[i] * (1.0 + std::erf(xs[i] / std::numbers::sqrt2));
  }
  return finish(
      out, {x},
      [x, out]() mutable {
        const auto xs = x.data();
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < xs.size(); ++i) {
          const double v = xs[i];
          const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
          gx[i] += go[i] * (cdf + v * pdf);
        }
      },
      "gelu");
}

namespace {
// Splits `shape` around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}
}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_to_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  const auto xs = x.data();
  auto os = out.mutable_data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xs[base];
      for (std::size_t j = 1; j < s.n; ++j)
        mx = std::max(mx, xs[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xs[base + j * s.inner] - mx);
        os[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) os[base + j * s.inner] /= z;
    }
  }
  return finish(
      out, {x},
      [x, out, s]() mutable {
        const auto ys = out.data();
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.n * s.inner + in;
            double dot = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) {
              const std::size_t i = base + j * s.inner;
              dot += go[i] * ys[i];
            }
            for (std::size_t j = 0; j < s.n; ++j) {
              const std::size_t i = base + j * s.inner;
              gx[i] += ys[i] * (go[i] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor avg_pool_time(const Tensor& x, std::size_t k) {
  if (x.rank() == 0) throw ShapeError("avg_pool_time: scalar input");
  const std::size_t T = x.shape().back();
  if (k == 0 || k > T) {
    throw ShapeError("avg_pool_time: kernel " + std::to_string(k) +
                     " invalid for time extent " + std::to_string(T));
  }
  const std::size_t To = T / k;
  const std::size_t rows = x.size() / T;
  Shape oshape = x.shape();
  oshape.back() = To;
  Tensor out(oshape);
  const auto xs = x.data();
  auto os = out.mutable_data();
  const double inv = 1.0 / static_cast<double>(k);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < To; ++t) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += xs[r * T + t * k + j];
      os[r * To + t] = acc * inv;
    }
  }
  return finish(
      out, {x},
      [x, out, rows, T, To, k, inv]() mutable {
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t t = 0; t < To; ++t)
            for (std::size_t j = 0; j < k; ++j)
              gx[r * T + t * k + j] += go[r * To + t] * inv;
      },
      "avg_pool_time");
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  if (axis >= x.rank()) {
    throw ShapeError("mean_axis: axis " + std::to_string(axis) +
                     " out of range for " + shape_to_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape oshape = x.shape();
  if (keepdim) {
    oshape[axis] = 1;
  } else {
    oshape.erase(oshape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor out(oshape);
  const auto xs = x.data();
  auto os = out.mutable_data();
  const double inv = 1.0 / static_cast<double>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        os[o * s.inner + in] += xs[(o * s.n + j) * s.inner + in];
  for (double& v : os) v *= inv;
  return finish(
      out, {x},
      [x, out, s, inv]() mutable {
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t j = 0; j < s.n; ++j)
            for (std::size_t in = 0; in < s.inner; ++in)
              gx[(o * s.n + j) * s.inner + in] += go[o * s.inner + in] * inv;
      },
      "mean_axis");
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  return finish(
      out, {x},
      [x, out]() mutable {
        const double g = out.grad()[0];
        for (double& v : x.grad_buffer()) v += g;
      },
      "sum");
}

namespace {
// Maps each flat index of `out_shape` to the flat index of a source tensor
// addressed through `src_strides` (already permuted to output axis order).
template <typename Fn>
void for_each_index(const Shape& out_shape,
                    const std::vector<std::size_t>& src_strides, Fn&& fn) {
  const std::size_t n = shape_size(out_shape);
  const std::size_t rank = out_shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    fn(flat, src);
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      src += src_strides[a];
      if (idx[a] < out_shape[a]) break;
      src -= src_strides[a] * idx[a];
      idx[a] = 0;
    }
  }
}
}  // namespace

Tensor transpose_axes(const Tensor& x, std::size_t a, std::size_t b) {
  if (a >= x.rank() || b >= x.rank()) {
    throw ShapeError("transpose_axes: axes out of range for " +
                     shape_to_string(x.shape()));
  }
  Shape oshape = x.shape();
  std::swap(oshape[a], oshape[b]);
  auto src_strides = shape_strides(x.shape());
  std::swap(src_strides[a], src_strides[b]);
  Tensor out(oshape);
  {
    const auto xs = x.data();
    auto os = out.mutable_data();
    for_each_index(oshape, src_strides,
                   [&](std::size_t o, std::size_t s) { os[o] = xs[s]; });
  }
  return finish(
      out, {x},
      [x, out, oshape, src_strides]() mutable {
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for_each_index(oshape, src_strides,
                       [&](std::size_t o, std::size_t s) { gx[s] += go[o]; });
      },
      "transpose_axes");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) +
                     " as " + shape_to_string(shape));
  }
  Tensor out(std::move(shape),
             std::vector<double>(x.data().begin(), x.data().end()));
  return finish(
      out, {x},
      [x, out]() mutable {
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      },
      "reshape");
}

Tensor repeat_axis(const Tensor& x, std::size_t axis, std::size_t n) {
  if (axis >= x.rank() || x.dim(axis) != 1) {
    throw ShapeError("repeat_axis: axis " + std::to_string(axis) +
                     " must exist with extent 1 in " +
                     shape_to_string(x.shape()));
  }
  Shape oshape = x.shape();
  oshape[axis] = n;
  auto src_strides = shape_strides(x.shape());
  src_strides[axis] = 0;
  Tensor out(oshape);
  {
    const auto xs = x.data();
    auto os = out.mutable_data();
    for_each_index(oshape, src_strides,
                   [&](std::size_t o, std::size_t s) { os[o] = xs[s]; });
  }
  return finish(
      out, {x},
      [x, out, oshape, src_strides]() mutable {
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for_each_index(oshape, src_strides,
                       [&](std::size_t o, std::size_t s) { gx[s] += go[o]; });
      },
      "repeat_axis");
}

Tensor pad_replicate(const Tensor& x, std::size_t axis, std::size_t before,
                     std::size_t after) {
  if (axis >= x.rank() || x.dim(axis) == 0) {
    throw ShapeError("pad_replicate: axis " + std::to_string(axis) +
                     " must exist and be non-empty in " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(axis), m = n + before + after;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  // Source slice for each output slice along the axis.
  std::vector<std::size_t> src(m);
  for (std::size_t i = 0; i < m; ++i) {
    src[i] = i < before ? 0 : std::min(i - before, n - 1);
  }
  Shape oshape = x.shape();
  oshape[axis] = m;
  Tensor out(oshape);
  {
    const auto xs = x.data();
    auto os = out.mutable_data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((o * n + src[i]) * inner), inner,
                    os.begin() + static_cast<std::ptrdiff_t>((o * m + i) * inner));
  }
  return finish(
      out, {x},
      [x, out, src, outer, inner, n, m]() mutable {
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < inner; ++j)
              gx[(o * n + src[i]) * inner + j] += go[(o * m + i) * inner + j];
      },
      "pad_replicate");
}

Tensor hadamard(const Tensor& x, const Tensor& y) {
  if (x.rank() != y.rank()) {
    throw ShapeError("hadamard: rank mismatch " + shape_to_string(x.shape()) +
                     " vs " + shape_to_string(y.shape()));
  }
  auto ystrides = shape_strides(y.shape());
  for (std::size_t a = 0; a < x.rank(); ++a) {
    if (y.dim(a) == x.dim(a)) continue;
    if (y.dim(a) != 1) {
      throw ShapeError("hadamard: dimension " + std::to_string(a) +
                       " mismatch " + shape_to_string(x.shape()) + " vs " +
                       shape_to_string(y.shape()));
    }
    ystrides[a] = 0;
  }
  const Shape oshape = x.shape();
  Tensor out(oshape);
  {
    const auto xs = x.data();
    const auto ys = y.data();
    auto os = out.mutable_data();
    for_each_index(oshape, ystrides, [&](std::size_t o, std::size_t s) {
      os[o] = xs[o] * ys[s];
    });
  }
  return finish(
      out, {x, y},
      [x, y, out, oshape, ystrides]() mutable {
        const auto go = out.grad();
        const auto xs = x.data();
        const auto ys = y.data();
        if (x.requires_grad()) {
          auto gx = x.grad_buffer();
          for_each_index(oshape, ystrides, [&](std::size_t o, std::size_t s) {
            gx[o] += go[o] * ys[s];
          });
        }
        if (y.requires_grad()) {
          auto gy = y.grad_buffer();
          for_each_index(oshape, ystrides, [&](std::size_t o, std::size_t s) {
            gy[s] += go[o] * xs[o];
          });
        }
      },
      "hadamard");
}

Tensor add(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("add: shape mismatch " + shape_to_string(x.shape()) +
                     " vs " + shape_to_string(y.shape()));
  }
  Tensor out(x.shape());
  {
    const auto xs = x.data();
    const auto ys = y.data();
    auto os = out.mutable_data();
    for (std::size_t i = 0; i < os.size(); ++i) os[i] = xs[i] + ys[i];
  }
  return finish(
      out, {x, y},
      [x, y, out]() mutable {
        const auto go = out.grad();
        for (const Tensor* t : {&x, &y}) {
          if (!t->requires_grad()) continue;
          auto g = t->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
        }
      },
      "add");
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape());
  {
    const auto xs = x.data();
    auto os = out.mutable_data();
    for (std::size_t i = 0; i < os.size(); ++i) os[i] = xs[i] * factor;
  }
  return finish(
      out, {x},
      [x, out, factor]() mutable {
        const auto go = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * factor;
      },
      "scale");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K) {
    throw ShapeError("matmul: inner dimension mismatch " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tensor out(Shape{M, N});
  {
    const auto as = a.data();
    const auto bs = b.data();
    auto os = out.mutable_data();
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const double av = as[i * K + k];
        for (std::size_t j = 0; j < N; ++j) os[i * N + j] += av * bs[k * N + j];
      }
  }
  return finish(
      out, {a, b},
      [a, b, out, M, K, N]() mutable {
        const auto go = out.grad();
        const auto as = a.data();
        const auto bs = b.data();
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
              double acc = 0.0;
              for (std::size_t j = 0; j < N; ++j)
                acc += go[i * N + j] * bs[k * N + j];
              ga[i * K + k] += acc;
            }
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
              const double av = as[i * K + k];
              for (std::size_t j = 0; j < N; ++j)
                gb[k * N + j] += av * go[i * N + j];
            }
        }
      },
      "matmul");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("linear: input must have rank 1 or 2, got " +
                     shape_to_string(x.shape()));
  }
  const bool vector_input = x.rank() == 1;
  const std::size_t B = vector_input ? 1 : x.dim(0);
  const std::size_t I = x.shape().back();
  const std::size_t O = weight.dim(0);
  if (weight.dim(1) != I) {
    throw ShapeError("linear: weight input width " +
                     std::to_string(weight.dim(1)) + " != input width " +
                     std::to_string(I));
  }
  if (bias.dim(0) != O) {
    throw ShapeError("linear: bias length " + std::to_string(bias.dim(0)) +
                     " != output width " + std::to_string(O));
  }
  Tensor out(vector_input ? Shape{O} : Shape{B, O});
  {
    const auto xs = x.data();
    const auto ws = weight.data();
    const auto bs = bias.data();
    auto os = out.mutable_data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = bs[o];
        for (std::size_t i = 0; i < I; ++i) acc += xs[b * I + i] * ws[o * I + i];
        os[b * O + o] = acc;
      }
  }
  return finish(
      out, {x, weight, bias},
      [x, weight, bias, out, B, I, O]() mutable {
        const auto go = out.grad();
        const auto xs = x.data();
        const auto ws = weight.data();
        if (x.requires_grad()) {
          auto gx = x.grad_buffer();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
              const double g = go[b * O + o];
              for (std::size_t i = 0; i < I; ++i) gx[b * I + i] += g * ws[o * I + i];
            }
        }
        if (weight.requires_grad()) {
          auto gw = weight.grad_buffer();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
              const double g = go[b * O + o];
              for (std::size_t i = 0; i < I; ++i) gw[o * I + i] += g * xs[b * I + i];
            }
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) gb[o] += go[b * O + o];
        }
      },
      "linear");
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training) {
  require_rank(x, 4, "batch_norm", "x");
  const std::size_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t HW = H * W;
  const Tensor* per_depth[] = {&gamma, &beta, &state.running_mean, &state.running_var};
  for (const Tensor* t : per_depth) {
    if (t->rank() != 1 || t->dim(0) != D) {
      throw ShapeError("batch_norm: per-depth parameter of shape " +
                       shape_to_string(t->shape()) + " does not match depth " +
                       std::to_string(D));
    }
  }
  const double count = static_cast<double>(B * HW);
  std::vector<double> mean(D, 0.0), inv_std(D, 0.0);
  const auto xs = x.data();
  if (training) {
    if (B * HW < 2) {
      throw ShapeError("batch_norm: training mode needs more than one value per depth");
    }
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t d = 0; d < D; ++d) {
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = xs.data() + (b * D + d) * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += row[i];
      }
      const double mu = acc / count;
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = xs.data() + (b * D + d) * HW;
        for (std::size_t i = 0; i < HW; ++i) sq += (row[i] - mu) * (row[i] - mu);
      }
      const double var = sq / count;
      mean[d] = mu;
      inv_std[d] = 1.0 / std::sqrt(var + state.eps);
      rm[d] = (1.0 - state.momentum) * rm[d] + state.momentum * mu;
      rv[d] = (1.0 - state.momentum) * rv[d] +
              state.momentum * (sq / (count - 1.0));
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t d = 0; d < D; ++d) {
      mean[d] = rm[d];
      inv_std[d] = 1.0 / std::sqrt(rv[d] + state.eps);
    }
  }
  Tensor out(x.shape());
  {
    const auto gs = gamma.data();
    const auto bs = beta.data();
    auto os = out.mutable_data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t off = (b * D + d) * HW;
        const double a = gs[d] * inv_std[d];
        const double c = bs[d] - mean[d] * a;
        for (std::size_t i = 0; i < HW; ++i) os[off + i] = xs[off + i] * a + c;
      }
  }
  return finish(
      out, {x, gamma, beta},
      [x, gamma, beta, out, mean, inv_std, training, B, D, HW, count]() mutable {
        const auto go = out.grad();
        const auto xs = x.data();
        const auto gs = gamma.data();
        for (std::size_t d = 0; d < D; ++d) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * D + d) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              const double xhat = (xs[off + i] - mean[d]) * inv_std[d];
              sum_g += go[off + i];
              sum_gx += go[off + i] * xhat;
            }
          }
          if (gamma.requires_grad()) gamma.grad_buffer()[d] += sum_gx;
          if (beta.requires_grad()) beta.grad_buffer()[d] += sum_g;
          if (!x.requires_grad()) continue;
          auto gx = x.grad_buffer();
          const double a = gs[d] * inv_std[d];
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * D + d) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              if (training) {
                const double xhat = (xs[off + i] - mean[d]) * inv_std[d];
                gx[off + i] +=
                    a * (go[off + i] - sum_g / count - xhat * sum_gx / count);
              } else {
                gx[off + i] += a * go[off + i];
              }
            }
          }
        }
      },
      "batch_norm");
}

}  // namespace lmda
