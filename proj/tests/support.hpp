#pragma once

// Shared helpers for the unit and acceptance tests: independent naive-loop
// oracles, random tensors and a central finite-difference gradient check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "lmda/tensor.hpp"

namespace lmda::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = n(rng);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den == 0.0 ? 0.0 : std::sqrt(num) / den;
}

/// Direct NCHW cross-correlation with zero padding, written independently of
/// the library kernel.
inline std::vector<double> naive_conv2d(const Tensor& in, const Tensor& k, std::size_t groups,
                                        std::size_t ph, std::size_t pw) {
  const auto B = in.dim(0), H = in.dim(2), W = in.dim(3);
  const auto Dout = k.dim(0), Dg = k.dim(1), Kh = k.dim(2), Kw = k.dim(3);
  const auto Ho = H + 2 * ph - Kh + 1, Wo = W + 2 * pw - Kw + 1;
  const auto out_per_group = Dout / groups;
  std::vector<double> out(B * Dout * Ho * Wo, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Dout; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x) {
          double acc = 0.0;
          const std::size_t g = o / out_per_group;
          for (std::size_t i = 0; i < Dg; ++i)
            for (std::size_t u = 0; u < Kh; ++u)
              for (std::size_t v = 0; v < Kw; ++v) {
                const long yy = static_cast<long>(y + u) - static_cast<long>(ph);
                const long xx = static_cast<long>(x + v) - static_cast<long>(pw);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
                  continue;
                acc += in.at({b, g * Dg + i, static_cast<std::size_t>(yy),
                              static_cast<std::size_t>(xx)}) *
                       k.at({o, i, u, v});
              }
          out[((b * Dout + o) * Ho + y) * Wo + x] = acc;
        }
  return out;
}

inline std::vector<double> naive_channel_contract(const Tensor& x, const Tensor& w) {
  const auto B = x.dim(0), Dx = x.dim(1), C = x.dim(2), T = x.dim(3), H = w.dim(0);
  std::vector<double> out(B * H * C * T, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) {
          double acc = 0.0;
          for (std::size_t d = 0; d < Dx; ++d) acc += x.at({b, d, c, t}) * w.at({h, d, c});
          out[((b * H + h) * C + c) * T + t] = acc;
        }
  return out;
}

/// Analytic gradient of `loss_fn` with respect to `leaf` (recorded on a fresh
/// tape) and its central finite-difference estimate.
struct GradPair {
  std::vector<double> analytic;
  std::vector<double> numeric;
};

inline GradPair grad_check(Tensor leaf, const std::function<Tensor()>& loss_fn,
                           double h = 1e-6) {
  GradPair out;
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  auto g = leaf.grad();
  out.analytic.assign(g.begin(), g.end());
  auto values = leaf.mutable_data();
  out.numeric.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss_fn().item();
    values[i] = saved - h;
    const double down = loss_fn().item();
    values[i] = saved;
    out.numeric[i] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace lmda::testing
