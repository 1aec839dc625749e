#include "lmda/sigproc.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lmda::sigproc {

namespace {

constexpr double kPi = std::numbers::pi;

// Ideal low-pass impulse response at offset m for cutoff fc (cycles/sample).
double sinc_lowpass(double fc, double m) {
  if (m == 0.0) return 2.0 * fc;
  return std::sin(2.0 * kPi * fc * m) / (kPi * m);
}

double channel_mean(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc / static_cast<double>(x.size());
}

}  // namespace

std::vector<double> blackman_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  const double m = static_cast<double>(n - 1);
  for (std::size_t i = 0; i <= (n - 1) / 2; ++i) {
    const double x = static_cast<double>(i);
    const double v = 0.42 - 0.5 * std::cos(2.0 * kPi * x / m) +
                     0.08 * std::cos(4.0 * kPi * x / m);
    w[i] = v;
    w[n - 1 - i] = v;
  }
  // The formula yields tiny negative values at the ends through rounding.
  for (double& v : w) v = std::max(v, 0.0);
  return w;
}

FirFilter design_bandpass(std::size_t order, double low_hz, double high_hz,
                          double fs_hz) {
  if (order == 0 || order % 2 != 0) {
    throw std::invalid_argument("design_bandpass: order must be even and positive, got " +
                                std::to_string(order));
  }
  if (!(fs_hz > 0.0)) {
    throw std::invalid_argument("design_bandpass: sampling rate must be positive");
  }
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0)) {
    throw std::invalid_argument(
        "design_bandpass: need 0 < low < high < fs/2, got low=" +
        std::to_string(low_hz) + " high=" + std::to_string(high_hz) +
        " fs=" + std::to_string(fs_hz));
  }
  const std::size_t n = order + 1;
  const std::size_t half = order / 2;
  const double fl = low_hz / fs_hz;
  const double fh = high_hz / fs_hz;
  const auto window = blackman_window(n);

  FirFilter f;
  f.fs_hz = fs_hz;
  f.low_hz = low_hz;
  f.high_hz = high_hz;
  // Difference of two windowed lowpasses, each scaled to unit DC gain so the
  // bandpass has none. Without the scaling a low edge inside the window's
  // transition width leaks a visible DC term.
  std::vector<double> lo(n), hi(n);
  double sum_lo = 0.0, sum_hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = std::abs(static_cast<double>(i) - static_cast<double>(half));
    lo[i] = sinc_lowpass(fl, m) * window[i];
    hi[i] = sinc_lowpass(fh, m) * window[i];
    sum_lo += lo[i];
    sum_hi += hi[i];
  }
  f.taps.assign(n, 0.0);
  for (std::size_t i = 0; i <= half; ++i) {
    const double v = hi[i] / sum_hi - lo[i] / sum_lo;
    f.taps[i] = v;
    f.taps[order - i] = v;
  }

  const double omega = 2.0 * kPi * std::sqrt(low_hz * high_hz) / fs_hz;
  std::complex<double> response = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    response += f.taps[i] * std::polar(1.0, -omega * static_cast<double>(i));
  }
  const double gain = std::abs(response);
  for (double& t : f.taps) t /= gain;
  return f;
}

TrialSet filter_trials(const TrialSet& x, const FirFilter& f) {
  if (f.fs_hz != x.fs_hz) {
    throw std::invalid_argument("filter_trials: filter designed for " +
                                std::to_string(f.fs_hz) + " Hz, data at " +
                                std::to_string(x.fs_hz) + " Hz");
  }
  TrialSet out = x;
  const std::size_t T = x.n_samples;
  const std::ptrdiff_t delay = static_cast<std::ptrdiff_t>(f.order() / 2);
  const std::ptrdiff_t ntaps = static_cast<std::ptrdiff_t>(f.taps.size());
  for (std::size_t i = 0; i < x.n_trials; ++i) {
    for (std::size_t c = 0; c < x.n_channels; ++c) {
      const auto src = x.channel(i, c);
      auto dst = out.channel(i, c);
      for (std::size_t n = 0; n < T; ++n) {
        // y[n] = sum_k h[k] x[n + delay - k]
        const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(n) + delay;
        const std::ptrdiff_t k_lo =
            std::max<std::ptrdiff_t>(0, center - static_cast<std::ptrdiff_t>(T) + 1);
        const std::ptrdiff_t k_hi = std::min<std::ptrdiff_t>(ntaps - 1, center);
        double acc = 0.0;
        for (std::ptrdiff_t k = k_lo; k <= k_hi; ++k) {
          acc += f.taps[static_cast<std::size_t>(k)] *
                 src[static_cast<std::size_t>(center - k)];
        }
        dst[n] = acc;
      }
    }
  }
  return out;
}

ResampleRatio resample_ratio(double source_hz, double target_hz) {
  auto to_millihertz = [](double hz) {
    const double scaled = hz * 1000.0;
    const double rounded = std::round(scaled);
    if (!(hz > 0.0) || std::abs(scaled - rounded) > 1e-6 || rounded > 1e15) {
      throw std::invalid_argument("resample: rate " + std::to_string(hz) +
                                  " Hz is not a positive multiple of 1 mHz");
    }
    return static_cast<long long>(rounded);
  };
  const long long s = to_millihertz(source_hz);
  const long long t = to_millihertz(target_hz);
  const long long g = std::gcd(s, t);
  return {static_cast<std::size_t>(t / g), static_cast<std::size_t>(s / g)};
}

TrialSet resample(const TrialSet& x, double target_hz) {
  if (target_hz == x.fs_hz) return x;
  if (target_hz > x.fs_hz) {
    throw std::invalid_argument("resample: upsampling from " +
                                std::to_string(x.fs_hz) + " to " +
                                std::to_string(target_hz) +
                                " Hz is not supported");
  }
  const ResampleRatio r = resample_ratio(x.fs_hz, target_hz);
  const std::size_t up = r.up;
  const std::size_t down = r.down;

  // Anti-alias low-pass in the zero-stuffed domain (rate fs * up).
  const double cutoff_hz = 0.9 * std::min(target_hz, x.fs_hz) / 2.0;
  const double fc = cutoff_hz / (x.fs_hz * static_cast<double>(up));
  const std::size_t half = 10 * std::max(up, down);
  const std::size_t ntaps = 2 * half + 1;
  const auto window = blackman_window(ntaps);
  std::vector<double> h(ntaps);
  for (std::size_t k = 0; k < ntaps; ++k) {
    h[k] = sinc_lowpass(fc, static_cast<double>(k) - static_cast<double>(half)) *
           window[k];
  }
  const double dc = std::accumulate(h.begin(), h.end(), 0.0);
  for (double& v : h) v *= static_cast<double>(up) / dc;

  const std::size_t T = x.n_samples;
  const std::size_t To = T * up / down;
  if (To == 0) throw std::invalid_argument("resample: output would be empty");

  TrialSet out = x.empty_like();
  out.n_trials = x.n_trials;
  out.labels = x.labels;
  out.n_samples = To;
  out.fs_hz = target_hz;
  out.data.assign(x.n_trials * x.n_channels * To, 0.0);

  for (std::size_t i = 0; i < x.n_trials; ++i) {
    for (std::size_t c = 0; c < x.n_channels; ++c) {
      const auto src = x.channel(i, c);
      auto dst = out.channel(i, c);
      for (std::size_t m = 0; m < To; ++m) {
        // y[m] = sum_j x[j] h[m*down + half - j*up]
        const std::size_t pos = m * down + half;
        const std::size_t j_hi = std::min(T - 1, pos / up);
        const std::size_t j_lo = pos >= 2 * half ? (pos - 2 * half + up - 1) / up : 0;
        double acc = 0.0;
        for (std::size_t j = j_lo; j <= j_hi; ++j) acc += src[j] * h[pos - j * up];
        dst[m] = acc;
      }
    }
  }
  return out;
}

TrialSet channel_normalize(const TrialSet& x) {
  TrialSet out = x;
  for (std::size_t i = 0; i < x.n_trials; ++i) {
    for (std::size_t c = 0; c < x.n_channels; ++c) {
      auto ch = out.channel(i, c);
      const double mu = channel_mean(ch);
      double sq = 0.0;
      double max_abs = 0.0;
      for (double v : ch) {
        sq += (v - mu) * (v - mu);
        max_abs = std::max(max_abs, std::abs(v));
      }
      const double sd = std::sqrt(sq / static_cast<double>(ch.size()));
      if (!(sd > 1e-12 * max_abs) || sd == 0.0) {
        throw std::invalid_argument("channel_normalize: trial " +
                                    std::to_string(i) + " channel " +
                                    std::to_string(c) + " (" +
                                    x.channel_names[c] + ") has zero variance");
      }
      for (double& v : ch) v = (v - mu) / sd;
    }
  }
  return out;
}

std::vector<double> mean_covariance(const TrialSet& x) {
  const std::size_t C = x.n_channels;
  const std::size_t T = x.n_samples;
  std::vector<double> cov(C * C, 0.0);
  for (std::size_t i = 0; i < x.n_trials; ++i) {
    for (std::size_t a = 0; a < C; ++a) {
      const auto xa = x.channel(i, a);
      for (std::size_t b = a; b < C; ++b) {
        const auto xb = x.channel(i, b);
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t) acc += xa[t] * xb[t];
        cov[a * C + b] += acc / static_cast<double>(T);
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(x.n_trials);
  for (std::size_t a = 0; a < C; ++a) {
    for (std::size_t b = a; b < C; ++b) {
      cov[a * C + b] *= inv_n;
      cov[b * C + a] = cov[a * C + b];
    }
  }
  return cov;
}

AlignmentTransform fit_alignment(const TrialSet& reference) {
  if (reference.n_trials < 1 || reference.n_channels < 1) {
    throw std::invalid_argument("fit_alignment: need at least one trial and channel");
  }
  const std::size_t C = reference.n_channels;
  const auto cov = mean_covariance(reference);
  Eigen::MatrixXd r(C, C);
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = 0; b < C; ++b)
      r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = cov[a * C + b];
  const double trace = r.trace();
  if (!(trace > 0.0) || !std::isfinite(trace)) {
    throw NumericError("fit_alignment: mean covariance has non-positive trace");
  }
  r.diagonal().array() += 1e-10 * trace / static_cast<double>(C);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  if (eig.info() != Eigen::Success) {
    throw NumericError("fit_alignment: eigendecomposition failed");
  }
  const Eigen::VectorXd lambda = eig.eigenvalues();
  if (lambda.minCoeff() <= 0.0) {
    throw NumericError("fit_alignment: mean covariance is singular beyond ridge rescue");
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  const Eigen::MatrixXd inv_sqrt =
      v * lambda.array().rsqrt().matrix().asDiagonal() * v.transpose();

  AlignmentTransform t;
  t.n_channels = C;
  t.inv_sqrt.resize(C * C);
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = 0; b < C; ++b)
      t.inv_sqrt[a * C + b] =
          inv_sqrt(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  return t;
}

TrialSet apply_alignment(const TrialSet& x, const AlignmentTransform& t) {
  if (t.n_channels != x.n_channels) {
    throw std::invalid_argument("apply_alignment: transform has " +
                                std::to_string(t.n_channels) +
                                " channels, data has " +
                                std::to_string(x.n_channels));
  }
  const std::size_t C = x.n_channels;
  const std::size_t T = x.n_samples;
  TrialSet out = x;
  for (std::size_t i = 0; i < x.n_trials; ++i) {
    auto dst = out.trial(i);
    std::fill(dst.begin(), dst.end(), 0.0);
    const auto src = x.trial(i);
    for (std::size_t a = 0; a < C; ++a) {
      double* row = dst.data() + a * T;
      for (std::size_t b = 0; b < C; ++b) {
        const double w = t.inv_sqrt[a * C + b];
        const double* in = src.data() + b * T;
        for (std::size_t s = 0; s < T; ++s) row[s] += w * in[s];
      }
    }
  }
  return out;
}

TrialSet euclidean_align(const TrialSet& x) {
  return apply_alignment(x, fit_alignment(x));
}

TrialSet baseline_correct(const TrialSet& x, const TrialSet& baseline) {
  if (x.n_trials != baseline.n_trials) {
    throw std::invalid_argument("baseline_correct: " + std::to_string(x.n_trials) +
                                " trials but " + std::to_string(baseline.n_trials) +
                                " baseline segments");
  }
  if (x.n_channels != baseline.n_channels) {
    throw std::invalid_argument("baseline_correct: " + std::to_string(x.n_channels) +
                                " channels but baseline has " +
                                std::to_string(baseline.n_channels));
  }
  TrialSet out = x;
  for (std::size_t i = 0; i < x.n_trials; ++i) {
    for (std::size_t c = 0; c < x.n_channels; ++c) {
      const double mu = channel_mean(baseline.channel(i, c));
      for (double& v : out.channel(i, c)) v -= mu;
    }
  }
  return out;
}

BaselineSplit split_baseline(const TrialSet& x, double seconds) {
  const auto n_base = static_cast<std::size_t>(std::llround(seconds * x.fs_hz));
  if (seconds <= 0.0 || n_base == 0 || n_base >= x.n_samples) {
    throw std::invalid_argument("split_baseline: " + std::to_string(seconds) +
                                " s baseline does not fit in " +
                                std::to_string(x.duration_s()) + " s trials");
  }
  BaselineSplit s{x.empty_like(), x.empty_like()};
  s.baseline.n_trials = s.trials.n_trials = x.n_trials;
  s.baseline.labels = s.trials.labels = x.labels;
  s.baseline.n_samples = n_base;
  s.trials.n_samples = x.n_samples - n_base;
  s.baseline.data.reserve(x.n_trials * x.n_channels * n_base);
  s.trials.data.reserve(x.n_trials * x.n_channels * (x.n_samples - n_base));
  for (std::size_t i = 0; i < x.n_trials; ++i) {
    for (std::size_t c = 0; c < x.n_channels; ++c) {
      const auto ch = x.channel(i, c);
      s.baseline.data.insert(s.baseline.data.end(), ch.begin(),
                             ch.begin() + static_cast<std::ptrdiff_t>(n_base));
      s.trials.data.insert(s.trials.data.end(),
                           ch.begin() + static_cast<std::ptrdiff_t>(n_base), ch.end());
    }
  }
  return s;
}

}  // namespace lmda::sigproc
