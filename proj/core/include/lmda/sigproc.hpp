#pragma once

// Trial preprocessing: FIR band-pass filtering, rational resampling,
// per-channel normalization, Euclidean alignment and baseline removal.
// Every function is pure.

#include <cstddef>
#include <vector>

#include "lmda/trialset.hpp"

namespace lmda::sigproc {

struct FirFilter {
  std::vector<double> taps;  // order + 1 coefficients, symmetric
  double fs_hz = 0.0;
  double low_hz = 0.0;
  double high_hz = 0.0;

  std::size_t order() const { return taps.size() - 1; }
};

/// Blackman-windowed sinc band-pass, gain 1 at sqrt(low_hz * high_hz).
FirFilter design_bandpass(std::size_t order, double low_hz, double high_hz,
                          double fs_hz);

/// Blackman window of length n (symmetric).
std::vector<double> blackman_window(std::size_t n);

/// Filters every channel of every trial; the order/2 group delay is removed
/// so the output is time-aligned with the input and has the same length.
TrialSet filter_trials(const TrialSet& x, const FirFilter& f);

struct ResampleRatio {
  std::size_t up = 1;
  std::size_t down = 1;
};

/// Lowest-terms up/down factors for target/source.
ResampleRatio resample_ratio(double source_hz, double target_hz);

/// Rational down-sampling: zero-stuff by `up`, anti-alias low-pass at
/// 0.9 * target/2, decimate by `down`. Output length floor(T * up / down).
TrialSet resample(const TrialSet& x, double target_hz);

/// Per trial and channel: zero mean, unit population standard deviation.
TrialSet channel_normalize(const TrialSet& x);

/// Whitening matrix R^(-1/2) of the mean trial covariance, row-major C x C.
struct AlignmentTransform {
  std::size_t n_channels = 0;
  std::vector<double> inv_sqrt;
};

AlignmentTransform fit_alignment(const TrialSet& reference);
TrialSet apply_alignment(const TrialSet& x, const AlignmentTransform& t);
/// fit_alignment on x, then apply it to x.
TrialSet euclidean_align(const TrialSet& x);

/// Mean covariance (1/N) sum_i X_i X_i^T / T, row-major C x C.
std::vector<double> mean_covariance(const TrialSet& x);

/// Subtracts, per trial and channel, the mean of the matching baseline
/// segment.
TrialSet baseline_correct(const TrialSet& x, const TrialSet& baseline);

struct BaselineSplit {
  TrialSet baseline;
  TrialSet trials;
};

/// Cuts the first `seconds` of every trial off as its baseline segment.
BaselineSplit split_baseline(const TrialSet& x, double seconds);

}  // namespace lmda::sigproc
