#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmda/tensor.hpp"

namespace lmda {

struct ElectrodePos {
  double x = 0.0;  // right is positive
  double y = 0.0;  // anterior (nose) is positive
  bool operator==(const ElectrodePos&) const = default;
};

/// Labeled EEG trials stored trial-major, channel-next, time-fastest.
struct TrialSet {
  std::size_t n_trials = 0;
  std::size_t n_channels = 0;
  std::size_t n_samples = 0;
  double fs_hz = 0.0;
  std::vector<double> data;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> channel_names;
  std::optional<std::vector<ElectrodePos>> channel_pos;

  std::size_t n_classes() const { return class_names.size(); }
  double duration_s() const { return static_cast<double>(n_samples) / fs_hz; }

  std::span<const double> trial(std::size_t i) const;
  std::span<double> trial(std::size_t i);
  std::span<const double> channel(std::size_t trial, std::size_t ch) const;
  std::span<double> channel(std::size_t trial, std::size_t ch);

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;

  /// Same metadata, selected trials (in the given order).
  TrialSet subset(std::span<const std::size_t> indices) const;
  /// Same metadata, no trials; data/labels empty.
  TrialSet empty_like() const;

  /// Trials as a [B,1,C,T] network input.
  Tensor to_tensor(std::span<const std::size_t> indices) const;
  Tensor to_tensor() const;

  std::optional<std::size_t> find_channel(std::string_view name) const;
};

/// Throws std::invalid_argument unless a and b agree on channels, samples,
/// rate and class names.
void require_compatible(const TrialSet& a, const TrialSet& b);

}  // namespace lmda
