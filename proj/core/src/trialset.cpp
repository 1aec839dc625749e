#include "lmda/trialset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lmda {

std::span<const double> TrialSet::trial(std::size_t i) const {
  const std::size_t n = n_channels * n_samples;
  return std::span<const double>(data).subspan(i * n, n);
}

std::span<double> TrialSet::trial(std::size_t i) {
  const std::size_t n = n_channels * n_samples;
  return std::span<double>(data).subspan(i * n, n);
}

std::span<const double> TrialSet::channel(std::size_t t, std::size_t ch) const {
  return trial(t).subspan(ch * n_samples, n_samples);
}

std::span<double> TrialSet::channel(std::size_t t, std::size_t ch) {
  return trial(t).subspan(ch * n_samples, n_samples);
}

void TrialSet::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("invalid trial set: " + what);
  };
  if (n_trials < 1 || n_channels < 1 || n_samples < 1) {
    fail("needs at least one trial, channel and sample");
  }
  if (data.size() != n_trials * n_channels * n_samples) {
    fail("data holds " + std::to_string(data.size()) + " values, expected " +
         std::to_string(n_trials * n_channels * n_samples));
  }
  if (labels.size() != n_trials) fail("label count differs from trial count");
  if (!(fs_hz > 0.0) || !std::isfinite(fs_hz)) fail("sampling rate must be positive");
  if (class_names.empty()) fail("no class names");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_names.size()) {
      fail("label " + std::to_string(labels[i]) + " of trial " +
           std::to_string(i) + " outside [0, " +
           std::to_string(class_names.size()) + ")");
    }
  }
  if (channel_names.size() != n_channels) fail("channel name count differs from channel count");
  if (channel_pos) {
    if (channel_pos->size() != n_channels) fail("channel position count differs from channel count");
    for (const auto& p : *channel_pos) {
      if (p.x * p.x + p.y * p.y > 1.0 + 1e-12) fail("electrode position outside the unit disk");
    }
  }
  for (double v : data) {
    if (!std::isfinite(v)) fail("non-finite sample");
  }
}

TrialSet TrialSet::empty_like() const {
  TrialSet out;
  out.n_channels = n_channels;
  out.n_samples = n_samples;
  out.fs_hz = fs_hz;
  out.class_names = class_names;
  out.channel_names = channel_names;
  out.channel_pos = channel_pos;
  return out;
}

TrialSet TrialSet::subset(std::span<const std::size_t> indices) const {
  TrialSet out = empty_like();
  out.n_trials = indices.size();
  out.data.reserve(indices.size() * n_channels * n_samples);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= n_trials) throw std::out_of_range("trial index out of range");
    const auto t = trial(i);
    out.data.insert(out.data.end(), t.begin(), t.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Tensor TrialSet::to_tensor(std::span<const std::size_t> indices) const {
  Tensor out(Shape{indices.size(), 1, n_channels, n_samples});
  auto dst = out.mutable_data();
  const std::size_t n = n_channels * n_samples;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto t = trial(indices[k]);
    std::copy(t.begin(), t.end(), dst.begin() + static_cast<std::ptrdiff_t>(k * n));
  }
  return out;
}

Tensor TrialSet::to_tensor() const {
  std::vector<std::size_t> all(n_trials);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return to_tensor(all);
}

std::optional<std::size_t> TrialSet::find_channel(std::string_view name) const {
  auto lower = [](std::string_view s) {
    std::string r(s);
    std::transform(r.begin(), r.end(), r.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return r;
  };
  const std::string key = lower(name);
  for (std::size_t i = 0; i < channel_names.size(); ++i) {
    if (lower(channel_names[i]) == key) return i;
  }
  return std::nullopt;
}

void require_compatible(const TrialSet& a, const TrialSet& b) {
  if (a.n_channels != b.n_channels) {
    throw std::invalid_argument("channel count mismatch: " +
                                std::to_string(a.n_channels) + " vs " +
                                std::to_string(b.n_channels));
  }
  if (a.n_samples != b.n_samples) {
    throw std::invalid_argument("sample count mismatch: " +
                                std::to_string(a.n_samples) + " vs " +
                                std::to_string(b.n_samples));
  }
  if (a.fs_hz != b.fs_hz) {
    throw std::invalid_argument("sampling rate mismatch");
  }
  if (a.class_names != b.class_names) {
    throw std::invalid_argument("class set mismatch");
  }
}

}  // namespace lmda
