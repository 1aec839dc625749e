#include "lmda/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "lmda/train.hpp"

namespace lmda::interpret {

const char* layer_name(CamLayer layer) {
  return layer == CamLayer::kTemporalConv ? "temporal_conv" : "spatial_conv";
}

std::vector<double> principal_direction(std::span<const double> a, std::size_t rows,
                                        std::size_t cols, const PowerIterationOptions& options) {
  if (a.size() != rows * cols) {
    throw ShapeError("principal_direction: " + std::to_string(a.size()) + " values for a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
  std::vector<double> gram(rows * rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* ai = a.data() + i * cols;
    for (std::size_t j = i; j < rows; ++j) {
      const double* aj = a.data() + j * cols;
      double s = 0.0;
      for (std::size_t k = 0; k < cols; ++k) s += ai[k] * aj[k];
      gram[i * rows + j] = gram[j * rows + i] = s;
    }
  }
  std::vector<double> u(rows, 0.0);
  // Start from the Gram column of the strongest row; it has a component
  // along the top eigenvector unless that row is orthogonal to it.
  std::size_t start = 0;
  for (std::size_t i = 1; i < rows; ++i) {
    if (gram[i * rows + i] > gram[start * rows + start]) start = i;
  }
  if (!(gram[start * rows + start] > 0.0)) return u;
  double norm = 0.0;
  for (std::size_t i = 0; i < rows; ++i) norm += gram[i * rows + start] * gram[i * rows + start];
  norm = std::sqrt(norm);
  for (std::size_t i = 0; i < rows; ++i) u[i] = gram[i * rows + start] / norm;

  std::vector<double> w(rows);
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < rows; ++j) s += gram[i * rows + j] * u[j];
      w[i] = s;
    }
    double wn = 0.0;
    for (double v : w) wn += v * v;
    wn = std::sqrt(wn);
    if (!(wn > 0.0)) throw NumericError("principal_direction: iterate collapsed to zero");
    double delta = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      w[i] /= wn;
      delta += (w[i] - u[i]) * (w[i] - u[i]);
    }
    u.swap(w);
    if (std::sqrt(delta) < options.tolerance) return u;
  }
  throw NumericError("principal_direction: power iteration did not converge in " +
                     std::to_string(options.max_iterations) + " iterations");
}

std::vector<double> map_to_input_time(std::span<const double> in, std::size_t out_len) {
  if (in.empty()) throw ShapeError("map_to_input_time: empty trace");
  std::vector<double> out(out_len);
  if (in.size() == out_len) {
    std::copy(in.begin(), in.end(), out.begin());
    return out;
  }
  const double offset =
      (static_cast<double>(out_len) - static_cast<double>(in.size())) / 2.0;
  const double last = static_cast<double>(in.size() - 1);
  for (std::size_t s = 0; s < out_len; ++s) {
    const double u = static_cast<double>(s) - offset;
    if (u <= 0.0) {
      out[s] = in.front();
    } else if (u >= last) {
      out[s] = in.back();
    } else {
      const auto lo = static_cast<std::size_t>(u);
      const double frac = u - static_cast<double>(lo);
      out[s] = (1.0 - frac) * in[lo] + frac * in[lo + 1];
    }
  }
  return out;
}

std::vector<double> back_project_time(std::span<const double> in,
                                      std::span<const double> envelope) {
  if (in.empty() || envelope.empty()) throw ShapeError("back_project_time: empty input");
  const std::size_t L = envelope.size();
  std::vector<double> out(in.size() + L - 1, 0.0);
  for (std::size_t t = 0; t < in.size(); ++t) {
    for (std::size_t j = 0; j < L; ++j) out[t + j] += envelope[j] * in[t];
  }
  return out;
}

std::vector<double> temporal_envelope(const LmdaModel& model) {
  const std::size_t L = model.config().temporal_len;
  std::vector<double> env(L, 0.0);
  for (const auto& [name, value] : model.parameters()) {
    if (name != "temporal.depthwise") continue;
    const auto k = value.data();
    for (std::size_t i = 0; i < k.size(); ++i) env[i % L] += std::abs(k[i]);
  }
  return env;
}

const char* mapping_name(TimeMapping mapping) {
  return mapping == TimeMapping::kInterpolate ? "interpolate" : "receptive-field";
}

CamResult eigen_cam(const Tensor& features, std::size_t channels, std::size_t samples,
                    const PowerIterationOptions& options, std::span<const double> envelope) {
  if (features.rank() != 4) {
    throw ShapeError("eigen_cam: features must be [N,D',C',T'], got " +
                     shape_to_string(features.shape()));
  }
  const std::size_t N = features.dim(0), D = features.dim(1), Cf = features.dim(2),
                    Tf = features.dim(3);
  if (D < 1 || Cf < 1 || Tf < 1) {
    throw ShapeError("eigen_cam: empty feature axis in " + shape_to_string(features.shape()));
  }
  if (Cf != 1 && Cf != channels) {
    throw ShapeError("eigen_cam: " + std::to_string(Cf) + " feature channels cannot map onto " +
                     std::to_string(channels) + " input channels");
  }
  if (!envelope.empty() && Tf + envelope.size() - 1 != samples) {
    throw ShapeError("eigen_cam: " + std::to_string(Tf) + " feature samples and a kernel of " +
                     std::to_string(envelope.size()) + " do not span " +
                     std::to_string(samples) + " input samples");
  }
  const auto f = features.data();
  for (double v : f) {
    if (!std::isfinite(v)) throw NumericError("eigen_cam: non-finite feature value");
  }

  CamResult out;
  out.n_trials = N;
  out.n_channels = channels;
  out.n_samples = samples;
  out.values.assign(N * channels * samples, 0.0);
  const std::size_t cols = Cf * Tf;
  std::vector<double> cam(cols);
  for (std::size_t n = 0; n < N; ++n) {
    const auto block = f.subspan(n * D * cols, D * cols);
    const auto u = principal_direction(block, D, cols, options);
    std::fill(cam.begin(), cam.end(), 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      const double* row = block.data() + d * cols;
      for (std::size_t k = 0; k < cols; ++k) cam[k] += u[d] * row[k];
    }
    const double total = std::accumulate(cam.begin(), cam.end(), 0.0);
    const double sign = total < 0.0 ? -1.0 : 1.0;
    for (double& v : cam) v = std::max(0.0, sign * v);

    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t src = Cf == 1 ? 0 : c;
      const auto trace = std::span<const double>(cam).subspan(src * Tf, Tf);
      const auto mapped = envelope.empty() ? map_to_input_time(trace, samples)
                                           : back_project_time(trace, envelope);
      std::copy(mapped.begin(), mapped.end(),
                out.values.begin() + static_cast<std::ptrdiff_t>((n * channels + c) * samples));
    }
  }
  return out;
}

CamResult layer_cam(const LmdaModel& model, const TrialSet& trials, CamLayer layer,
                    TimeMapping mapping) {
  constexpr std::size_t kBatch = 64;
  const std::vector<double> envelope =
      mapping == TimeMapping::kReceptiveField ? temporal_envelope(model) : std::vector<double>{};
  CamResult out;
  out.n_trials = trials.n_trials;
  out.n_channels = trials.n_channels;
  out.n_samples = trials.n_samples;
  out.layer = layer;
  out.values.reserve(trials.data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < trials.n_trials; start += kBatch) {
    const std::size_t end = std::min(trials.n_trials, start + kBatch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardTrace trace = model.infer(trials.to_tensor(idx));
    const Tensor& f = layer == CamLayer::kTemporalConv ? trace.temporal : trace.spatial_mix;
    const CamResult part = eigen_cam(f, trials.n_channels, trials.n_samples, {}, envelope);
    out.values.insert(out.values.end(), part.values.begin(), part.values.end());
  }
  return out;
}

ConfidenceRanking rank_confident(const train::Evaluation& ev, const TrialSet& data,
                                 std::size_t per_class) {
  if (per_class < 1) throw std::invalid_argument("select_confident: per_class must be >= 1");
  const std::size_t K = data.n_classes();
  if (ev.predictions.size() != data.n_trials || ev.probabilities.size() != data.n_trials * K) {
    throw std::invalid_argument("select_confident: evaluation does not match the data");
  }
  ConfidenceRanking out;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> correct;
    for (std::size_t i = 0; i < data.n_trials; ++i) {
      if (data.labels[i] == static_cast<int>(k) && ev.predictions[i] == data.labels[i]) {
        correct.push_back(i);
      }
    }
    if (correct.empty()) {
      throw std::runtime_error("select_confident: no correctly predicted trial of class '" +
                               data.class_names[k] + "'");
    }
    std::stable_sort(correct.begin(), correct.end(), [&](std::size_t a, std::size_t b) {
      return ev.probabilities[a * K + k] > ev.probabilities[b * K + k];
    });
    if (correct.size() > per_class) {
      correct.resize(per_class);
    } else {
      out.shortfall += per_class - correct.size();
    }
    out.indices.push_back(std::move(correct));
  }
  return out;
}

ConfidentTrials select_confident(const LmdaModel& model, const TrialSet& data,
                                 std::size_t per_class) {
  if (per_class < 1) throw std::invalid_argument("select_confident: per_class must be >= 1");
  auto ranking = rank_confident(train::evaluate(model, data), data, per_class);
  ConfidentTrials out;
  out.shortfall = ranking.shortfall;
  for (auto& idx : ranking.indices) {
    out.per_class.push_back(data.subset(idx));
    out.indices.push_back(std::move(idx));
  }
  return out;
}

namespace {

/// Mean over trials of a CAM, [C x T].
std::vector<double> trial_mean(const CamResult& cam) {
  const std::size_t ct = cam.n_channels * cam.n_samples;
  std::vector<double> out(ct, 0.0);
  for (std::size_t n = 0; n < cam.n_trials; ++n) {
    const auto tr = cam.trial(n);
    for (std::size_t k = 0; k < ct; ++k) out[k] += tr[k];
  }
  for (double& v : out) v /= static_cast<double>(cam.n_trials);
  return out;
}

std::vector<double> trial_mean(const TrialSet& x) {
  const std::size_t ct = x.n_channels * x.n_samples;
  std::vector<double> out(ct, 0.0);
  for (std::size_t n = 0; n < x.n_trials; ++n) {
    const auto tr = x.trial(n);
    for (std::size_t k = 0; k < ct; ++k) out[k] += tr[k];
  }
  for (double& v : out) v /= static_cast<double>(x.n_trials);
  return out;
}

}  // namespace

std::vector<ErnClassResult> algorithm1_ern(const LmdaModel& model,
                                           std::span<const ConfidentTrials> groups,
                                           std::string_view reference_channel,
                                           TimeMapping mapping) {
  if (groups.empty()) throw std::invalid_argument("algorithm1_ern: no groups");
  const std::size_t K = groups.front().per_class.size();
  if (K == 0) throw std::invalid_argument("algorithm1_ern: no classes");
  const TrialSet& meta = groups.front().per_class.front();
  const auto ref = meta.find_channel(reference_channel);
  if (!ref) {
    throw std::invalid_argument("algorithm1_ern: reference channel '" +
                                std::string(reference_channel) + "' not in the data");
  }
  const std::size_t C = meta.n_channels, T = meta.n_samples;

  std::vector<ErnClassResult> results(K);
  for (std::size_t j = 0; j < K; ++j) {
    auto& r = results[j];
    r.class_name = meta.class_names[j];
    r.temporal_heat.assign(T, 0.0);
    std::vector<double> spatial(C * T, 0.0), raw(C * T, 0.0);
    for (const auto& g : groups) {
      if (g.per_class.size() != K) {
        throw std::invalid_argument("algorithm1_ern: groups disagree on the class count");
      }
      const TrialSet& d = g.per_class[j];
      require_compatible(meta, d);
      if (d.n_trials == 0) {
        throw std::invalid_argument("algorithm1_ern: no confident trials for class '" +
                                    r.class_name + "'");
      }
      const auto s_mean = trial_mean(layer_cam(model, d, CamLayer::kSpatialConv, mapping));
      const auto t_mean = trial_mean(layer_cam(model, d, CamLayer::kTemporalConv, mapping));
      for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += t_mean[c * T + t];
        r.temporal_heat[t] += acc / static_cast<double>(C);
      }
      const auto d_mean = trial_mean(d);
      for (std::size_t k = 0; k < C * T; ++k) {
        spatial[k] += s_mean[k];
        raw[k] += d_mean[k];
      }
    }
    const auto n_groups = static_cast<double>(groups.size());
    for (std::size_t k = 0; k < C * T; ++k) {
      spatial[k] /= n_groups;
      raw[k] /= n_groups;
    }
    r.prominent_index = static_cast<std::size_t>(
        std::max_element(r.temporal_heat.begin(), r.temporal_heat.end()) -
        r.temporal_heat.begin());
    r.prominent_time_s = static_cast<double>(r.prominent_index) / meta.fs_hz;
    r.spatial_values.resize(C);
    r.input_topography.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      r.spatial_values[c] = spatial[c * T + r.prominent_index];
      r.input_topography[c] = raw[c * T + r.prominent_index];
    }
    r.erp_curve.assign(raw.begin() + static_cast<std::ptrdiff_t>(*ref * T),
                       raw.begin() + static_cast<std::ptrdiff_t>((*ref + 1) * T));
  }
  return results;
}

std::vector<MiClassResult> algorithm2_mi(const LmdaModel& model, const ConfidentTrials& confident,
                                         std::size_t top_t, TimeMapping mapping) {
  std::vector<MiClassResult> results;
  for (const TrialSet& d : confident.per_class) {
    const std::size_t C = d.n_channels, T = d.n_samples;
    if (top_t < 1 || top_t > T) {
      throw std::invalid_argument("algorithm2_mi: top_t must lie in [1, " + std::to_string(T) +
                                  "], got " + std::to_string(top_t));
    }
    MiClassResult r;
    r.class_name = d.class_names[results.size()];
    r.channel_weights.assign(C, 0.0);
    if (d.n_trials == 0) {
      throw std::invalid_argument("algorithm2_mi: no confident trials for class '" +
                                  r.class_name + "'");
    }
    if (C == 1) {
      r.channel_weights[0] = 1.0;
      results.push_back(std::move(r));
      continue;
    }
    const CamResult s_cam = layer_cam(model, d, CamLayer::kSpatialConv, mapping);
    const CamResult t_cam = layer_cam(model, d, CamLayer::kTemporalConv, mapping);
    std::vector<double> t_mean(T);
    std::vector<std::size_t> order(T);
    std::vector<double> w(C);
    std::size_t used = 0;
    for (std::size_t n = 0; n < d.n_trials; ++n) {
      for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += t_cam.at(n, c, t);
        t_mean[t] = acc / static_cast<double>(C);
      }
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return t_mean[a] > t_mean[b]; });
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < top_t; ++k) acc += s_cam.at(n, c, order[k]);
        w[c] = acc;
        total += acc;
      }
      if (!(total > 0.0)) {
        ++r.skipped_trials;
        continue;
      }
      for (std::size_t c = 0; c < C; ++c) r.channel_weights[c] += w[c] / total;
      ++used;
    }
    if (used == 0) {
      throw NumericError("algorithm2_mi: every confident trial of class '" + r.class_name +
                         "' has an all-zero spatial activation map");
    }
    for (double& v : r.channel_weights) v /= static_cast<double>(used);
    results.push_back(std::move(r));
  }
  return results;
}

std::string file_stem(std::string_view class_name) {
  std::string out;
  for (char ch : class_name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '_' || ch == '-';
    out += ok ? ch : '_';
  }
  return out.empty() ? "class" : out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string time_series_csv(std::span<const double> values, double fs_hz) {
  std::string out = "time_s,value\n";
  for (std::size_t t = 0; t < values.size(); ++t) {
    out += fmt(static_cast<double>(t) / fs_hz) + "," + fmt(values[t]) + "\n";
  }
  return out;
}

// The CSV is always written; the SVG needs every channel in the montage.
void write_topo(const std::filesystem::path& dir, const std::string& stem,
                std::span<const double> values, const TrialSet& meta,
                const dataio::Montage& montage, std::size_t grid_size, const std::string& title) {
  std::string csv = "channel,value\n";
  for (std::size_t c = 0; c < values.size(); ++c) {
    csv += meta.channel_names[c] + "," + fmt(values[c]) + "\n";
  }
  dataio::write_text_atomic(dir / (stem + ".csv"), csv);
  if (!dataio::positions_for(montage, meta.channel_names)) return;
  const Topography topo = topo_export(values, meta.channel_names, montage, grid_size);
  dataio::write_text_atomic(dir / (stem + ".svg"), topography_svg(topo, title));
}

}  // namespace

void export_ern(const std::filesystem::path& dir, const std::vector<ErnClassResult>& results,
                const TrialSet& meta, const dataio::Montage& montage, std::size_t grid_size) {
  std::filesystem::create_directories(dir);
  for (const auto& r : results) {
    const std::string stem = file_stem(r.class_name);
    dataio::write_text_atomic(dir / ("cam_temporal_" + stem + ".csv"),
                              time_series_csv(r.temporal_heat, meta.fs_hz));
    dataio::write_text_atomic(dir / ("erp_" + stem + ".csv"),
                              time_series_csv(r.erp_curve, meta.fs_hz));
    write_topo(dir, "topo_" + stem, r.spatial_values, meta, montage, grid_size,
               r.class_name + " activation at " + fmt(r.prominent_time_s) + " s");
    write_topo(dir, "topo_input_" + stem, r.input_topography, meta, montage, grid_size,
               r.class_name + " average at " + fmt(r.prominent_time_s) + " s");
  }
}

void export_mi(const std::filesystem::path& dir, const std::vector<MiClassResult>& results,
               const TrialSet& meta, const dataio::Montage& montage, std::size_t grid_size) {
  std::filesystem::create_directories(dir);
  for (const auto& r : results) {
    write_topo(dir, "topo_" + file_stem(r.class_name), r.channel_weights, meta, montage,
               grid_size, r.class_name + " channel weights");
  }
}

}  // namespace lmda::interpret
