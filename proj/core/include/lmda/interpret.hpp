#pragma once

// Class-activation analysis of a trained model: Eigen-CAM over internal
// feature maps, selection of confidently classified trials, and the
// temporal/spatial interpretation procedures for ERP and ERD/ERS data.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmda/dataio.hpp"
#include "lmda/model.hpp"
#include "lmda/tensor.hpp"
#include "lmda/topography.hpp"
#include "lmda/train.hpp"
#include "lmda/trialset.hpp"

namespace lmda::interpret {

enum class CamLayer { kTemporalConv, kSpatialConv };

const char* layer_name(CamLayer layer);

/// Rectified class-activation values at input resolution, [N x C x T].
struct CamResult {
  std::size_t n_trials = 0;
  std::size_t n_channels = 0;
  std::size_t n_samples = 0;
  std::vector<double> values;
  CamLayer layer = CamLayer::kTemporalConv;
  int class_id = -1;

  std::span<const double> trial(std::size_t i) const {
    return std::span<const double>(values).subspan(i * n_channels * n_samples,
                                                   n_channels * n_samples);
  }
  double at(std::size_t i, std::size_t c, std::size_t t) const {
    return values[(i * n_channels + c) * n_samples + t];
  }
};

struct PowerIterationOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 1000;
};

/// First left singular vector of the row-major [rows x cols] matrix `a`,
/// by power iteration on the rows x rows Gram matrix. Returns an all-zero
/// vector for an all-zero matrix; throws NumericError if the iteration does
/// not converge.
std::vector<double> principal_direction(std::span<const double> a, std::size_t rows,
                                        std::size_t cols,
                                        const PowerIterationOptions& options = {});

/// Resamples a feature trace of length `in.size()` onto `out_len` input
/// samples. Feature sample j is placed at input position
/// j + (out_len - in.size()) / 2 (the centre of a valid convolution's
/// receptive field); values in between are linearly interpolated and the
/// ends are held.
std::vector<double> map_to_input_time(std::span<const double> in, std::size_t out_len);

/// Transposed valid convolution of a feature trace with a non-negative
/// kernel envelope: input sample s receives sum_j envelope[j] * in[s - j],
/// i.e. the activation of every feature whose receptive field covers s.
/// Output length in.size() + envelope.size() - 1.
std::vector<double> back_project_time(std::span<const double> in,
                                      std::span<const double> envelope);

/// sum_d |k_d[j]| over the model's depthwise temporal kernels.
std::vector<double> temporal_envelope(const LmdaModel& model);

/// How feature time steps are placed back onto input samples.
enum class TimeMapping {
  kInterpolate,     // map_to_input_time
  kReceptiveField,  // back_project_time with the temporal kernel envelope
};

const char* mapping_name(TimeMapping mapping);

/// Eigen-CAM for features [N,D',C',T']: per trial, project the D' feature
/// maps onto their principal direction, fix the sign so the map sums to a
/// non-negative value, rectify, and map to [channels x samples]. A C' of 1
/// is broadcast across channels. Time is mapped by interpolation, or by
/// back-projection when `envelope` is given (then T' + len - 1 must equal
/// `samples`).
CamResult eigen_cam(const Tensor& features, std::size_t channels, std::size_t samples,
                    const PowerIterationOptions& options = {},
                    std::span<const double> envelope = {});

/// Runs the model on every trial and returns the CAM of the requested layer.
CamResult layer_cam(const LmdaModel& model, const TrialSet& trials, CamLayer layer,
                    TimeMapping mapping = TimeMapping::kReceptiveField);

struct ConfidentTrials {
  /// One trial set per class (same metadata as the source data).
  std::vector<TrialSet> per_class;
  /// Source indices of the selected trials, per class.
  std::vector<std::vector<std::size_t>> indices;
  /// Number of requested trials that could not be supplied.
  std::size_t shortfall = 0;
};

struct ConfidenceRanking {
  std::vector<std::vector<std::size_t>> indices;  // per class
  std::size_t shortfall = 0;
};

/// Per class, the `per_class` correctly predicted trials with the highest
/// predicted-class probability; ties go to the lower trial index. Throws
/// std::runtime_error naming a class without any correct prediction.
ConfidenceRanking rank_confident(const train::Evaluation& evaluation, const TrialSet& data,
                                 std::size_t per_class);

/// rank_confident on the model's inference-mode evaluation of `data`.
ConfidentTrials select_confident(const LmdaModel& model, const TrialSet& data,
                                 std::size_t per_class);

struct ErnClassResult {
  std::string class_name;
  std::vector<double> temporal_heat;     // [T], summed over groups
  std::size_t prominent_index = 0;
  double prominent_time_s = 0.0;
  std::vector<double> spatial_values;    // [C], spatial CAM at the prominent time
  std::vector<double> erp_curve;         // [T], raw class mean at the reference channel
  std::vector<double> input_topography;  // [C], raw class mean at the prominent time
};

/// Temporal and spatial interpretation for ERP data. Each group (for
/// example one test participant) contributes its confident trials; temporal
/// traces are summed over groups, spatial maps and raw averages are averaged
/// over groups.
std::vector<ErnClassResult> algorithm1_ern(
    const LmdaModel& model, std::span<const ConfidentTrials> groups,
    std::string_view reference_channel = "Cz",
    TimeMapping mapping = TimeMapping::kReceptiveField);

struct MiClassResult {
  std::string class_name;
  std::vector<double> channel_weights;  // [C], sums to 1
  std::size_t skipped_trials = 0;
};

/// Spatial interpretation for ERD/ERS data: per trial, the `top_t` time
/// samples with the largest channel-averaged temporal CAM select columns of
/// the spatial CAM, which are summed, normalized to a distribution over
/// channels and averaged over trials.
std::vector<MiClassResult> algorithm2_mi(const LmdaModel& model,
                                         const ConfidentTrials& confident,
                                         std::size_t top_t = 10,
                                         TimeMapping mapping = TimeMapping::kReceptiveField);

// ---------------------------------------------------------------------------
// File output. Class names are sanitized to [A-Za-z0-9_-] for file names.

std::string file_stem(std::string_view class_name);

/// Writes cam_temporal_<class>.csv (time_s,value), erp_<class>.csv
/// (time_s,value), topo_<class>.csv/.svg (spatial CAM at the prominent time)
/// and topo_input_<class>.csv/.svg (raw average at the prominent time).
void export_ern(const std::filesystem::path& dir, const std::vector<ErnClassResult>& results,
                const TrialSet& meta, const dataio::Montage& montage, std::size_t grid_size = 64);

/// Writes topo_<class>.csv/.svg for every class.
void export_mi(const std::filesystem::path& dir, const std::vector<MiClassResult>& results,
               const TrialSet& meta, const dataio::Montage& montage, std::size_t grid_size = 64);

}  // namespace lmda::interpret
