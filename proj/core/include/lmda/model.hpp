#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lmda/tensor.hpp"

namespace lmda {

/// Hyperparameters of the network. Defaults are the fixed settings used for
/// every dataset: D = 9, 24 temporal kernels of length 75, 9 spatial
/// kernels, depth-attention kernel 7.
struct ModelConfig {
  std::size_t n_channels = 0;
  std::size_t n_samples = 0;
  std::size_t n_classes = 2;
  double fs_hz = 0.0;
  std::size_t n_train = 0;

  std::size_t depth = 9;
  std::size_t temporal_kernels = 24;
  std::size_t spatial_kernels = 9;
  std::size_t temporal_len = 75;
  std::size_t depth_attn_k = 7;
  bool use_channel_attn = true;
  bool use_depth_attn = true;
  double dropout_p = 0.5;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on the first inconsistent field.
  void validate() const;
  /// Time samples after the temporal convolution.
  std::size_t feature_samples() const { return n_samples - temporal_len + 1; }
  std::size_t pooling() const;
  std::size_t classifier_inputs() const;

  bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(std::string_view json);

/// Pooling width from sampling rate and training-set size:
/// N = max(1, floor(n_train / 200)), k = max(1, floor(fs / 10 / N)).
std::size_t pooling_kernel(double fs_hz, std::size_t n_train);

/// Maps electrode information into the depth dimension:
/// out[b,h,c,t] = sum_d x[b,d,c,t] w[h,d,c].
Tensor channel_attention(const Tensor& x, const Tensor& w);

/// Attention map M [B,D',1,T'] for features f [B,D',C',T']: average over
/// the spatial axis, convolve along depth with `taps` (edge-replicated, no
/// bias), softmax over depth, scaled by D'.
Tensor depth_attention_map(const Tensor& f, const Tensor& taps);
/// f * M, broadcast along the spatial axis.
Tensor depth_attention(const Tensor& f, const Tensor& taps);

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Intermediate feature maps kept for class-activation analysis.
struct ForwardTrace {
  Tensor logits;          // [B, n_classes]
  Tensor temporal_conv;   // depthwise temporal convolution output [B,24,C,T']
  Tensor temporal;        // temporal block output after GELU [B,24,C,T']
  Tensor spatial_conv;    // spatial pointwise convolution output [B,9,C,T']
  Tensor spatial_mix;     // spatial pointwise conv + BN [B,9,C,T']
  Tensor spatial;         // spatial block output after GELU [B,9,1,T']
};

class LmdaModel {
 public:
  /// Builds and initializes the parameters: channel-attention weights from
  /// N(0,1), convolution and linear weights from U(-1/sqrt(fan_in),
  /// 1/sqrt(fan_in)), normalization scale 1 and shift 0.
  explicit LmdaModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// Trainable tensors in checkpoint order.
  std::vector<NamedTensor> parameters() const;
  /// Normalization running statistics in checkpoint order.
  std::vector<NamedTensor> buffers() const;
  std::size_t param_count() const;

  /// Logits for x [B,1,C,T]. Training mode uses batch statistics (and
  /// updates the running ones) and applies dropout.
  Tensor forward(const Tensor& x, bool training);
  ForwardTrace forward_trace(const Tensor& x, bool training);
  /// Inference-mode forward; does not modify the model.
  ForwardTrace infer(const Tensor& x) const;

  /// Deep copy (parameters and statistics are not shared).
  LmdaModel clone() const;

  /// Copies values of every same-named tensor present in `other`.
  void copy_values_from(const LmdaModel& other);

 private:
  struct BatchNorm {
    Tensor gamma;
    Tensor beta;
    BatchNormState state;
  };

  ForwardTrace run(const Tensor& x, bool training, bool update_stats,
                   std::mt19937_64* dropout_rng) const;
  static BatchNorm make_bn(std::size_t depth);

  ModelConfig config_;
  Tensor ca_weight_;       // [D,1,C]
  Tensor temporal_pw_;     // [24,D,1,1]
  BatchNorm temporal_bn1_;
  Tensor temporal_dw_;     // [24,1,1,75]
  BatchNorm temporal_bn2_;
  Tensor da_taps_;         // [k]
  Tensor spatial_pw_;      // [9,24,1,1]
  BatchNorm spatial_bn1_;
  Tensor spatial_dw_;      // [9,1,C,1]
  BatchNorm spatial_bn2_;
  Tensor fc_weight_;       // [K, 9*P]
  Tensor fc_bias_;         // [K]
  std::mt19937_64 dropout_rng_;
};

inline std::size_t param_count(const LmdaModel& m) { return m.param_count(); }

/// LMDM v1 checkpoint, integers little-endian:
///   "LMDM" | u32 version | u32 config_len | config JSON
///   | blocks: u32 name_len | name | u64 count | f64 values[count]
/// Blocks follow parameters() order, then buffers() order.
void save_checkpoint(const LmdaModel& m, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const LmdaModel& m);
LmdaModel decode_checkpoint(std::span<const std::uint8_t> bytes);
LmdaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace lmda
