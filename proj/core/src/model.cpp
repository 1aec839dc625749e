#include "lmda/model.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "lmda/dataio.hpp"

namespace lmda {

std::size_t pooling_kernel(double fs_hz, std::size_t n_train) {
  const std::size_t n = std::max<std::size_t>(1, n_train / 200);
  const double k = std::floor(fs_hz / 10.0 / static_cast<double>(n));
  return k < 1.0 ? 1 : static_cast<std::size_t>(k);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("invalid model config: " + what);
  };
  if (n_channels < 1) fail("n_channels must be >= 1");
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (!(fs_hz > 0.0)) fail("fs_hz must be positive");
  if (n_train < 1) fail("n_train must be >= 1");
  if (depth < 1 || temporal_kernels < 1 || spatial_kernels < 1) fail("kernel counts must be >= 1");
  if (temporal_len < 1 || temporal_len > n_samples) {
    fail("temporal_len " + std::to_string(temporal_len) + " exceeds n_samples " +
         std::to_string(n_samples));
  }
  if (depth_attn_k % 2 == 0) fail("depth_attn_k must be odd");
  if (depth_attn_k > 2 * temporal_kernels - 1) fail("depth_attn_k too large for the feature depth");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
  if (pooling() > feature_samples()) {
    fail("pooling kernel " + std::to_string(pooling()) + " exceeds " +
         std::to_string(feature_samples()) + " feature samples");
  }
}

std::size_t ModelConfig::pooling() const { return pooling_kernel(fs_hz, n_train); }

std::size_t ModelConfig::classifier_inputs() const {
  return spatial_kernels * (feature_samples() / pooling());
}

std::string config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["n_channels"] = c.n_channels;
  j["n_samples"] = c.n_samples;
  j["n_classes"] = c.n_classes;
  j["fs_hz"] = c.fs_hz;
  j["n_train"] = c.n_train;
  j["depth"] = c.depth;
  j["temporal_kernels"] = c.temporal_kernels;
  j["spatial_kernels"] = c.spatial_kernels;
  j["temporal_len"] = c.temporal_len;
  j["depth_attn_k"] = c.depth_attn_k;
  j["use_channel_attn"] = c.use_channel_attn;
  j["use_depth_attn"] = c.use_depth_attn;
  j["dropout_p"] = c.dropout_p;
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig config_from_json(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.n_channels = j.at("n_channels").get<std::size_t>();
    c.n_samples = j.at("n_samples").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.fs_hz = j.at("fs_hz").get<double>();
    c.n_train = j.at("n_train").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.temporal_kernels = j.at("temporal_kernels").get<std::size_t>();
    c.spatial_kernels = j.at("spatial_kernels").get<std::size_t>();
    c.temporal_len = j.at("temporal_len").get<std::size_t>();
    c.depth_attn_k = j.at("depth_attn_k").get<std::size_t>();
    c.use_channel_attn = j.at("use_channel_attn").get<bool>();
    c.use_depth_attn = j.at("use_depth_attn").get<bool>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw dataio::FormatError(dataio::FormatErrorKind::kBadHeader,
                              std::string("malformed model config: ") + e.what());
  }
  return c;
}

Tensor channel_attention(const Tensor& x, const Tensor& w) {
  return channel_contract(x, w);
}

Tensor depth_attention_map(const Tensor& f, const Tensor& taps) {
  if (f.rank() != 4) {
    throw ShapeError("depth_attention: features must be [B,D,C,T], got " +
                     shape_to_string(f.shape()));
  }
  if (taps.rank() != 1) {
    throw ShapeError("depth_attention: taps must be a vector, got " +
                     shape_to_string(taps.shape()));
  }
  const std::size_t k = taps.dim(0);
  const std::size_t depth = f.dim(1);
  if (k % 2 == 0) {
    throw ShapeError("depth_attention: kernel length " + std::to_string(k) + " must be odd");
  }
  if (k > 2 * depth - 1) {
    throw ShapeError("depth_attention: kernel length " + std::to_string(k) +
                     " exceeds 2*depth-1 = " + std::to_string(2 * depth - 1));
  }
  const Tensor pooled = mean_axis(f, 2);                 // [B,D,1,T]
  const Tensor across = transpose_axes(pooled, 1, 2);    // [B,1,D,T]
  const Tensor kernel = reshape(taps, Shape{1, 1, k, 1});
  // Edge-replicated rather than zero padded: with zeros the end depths see a
  // different sum and constant features would not pass through unchanged.
  const Tensor padded = pad_replicate(across, 2, (k - 1) / 2, (k - 1) / 2);
  const Tensor mixed = conv2d(padded, kernel, 1, 0, 0);
  const Tensor weights = scale(softmax(mixed, 2), static_cast<double>(depth));
  return transpose_axes(weights, 1, 2);                  // [B,D,1,T]
}

Tensor depth_attention(const Tensor& f, const Tensor& taps) {
  return hadamard(f, depth_attention_map(f, taps));
}

// ---------------------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

Tensor normal_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

constexpr std::uint64_t kDropoutStream = 0x9E3779B97F4A7C15ULL;

}  // namespace

LmdaModel::BatchNorm LmdaModel::make_bn(std::size_t depth) {
  BatchNorm bn;
  bn.gamma = Tensor(Shape{depth}, 1.0);
  bn.gamma.set_requires_grad(true);
  bn.beta = Tensor(Shape{depth}, 0.0);
  bn.beta.set_requires_grad(true);
  bn.state.running_mean = Tensor(Shape{depth}, 0.0);
  bn.state.running_var = Tensor(Shape{depth}, 1.0);
  return bn;
}

LmdaModel::LmdaModel(const ModelConfig& config)
    : config_(config), dropout_rng_(config.seed ^ kDropoutStream) {
  config_.validate();
  const auto& c = config_;
  std::mt19937_64 rng(c.seed);
  const std::size_t F1 = c.temporal_kernels, F2 = c.spatial_kernels;
  if (c.use_channel_attn) ca_weight_ = normal_tensor(Shape{c.depth, 1, c.n_channels}, rng);
  temporal_pw_ = uniform_tensor(Shape{F1, c.depth, 1, 1}, c.depth, rng);
  temporal_bn1_ = make_bn(F1);
  temporal_dw_ = uniform_tensor(Shape{F1, 1, 1, c.temporal_len}, c.temporal_len, rng);
  temporal_bn2_ = make_bn(F1);
  if (c.use_depth_attn) da_taps_ = uniform_tensor(Shape{c.depth_attn_k}, c.depth_attn_k, rng);
  spatial_pw_ = uniform_tensor(Shape{F2, F1, 1, 1}, F1, rng);
  spatial_bn1_ = make_bn(F2);
  spatial_dw_ = uniform_tensor(Shape{F2, 1, c.n_channels, 1}, c.n_channels, rng);
  spatial_bn2_ = make_bn(F2);
  const std::size_t fc_in = c.classifier_inputs();
  fc_weight_ = uniform_tensor(Shape{c.n_classes, fc_in}, fc_in, rng);
  fc_bias_ = uniform_tensor(Shape{c.n_classes}, fc_in, rng);
}

std::vector<NamedTensor> LmdaModel::parameters() const {
  std::vector<NamedTensor> p;
  if (config_.use_channel_attn) p.push_back({"channel_attention.weight", ca_weight_});
  p.push_back({"temporal.pointwise", temporal_pw_});
  p.push_back({"temporal.bn1.gamma", temporal_bn1_.gamma});
  p.push_back({"temporal.bn1.beta", temporal_bn1_.beta});
  p.push_back({"temporal.depthwise", temporal_dw_});
  p.push_back({"temporal.bn2.gamma", temporal_bn2_.gamma});
  p.push_back({"temporal.bn2.beta", temporal_bn2_.beta});
  if (config_.use_depth_attn) p.push_back({"depth_attention.taps", da_taps_});
  p.push_back({"spatial.pointwise", spatial_pw_});
  p.push_back({"spatial.bn1.gamma", spatial_bn1_.gamma});
  p.push_back({"spatial.bn1.beta", spatial_bn1_.beta});
  p.push_back({"spatial.depthwise", spatial_dw_});
  p.push_back({"spatial.bn2.gamma", spatial_bn2_.gamma});
  p.push_back({"spatial.bn2.beta", spatial_bn2_.beta});
  p.push_back({"classifier.weight", fc_weight_});
  p.push_back({"classifier.bias", fc_bias_});
  return p;
}

std::vector<NamedTensor> LmdaModel::buffers() const {
  return {
      {"temporal.bn1.running_mean", temporal_bn1_.state.running_mean},
      {"temporal.bn1.running_var", temporal_bn1_.state.running_var},
      {"temporal.bn2.running_mean", temporal_bn2_.state.running_mean},
      {"temporal.bn2.running_var", temporal_bn2_.state.running_var},
      {"spatial.bn1.running_mean", spatial_bn1_.state.running_mean},
      {"spatial.bn1.running_var", spatial_bn1_.state.running_var},
      {"spatial.bn2.running_mean", spatial_bn2_.state.running_mean},
      {"spatial.bn2.running_var", spatial_bn2_.state.running_var},
  };
}

std::size_t LmdaModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value.size();
  return n;
}

ForwardTrace LmdaModel::run(const Tensor& x, bool training, bool update_stats,
                            std::mt19937_64* dropout_rng) const {
  const auto& c = config_;
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != c.n_channels ||
      x.dim(3) != c.n_samples) {
    throw ShapeError("forward: expected input [B,1," + std::to_string(c.n_channels) +
                     "," + std::to_string(c.n_samples) + "], got " +
                     shape_to_string(x.shape()));
  }
  auto bn = [&](const Tensor& h, const BatchNorm& layer) {
    BatchNormState state = layer.state;
    if (training && !update_stats) {
      state.running_mean = state.running_mean.clone();
      state.running_var = state.running_var.clone();
    }
    return batch_norm(h, layer.gamma, layer.beta, state, training);
  };

  ForwardTrace trace;
  Tensor h = c.use_channel_attn ? channel_attention(x, ca_weight_)
                                : repeat_axis(x, 1, c.depth);
  h = bn(conv2d(h, temporal_pw_), temporal_bn1_);
  trace.temporal_conv = conv2d(h, temporal_dw_, c.temporal_kernels);
  h = bn(trace.temporal_conv, temporal_bn2_);
  h = gelu(h);
  trace.temporal = h;
  if (c.use_depth_attn) h = depth_attention(h, da_taps_);
  trace.spatial_conv = conv2d(h, spatial_pw_);
  h = bn(trace.spatial_conv, spatial_bn1_);
  trace.spatial_mix = h;
  h = bn(conv2d(h, spatial_dw_, c.spatial_kernels), spatial_bn2_);
  h = gelu(h);
  trace.spatial = h;
  if (training && c.dropout_p > 0.0 && dropout_rng != nullptr) {
    Tensor mask(h.shape());
    std::bernoulli_distribution keep(1.0 - c.dropout_p);
    const double kept = 1.0 / (1.0 - c.dropout_p);
    for (double& v : mask.mutable_data()) v = keep(*dropout_rng) ? kept : 0.0;
    h = hadamard(h, mask);
  }
  h = avg_pool_time(h, c.pooling());
  h = reshape(h, Shape{h.dim(0), h.size() / h.dim(0)});
  trace.logits = linear(h, fc_weight_, fc_bias_);
  return trace;
}

Tensor LmdaModel::forward(const Tensor& x, bool training) {
  return forward_trace(x, training).logits;
}

ForwardTrace LmdaModel::forward_trace(const Tensor& x, bool training) {
  return run(x, training, training, training ? &dropout_rng_ : nullptr);
}

ForwardTrace LmdaModel::infer(const Tensor& x) const {
  return run(x, false, false, nullptr);
}

LmdaModel LmdaModel::clone() const {
  LmdaModel copy(config_);
  copy.copy_values_from(*this);
  copy.dropout_rng_ = dropout_rng_;
  return copy;
}

void LmdaModel::copy_values_from(const LmdaModel& other) {
  auto copy_group = [](const std::vector<NamedTensor>& dst,
                       const std::vector<NamedTensor>& src) {
    for (const auto& d : dst) {
      for (const auto& s : src) {
        if (s.name != d.name) continue;
        if (s.value.shape() != d.value.shape()) {
          throw ShapeError("copy_values_from: " + d.name + " shape " +
                           shape_to_string(d.value.shape()) + " vs " +
                           shape_to_string(s.value.shape()));
        }
        Tensor target = d.value;
        const auto values = s.value.data();
        std::copy(values.begin(), values.end(), target.mutable_data().begin());
      }
    }
  };
  copy_group(parameters(), other.parameters());
  copy_group(buffers(), other.buffers());
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'M', 'D', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const LmdaModel& m) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le(out, kCheckpointVersion, 4);
  const std::string cfg = config_to_json(m.config());
  put_le(out, cfg.size(), 4);
  out.insert(out.end(), cfg.begin(), cfg.end());
  auto put_block = [&](const NamedTensor& t) {
    put_le(out, t.name.size(), 4);
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_le(out, t.value.size(), 8);
    for (double v : t.value.data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  };
  for (const auto& p : m.parameters()) put_block(p);
  for (const auto& b : m.buffers()) put_block(b);
  return out;
}

LmdaModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  using dataio::FormatError;
  using dataio::FormatErrorKind;
  if (bytes.size() < 4 || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic),
                                      bytes.begin(), [](char a, std::uint8_t b) {
                                        return static_cast<std::uint8_t>(a) == b;
                                      })) {
    throw FormatError(FormatErrorKind::kBadMagic, "bad magic: not an LMDM checkpoint");
  }
  if (bytes.size() < 12) throw FormatError(FormatErrorKind::kTruncated, "truncated LMDM preamble");
  const auto version = static_cast<std::uint32_t>(get_le(bytes.data() + 4, 4));
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::kVersionMismatch,
                      "LMDM version " + std::to_string(version) + " unsupported");
  }
  const std::size_t cfg_len = get_le(bytes.data() + 8, 4);
  std::size_t pos = 12;
  if (bytes.size() - pos < cfg_len) throw FormatError(FormatErrorKind::kTruncated, "truncated LMDM config");
  const std::string cfg_text(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                             bytes.begin() + static_cast<std::ptrdiff_t>(pos + cfg_len));
  pos += cfg_len;
  ModelConfig cfg = config_from_json(cfg_text);
  LmdaModel model = [&] {
    try {
      return LmdaModel(cfg);
    } catch (const std::invalid_argument& e) {
      throw FormatError(FormatErrorKind::kBadHeader, e.what());
    }
  }();

  auto expected = model.parameters();
  const auto bufs = model.buffers();
  expected.insert(expected.end(), bufs.begin(), bufs.end());
  for (auto& slot : expected) {
    auto need = [&](std::size_t n) {
      if (bytes.size() - pos < n) {
        throw FormatError(FormatErrorKind::kTruncated, "truncated LMDM block " + slot.name);
      }
    };
    need(4);
    const std::size_t name_len = get_le(bytes.data() + pos, 4);
    pos += 4;
    need(name_len);
    const std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                           bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
    pos += name_len;
    if (name != slot.name) {
      throw FormatError(FormatErrorKind::kBadHeader,
                        "LMDM block '" + name + "' where '" + slot.name + "' was expected");
    }
    need(8);
    const std::size_t count = get_le(bytes.data() + pos, 8);
    pos += 8;
    if (count != slot.value.size()) {
      throw FormatError(FormatErrorKind::kSizeMismatch,
                        "LMDM block " + name + " holds " + std::to_string(count) +
                            " values, config implies " + std::to_string(slot.value.size()));
    }
    need(8 * count);
    for (double& v : slot.value.mutable_data()) {
      v = std::bit_cast<double>(get_le(bytes.data() + pos, 8));
      pos += 8;
    }
  }
  if (pos != bytes.size()) {
    throw FormatError(FormatErrorKind::kSizeMismatch, "trailing bytes after LMDM blocks");
  }
  return model;
}

void save_checkpoint(const LmdaModel& m, const std::filesystem::path& path) {
  dataio::write_file_atomic(path, encode_checkpoint(m));
}

LmdaModel load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(dataio::read_file(path));
}

}  // namespace lmda
