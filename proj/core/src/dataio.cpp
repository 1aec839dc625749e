#include "lmda/dataio.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <system_error>

namespace lmda::dataio {

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'B'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::string lower(std::string_view s) {
  std::string r(s);
  std::transform(r.begin(), r.end(), r.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return r;
}

nlohmann::json header_json(const TrialSet& x) {
  nlohmann::json h;
  h["n_trials"] = x.n_trials;
  h["n_channels"] = x.n_channels;
  h["n_samples"] = x.n_samples;
  h["fs_hz"] = x.fs_hz;
  h["class_names"] = x.class_names;
  h["channel_names"] = x.channel_names;
  if (x.channel_pos) {
    auto pos = nlohmann::json::array();
    for (const auto& p : *x.channel_pos) pos.push_back({p.x, p.y});
    h["channel_pos"] = pos;
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_eegb(const TrialSet& x) {
  x.validate();
  if (x.class_names.size() > 65536) {
    throw std::invalid_argument("EEGB stores labels as 16-bit values");
  }
  const std::string header = header_json(x).dump();
  std::vector<std::uint8_t> out;
  out.reserve(12 + header.size() + 2 * x.n_trials + 4 * x.data.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kEegbVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (int label : x.labels) put_u16(out, static_cast<std::uint16_t>(label));
  for (double v : x.data) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

TrialSet decode_eegb(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                                      [](char a, std::uint8_t b) {
                                        return static_cast<std::uint8_t>(a) == b;
                                      })) {
    throw FormatError(FormatErrorKind::kBadMagic, "bad magic: not an EEGB file");
  }
  if (bytes.size() < 12) {
    throw FormatError(FormatErrorKind::kTruncated, "truncated EEGB preamble");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kEegbVersion) {
    throw FormatError(FormatErrorKind::kVersionMismatch,
                      "EEGB version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kEegbVersion) + ")");
  }
  const std::uint32_t header_len = get_u32(bytes.data() + 8);
  if (bytes.size() - 12 < header_len) {
    throw FormatError(FormatErrorKind::kTruncated, "truncated EEGB header");
  }
  TrialSet x;
  try {
    const auto h = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    x.n_trials = h.at("n_trials").get<std::size_t>();
    x.n_channels = h.at("n_channels").get<std::size_t>();
    x.n_samples = h.at("n_samples").get<std::size_t>();
    x.fs_hz = h.at("fs_hz").get<double>();
    x.class_names = h.at("class_names").get<std::vector<std::string>>();
    x.channel_names = h.at("channel_names").get<std::vector<std::string>>();
    if (h.contains("channel_pos") && !h["channel_pos"].is_null()) {
      std::vector<ElectrodePos> pos;
      for (const auto& p : h["channel_pos"]) {
        pos.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      }
      x.channel_pos = std::move(pos);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::kBadHeader,
                      std::string("malformed EEGB header: ") + e.what());
  }

  const std::size_t per_trial = 2 + 4 * x.n_channels * x.n_samples;
  const std::size_t expected = x.n_trials * per_trial;
  const std::size_t actual = bytes.size() - 12 - header_len;
  if (actual != expected) {
    if (actual % per_trial == 0) {
      throw FormatError(FormatErrorKind::kSizeMismatch,
                        "header declares " + std::to_string(x.n_trials) +
                            " trials but payload holds " +
                            std::to_string(actual / per_trial));
    }
    throw FormatError(FormatErrorKind::kTruncated,
                      "EEGB payload has " + std::to_string(actual) +
                          " bytes, expected " + std::to_string(expected));
  }
  const std::uint8_t* p = bytes.data() + 12 + header_len;
  x.labels.resize(x.n_trials);
  for (std::size_t i = 0; i < x.n_trials; ++i, p += 2) x.labels[i] = get_u16(p);
  x.data.resize(x.n_trials * x.n_channels * x.n_samples);
  for (double& v : x.data) {
    v = static_cast<double>(std::bit_cast<float>(get_u32(p)));
    p += 4;
  }
  try {
    x.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::kBadHeader, e.what());
  }
  return x;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string());
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FormatError(FormatErrorKind::kIo, "cannot rename onto " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()),
                              text.size()));
}

void save(const TrialSet& x, const std::filesystem::path& path) {
  write_file_atomic(path, encode_eegb(x));
}

TrialSet load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_eegb(bytes);
}

EegbHeader read_eegb_header(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                                      [](char a, std::uint8_t b) {
                                        return static_cast<std::uint8_t>(a) == b;
                                      })) {
    throw FormatError(FormatErrorKind::kBadMagic, "bad magic: not an EEGB file");
  }
  if (bytes.size() < 12) throw FormatError(FormatErrorKind::kTruncated, "truncated EEGB preamble");
  EegbHeader h;
  h.version = get_u32(bytes.data() + 4);
  const std::uint32_t len = get_u32(bytes.data() + 8);
  if (bytes.size() - 12 < len) throw FormatError(FormatErrorKind::kTruncated, "truncated EEGB header");
  h.json.assign(bytes.begin() + 12, bytes.begin() + 12 + len);
  return h;
}

// ---------------------------------------------------------------------------

Montage::Montage(std::string name, std::map<std::string, ElectrodePos> positions)
    : name_(std::move(name)) {
  for (auto& [k, v] : positions) {
    positions_[lower(k)] = v;
    display_[lower(k)] = k;
  }
}

std::optional<ElectrodePos> Montage::lookup(std::string_view electrode) const {
  const auto it = positions_.find(lower(electrode));
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Montage::names() const {
  std::vector<std::string> out;
  out.reserve(display_.size());
  for (const auto& [k, v] : display_) out.push_back(v);
  return out;
}

const Montage& builtin_montage() {
  // Rows run anterior to posterior at y = 0.8 .. -0.8; the outermost
  // electrode of each row sits on the radius-0.8 ring (18 degree steps).
  static const Montage montage("standard_1020", {
      {"Fp1", {-0.247, 0.761}}, {"Fpz", {0.0, 0.8}},   {"Fp2", {0.247, 0.761}},
      {"AF7", {-0.470, 0.647}}, {"AF3", {-0.25, 0.58}}, {"AFz", {0.0, 0.6}},
      {"AF4", {0.25, 0.58}},    {"AF8", {0.470, 0.647}},
      {"F7", {-0.647, 0.470}},  {"F5", {-0.49, 0.43}}, {"F3", {-0.33, 0.41}},
      {"F1", {-0.165, 0.40}},   {"Fz", {0.0, 0.4}},    {"F2", {0.165, 0.40}},
      {"F4", {0.33, 0.41}},     {"F6", {0.49, 0.43}},  {"F8", {0.647, 0.470}},
      {"FT7", {-0.761, 0.247}}, {"FC5", {-0.58, 0.21}}, {"FC3", {-0.39, 0.20}},
      {"FC1", {-0.195, 0.20}},  {"FCz", {0.0, 0.2}},   {"FC2", {0.195, 0.20}},
      {"FC4", {0.39, 0.20}},    {"FC6", {0.58, 0.21}}, {"FT8", {0.761, 0.247}},
      {"T7", {-0.8, 0.0}},      {"C5", {-0.6, 0.0}},   {"C3", {-0.4, 0.0}},
      {"C1", {-0.2, 0.0}},      {"Cz", {0.0, 0.0}},    {"C2", {0.2, 0.0}},
      {"C4", {0.4, 0.0}},       {"C6", {0.6, 0.0}},    {"T8", {0.8, 0.0}},
      {"TP7", {-0.761, -0.247}}, {"CP5", {-0.58, -0.21}}, {"CP3", {-0.39, -0.20}},
      {"CP1", {-0.195, -0.20}}, {"CPz", {0.0, -0.2}},  {"CP2", {0.195, -0.20}},
      {"CP4", {0.39, -0.20}},   {"CP6", {0.58, -0.21}}, {"TP8", {0.761, -0.247}},
      {"P7", {-0.647, -0.470}}, {"P5", {-0.49, -0.43}}, {"P3", {-0.33, -0.41}},
      {"P1", {-0.165, -0.40}},  {"Pz", {0.0, -0.4}},   {"P2", {0.165, -0.40}},
      {"P4", {0.33, -0.41}},    {"P6", {0.49, -0.43}}, {"P8", {0.647, -0.470}},
      {"PO7", {-0.470, -0.647}}, {"PO3", {-0.25, -0.58}}, {"POz", {0.0, -0.6}},
      {"PO4", {0.25, -0.58}},   {"PO8", {0.470, -0.647}},
      {"O1", {-0.247, -0.761}}, {"Oz", {0.0, -0.8}},   {"O2", {0.247, -0.761}},
      // older 10-20 names
      {"T3", {-0.8, 0.0}},      {"T4", {0.8, 0.0}},
      {"T5", {-0.647, -0.470}}, {"T6", {0.647, -0.470}},
  });
  return montage;
}

std::optional<std::vector<ElectrodePos>> positions_for(
    const Montage& montage, const std::vector<std::string>& names) {
  std::vector<ElectrodePos> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    auto p = montage.lookup(n);
    if (!p) return std::nullopt;
    out.push_back(*p);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> synthetic_channel_names(std::size_t c) {
  static const std::vector<std::string> kNames = {
      "C3", "Cz", "C4", "Fz", "Pz", "FC1", "FC2", "CP1", "CP2", "F3", "F4",
      "P3", "P4", "Fp1", "Fp2", "O1", "O2", "T7", "T8", "P7", "P8", "F7", "F8",
      "POz", "Oz"};
  std::vector<std::string> out;
  out.reserve(c);
  for (std::size_t i = 0; i < c; ++i) {
    out.push_back(i < kNames.size() ? kNames[i] : "E" + std::to_string(i));
  }
  return out;
}

namespace {

TrialSet synthetic_shell(std::size_t n_per_class, std::size_t c, std::size_t t,
                         double fs_hz, std::vector<std::string> class_names) {
  TrialSet x;
  x.n_trials = 2 * n_per_class;
  x.n_channels = c;
  x.n_samples = t;
  x.fs_hz = fs_hz;
  x.class_names = std::move(class_names);
  x.channel_names = synthetic_channel_names(c);
  x.channel_pos = positions_for(builtin_montage(), x.channel_names);
  x.data.assign(x.n_trials * c * t, 0.0);
  x.labels.resize(x.n_trials);
  for (std::size_t i = 0; i < x.n_trials; ++i) x.labels[i] = static_cast<int>(i % 2);
  return x;
}

// Economy pink-noise filter (three one-pole sections plus a direct term)
// over unit Gaussian white noise, rescaled to the requested std.
void fill_pink(std::span<double> out, double std_dev, std::mt19937_64& rng) {
  std::normal_distribution<double> white(0.0, 1.0);
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  auto step = [&]() {
    const double w = white(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    return b0 + b1 + b2 + w * 0.1848;
  };
  for (int i = 0; i < 1000; ++i) step();  // settle the slow pole
  double mean = 0.0;
  for (double& v : out) {
    v = step();
    mean += v;
  }
  mean /= static_cast<double>(out.size());
  double sq = 0.0;
  for (double v : out) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(out.size()));
  const double k = sd > 0.0 ? std_dev / sd : 0.0;
  for (double& v : out) v = (v - mean) * k;
}

}  // namespace

TrialSet synth_erp(std::size_t n_per_class, std::size_t c, std::size_t t,
                   double fs_hz, std::uint64_t seed, const ErpOptions& options) {
  if (n_per_class < 1) throw std::invalid_argument("synth_erp: n_per_class must be >= 1");
  if (c < 3) throw std::invalid_argument("synth_erp: needs at least 3 channels");
  if (!(fs_hz > 0.0) || !(static_cast<double>(t) / fs_hz > 0.5)) {
    throw std::invalid_argument("synth_erp: trials must last longer than 0.5 s");
  }
  TrialSet x = synthetic_shell(n_per_class, c, t, fs_hz, {"correct", "error"});
  std::mt19937_64 rng(seed);

  std::vector<double> component(t);
  for (std::size_t s = 0; s < t; ++s) {
    const double ts = static_cast<double>(s) / fs_hz;
    const double dp = (ts - kErpPositivePeakS) / options.positive_width_s;
    const double dn = (ts - kErpNegativePeakS) / options.negative_width_s;
    component[s] = options.noise_std *
                   (options.positive_amplitude * std::exp(-0.5 * dp * dp) -
                    options.negative_amplitude * std::exp(-0.5 * dn * dn));
  }

  for (std::size_t i = 0; i < x.n_trials; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto dst = x.channel(i, ch);
      if (options.noise_std > 0.0) fill_pink(dst, options.noise_std, rng);
      if (x.labels[i] != 1) continue;
      double gain = 0.0;
      if (ch == kErpCentralChannel) {
        gain = 1.0;
      } else if (ch + 1 == kErpCentralChannel || ch == kErpCentralChannel + 1) {
        gain = options.neighbor_gain;
      }
      for (std::size_t s = 0; s < t; ++s) dst[s] += gain * component[s];
    }
  }
  return x;
}

TrialSet synth_erd(std::size_t n_per_class, std::size_t c, std::size_t t,
                   double fs_hz, std::uint64_t seed, const ErdOptions& options) {
  if (n_per_class < 1) throw std::invalid_argument("synth_erd: n_per_class must be >= 1");
  if (c < 4) throw std::invalid_argument("synth_erd: needs at least 4 channels");
  if (!(fs_hz >= 64.0)) throw std::invalid_argument("synth_erd: sampling rate must be >= 64 Hz");
  if (t < 1) throw std::invalid_argument("synth_erd: needs at least one sample");
  TrialSet x = synthetic_shell(n_per_class, c, t, fs_hz, {"right_hand", "left_hand"});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double omega = 2.0 * std::numbers::pi * options.rhythm_hz / fs_hz;

  for (std::size_t i = 0; i < x.n_trials; ++i) {
    const std::size_t erd_channel = x.labels[i] == 0 ? kErdLeftChannel : kErdRightChannel;
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto dst = x.channel(i, ch);
      const double phase = options.phase_jitter * unit(rng);
      double amp = options.rhythm_amplitude;
      if (ch == erd_channel) amp *= 1.0 - options.attenuation;
      for (std::size_t s = 0; s < t; ++s) {
        dst[s] = amp * std::sin(omega * static_cast<double>(s) + phase);
        if (options.noise_std > 0.0) dst[s] += options.noise_std * noise(rng);
      }
    }
  }
  return x;
}

}  // namespace lmda::dataio
