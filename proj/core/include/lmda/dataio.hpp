#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmda/trialset.hpp"

namespace lmda::dataio {

enum class FormatErrorKind {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kSizeMismatch,
  kBadHeader,
};

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

inline constexpr std::uint32_t kEegbVersion = 1;

/// EEGB v1 layout, all integers little-endian:
///   "EEGB" | u32 version | u32 header_len | header JSON (UTF-8)
///   | u16 labels[n_trials] | f32 data[n_trials][n_channels][n_samples]
std::vector<std::uint8_t> encode_eegb(const TrialSet& x);
TrialSet decode_eegb(std::span<const std::uint8_t> bytes);

void save(const TrialSet& x, const std::filesystem::path& path);
TrialSet load(const std::filesystem::path& path);

/// Parsed EEGB header without the payload.
struct EegbHeader {
  std::uint32_t version = 0;
  std::string json;
};
EegbHeader read_eegb_header(const std::filesystem::path& path);

/// Writes bytes to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Electrode montage.

/// Standard 10-20 / 10-10 positions under an azimuthal equidistant
/// projection: Cz at the origin, the Fpz-T7-Oz-T8 ring at radius 0.8,
/// nose towards +y, right hemisphere towards +x.
class Montage {
 public:
  Montage(std::string name, std::map<std::string, ElectrodePos> positions);

  const std::string& name() const { return name_; }
  /// Case-insensitive.
  std::optional<ElectrodePos> lookup(std::string_view electrode) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return positions_.size(); }

 private:
  std::string name_;
  std::map<std::string, ElectrodePos> positions_;  // keyed by lower case
  std::map<std::string, std::string> display_;     // lower case -> as given
};

const Montage& builtin_montage();

/// Positions for every name, or nullopt if any name is unknown.
std::optional<std::vector<ElectrodePos>> positions_for(
    const Montage& montage, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Synthetic data.

/// Channel naming shared by both generators. The first entries are C3, Cz,
/// C4; channels beyond the named list are called E<index> and have no
/// position.
std::vector<std::string> synthetic_channel_names(std::size_t c);

inline constexpr std::size_t kErpCentralChannel = 1;  // Cz
inline constexpr std::size_t kErdLeftChannel = 0;     // C3
inline constexpr std::size_t kErdRightChannel = 2;    // C4

/// Seconds at which the positive / negative ERP components peak.
inline constexpr double kErpPositivePeakS = 0.365;
inline constexpr double kErpNegativePeakS = 0.25;

struct ErpOptions {
  double noise_std = 1.0;
  double positive_amplitude = 3.0;   // in units of noise_std
  double negative_amplitude = 1.5;   // in units of noise_std
  double positive_width_s = 0.05;
  double negative_width_s = 0.04;
  double neighbor_gain = 0.5;
};

/// Two classes ("correct", "error"). Error trials carry a negative bump at
/// 0.25 s and a positive bump at 0.365 s on Cz, attenuated on C3 and C4.
/// Background is 1/f-shaped Gaussian noise. Labels alternate 0,1,0,1,...
TrialSet synth_erp(std::size_t n_per_class, std::size_t c, std::size_t t,
                   double fs_hz, std::uint64_t seed,
                   const ErpOptions& options = {});

struct ErdOptions {
  double rhythm_hz = 10.0;
  double rhythm_amplitude = 1.0;
  double attenuation = 0.6;        // fractional amplitude drop on ERD channel
  double noise_std = 1.0;
  double phase_jitter = 3.141592653589793;  // uniform +- jitter, radians
};

/// Two classes ("right_hand", "left_hand"). A 10 Hz rhythm rides on every
/// channel; class 0 attenuates it on C3, class 1 on C4. Additive white
/// Gaussian noise. Labels alternate 0,1,0,1,...
TrialSet synth_erd(std::size_t n_per_class, std::size_t c, std::size_t t,
                   double fs_hz, std::uint64_t seed,
                   const ErdOptions& options = {});

}  // namespace lmda::dataio
