#include "lmda/dataio.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

namespace lmda::dataio {
namespace {

namespace fs = std::filesystem;

TrialSet small_set() {
  TrialSet x;
  x.n_trials = 3;
  x.n_channels = 2;
  x.n_samples = 5;
  x.fs_hz = 128.0;
  x.class_names = {"left", "right"};
  x.channel_names = {"C3", "C4"};
  x.channel_pos = std::vector<ElectrodePos>{{-0.4, 0.0}, {0.4, 0.0}};
  x.labels = {0, 1, 1};
  std::mt19937_64 rng(42);
  std::normal_distribution<double> g(0.0, 3.0);
  for (std::size_t i = 0; i < 30; ++i) x.data.push_back(g(rng));
  return x;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

FormatErrorKind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_eegb(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return FormatErrorKind::kIo;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lmda_dataio_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(Eegb, RoundTripThroughFloat32) {
  const TrialSet x = small_set();
  const TrialSet y = decode_eegb(encode_eegb(x));
  EXPECT_EQ(y.n_trials, x.n_trials);
  EXPECT_EQ(y.n_channels, x.n_channels);
  EXPECT_EQ(y.n_samples, x.n_samples);
  EXPECT_EQ(y.fs_hz, x.fs_hz);
  EXPECT_EQ(y.labels, x.labels);
  EXPECT_EQ(y.class_names, x.class_names);
  EXPECT_EQ(y.channel_names, x.channel_names);
  EXPECT_EQ(y.channel_pos, x.channel_pos);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    EXPECT_EQ(y.data[i], static_cast<double>(static_cast<float>(x.data[i])));
  }
}

TEST(Eegb, ByteLayout) {
  const TrialSet x = small_set();
  const auto b = encode_eegb(x);
  ASSERT_GE(b.size(), 12u);
  EXPECT_EQ(std::memcmp(b.data(), "EEGB", 4), 0);
  EXPECT_EQ(read_u32(b, 4), 1u);
  const std::uint32_t hlen = read_u32(b, 8);
  EXPECT_EQ(b.size(), 12u + hlen + 3 * 2 + 30 * 4);
  const std::size_t labels_at = 12 + hlen;
  EXPECT_EQ(b[labels_at + 2], 1);
  EXPECT_EQ(b[labels_at + 3], 0);
  // First sample is little-endian float32, time fastest.
  float first;
  std::memcpy(&first, b.data() + labels_at + 6, 4);
  EXPECT_EQ(first, static_cast<float>(x.data[0]));
  const std::string header(b.begin() + 12, b.begin() + 12 + hlen);
  for (const char* key : {"n_trials", "n_channels", "n_samples", "fs_hz", "class_names",
                          "channel_names", "channel_pos"}) {
    EXPECT_NE(header.find(key), std::string::npos) << key;
  }
}

TEST(Eegb, DistinctErrors) {
  EXPECT_EQ(decode_kind({}), FormatErrorKind::kBadMagic);
  EXPECT_EQ(decode_kind({'N', 'O', 'P', 'E', 1, 0, 0, 0, 0, 0, 0, 0}), FormatErrorKind::kBadMagic);

  const auto good = encode_eegb(small_set());
  auto version = good;
  version[4] = 2;
  EXPECT_EQ(decode_kind(version), FormatErrorKind::kVersionMismatch);

  auto truncated = good;
  truncated.resize(20);
  EXPECT_EQ(decode_kind(truncated), FormatErrorKind::kTruncated);

  auto short_payload = good;
  short_payload.pop_back();
  EXPECT_EQ(decode_kind(short_payload), FormatErrorKind::kTruncated);

  auto garbage = good;
  garbage[12] = '#';
  EXPECT_EQ(decode_kind(garbage), FormatErrorKind::kBadHeader);
}

TEST(Eegb, HeaderClaimsMoreTrialsThanPayload) {
  // Header says 10 trials; the payload holds exactly 9 complete trials.
  TrialSet nine = small_set();
  nine.n_trials = 9;
  nine.labels.assign(9, 0);
  nine.data.assign(9 * 2 * 5, 0.5);
  const auto bytes9 = encode_eegb(nine);
  const std::uint32_t hlen = read_u32(bytes9, 8);
  std::string header(bytes9.begin() + 12, bytes9.begin() + 12 + hlen);
  const auto pos = header.find("\"n_trials\":9");
  ASSERT_NE(pos, std::string::npos) << header;
  header.replace(pos, 12, "\"n_trials\":10");
  std::vector<std::uint8_t> forged = {'E', 'E', 'G', 'B', 1, 0, 0, 0};
  const auto new_len = static_cast<std::uint32_t>(header.size());
  for (int s = 0; s < 32; s += 8) forged.push_back(static_cast<std::uint8_t>(new_len >> s));
  forged.insert(forged.end(), header.begin(), header.end());
  forged.insert(forged.end(), bytes9.begin() + 12 + hlen, bytes9.end());
  try {
    decode_eegb(forged);
    FAIL() << "expected a size error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::kSizeMismatch) << e.what();
  }
}

TEST_F(TempDir, SaveLoadAndMissingFile) {
  const TrialSet x = small_set();
  const fs::path p = dir_ / "x.eegb";
  save(x, p);
  const TrialSet y = load(p);
  EXPECT_EQ(y.labels, x.labels);
  EXPECT_EQ(read_eegb_header(p).version, 1u);
  try {
    load(dir_ / "missing.eegb");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::kIo);
    EXPECT_NE(std::string(e.what()).find("missing.eegb"), std::string::npos);
  }
  // No temporary files left behind.
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(dir_)) ++n;
  EXPECT_EQ(n, 1u);
}

TEST(TrialSetInvariants, Validate) {
  TrialSet x = small_set();
  EXPECT_NO_THROW(x.validate());
  x.labels[1] = 2;
  EXPECT_THROW(x.validate(), std::invalid_argument);
  x = small_set();
  (*x.channel_pos)[0] = {0.9, 0.9};
  EXPECT_THROW(x.validate(), std::invalid_argument);
  x = small_set();
  x.channel_names.pop_back();
  EXPECT_THROW(x.validate(), std::invalid_argument);
}

TEST(MontageTest, LookupAndDisk) {
  const Montage& m = builtin_montage();
  ASSERT_TRUE(m.lookup("cz"));
  EXPECT_EQ(*m.lookup("CZ"), (ElectrodePos{0.0, 0.0}));
  EXPECT_LT(m.lookup("C3")->x, 0.0);
  EXPECT_GT(m.lookup("Fz")->y, 0.0);
  EXPECT_FALSE(m.lookup("XYZ"));
  for (const auto& n : m.names()) {
    const auto p = *m.lookup(n);
    EXPECT_LE(p.x * p.x + p.y * p.y, 1.0) << n;
  }
  EXPECT_FALSE(positions_for(m, {"C3", "nope"}));
  EXPECT_TRUE(positions_for(m, {"C3", "c4"}));
}

TEST(Synth, ChannelNames) {
  const auto names = synthetic_channel_names(8);
  ASSERT_EQ(names.size(), 8u);
  EXPECT_EQ(names[kErdLeftChannel], "C3");
  EXPECT_EQ(names[kErpCentralChannel], "Cz");
  EXPECT_EQ(names[kErdRightChannel], "C4");
}

TEST(Synth, ErpStructure) {
  const TrialSet x = synth_erp(60, 8, 250, 200.0, 3);
  EXPECT_NO_THROW(x.validate());
  EXPECT_EQ(x.n_trials, 120u);
  EXPECT_EQ(x.class_names, (std::vector<std::string>{"correct", "error"}));
  EXPECT_EQ(x.labels[0], 0);
  EXPECT_EQ(x.labels[1], 1);
  // Class-mean difference at Cz peaks near the positive component.
  std::vector<double> diff(250, 0.0);
  for (std::size_t i = 0; i < x.n_trials; ++i) {
    const double sgn = x.labels[i] == 1 ? 1.0 : -1.0;
    const auto cz = x.channel(i, kErpCentralChannel);
    for (std::size_t s = 0; s < 250; ++s) diff[s] += sgn * cz[s] / 60.0;
  }
  const auto peak = std::max_element(diff.begin(), diff.end()) - diff.begin();
  EXPECT_NEAR(static_cast<double>(peak) / 200.0, kErpPositivePeakS, 0.02);
  const auto trough = std::min_element(diff.begin(), diff.end()) - diff.begin();
  EXPECT_NEAR(static_cast<double>(trough) / 200.0, kErpNegativePeakS, 0.03);
}

TEST(Synth, ErdStructure) {
  ErdOptions opt;
  opt.noise_std = 0.0;
  const TrialSet x = synth_erd(4, 8, 500, 250.0, 0, opt);
  EXPECT_EQ(x.class_names, (std::vector<std::string>{"right_hand", "left_hand"}));
  auto rms = [&](std::size_t i, std::size_t c) {
    double s = 0.0;
    for (double v : x.channel(i, c)) s += v * v;
    return std::sqrt(s / 500.0);
  };
  // Trial 0 is class 0 (C3 attenuated); trial 1 is class 1 (C4 attenuated).
  EXPECT_NEAR(rms(0, kErdLeftChannel) / rms(0, kErdRightChannel), 0.4, 0.01);
  EXPECT_NEAR(rms(1, kErdRightChannel) / rms(1, kErdLeftChannel), 0.4, 0.01);
  EXPECT_NEAR(rms(0, 5), std::sqrt(0.5), 0.01);
}

TEST(Synth, DeterministicInSeed) {
  EXPECT_EQ(synth_erd(5, 8, 100, 250.0, 7).data, synth_erd(5, 8, 100, 250.0, 7).data);
  EXPECT_NE(synth_erd(5, 8, 100, 250.0, 7).data, synth_erd(5, 8, 100, 250.0, 8).data);
  EXPECT_EQ(synth_erp(5, 8, 250, 200.0, 7).data, synth_erp(5, 8, 250, 200.0, 7).data);
}

}  // namespace
}  // namespace lmda::dataio
