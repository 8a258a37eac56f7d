#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mnvae/audio.hpp"
#include "mnvae/rng.hpp"

using namespace mnvae;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "mnvae_audio_test";
  fs::create_directories(p);
  return p;
}

// Hand-rolled PCM writer so read_wav is not checked against write_wav alone.
void write_pcm16(const fs::path& path, const std::vector<std::int16_t>& interleaved,
                 std::uint16_t channels, std::uint32_t rate, std::uint16_t format = 1) {
  std::vector<unsigned char> out;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
  };
  auto u16 = [&](std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
  };
  const std::uint32_t data_bytes = 2 * static_cast<std::uint32_t>(interleaved.size());
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  u32(36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * 2);
  u16(channels * 2);
  u16(16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  u32(data_bytes);
  for (std::int16_t s : interleaved) u16(static_cast<std::uint16_t>(s));
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace

TEST(ReadWav, SixteenBitScaling) {
  const fs::path p = temp_dir() / "single.wav";
  write_pcm16(p, {16384}, 1, 16000);
  AudioBuffer buf = read_wav(p.string());
  ASSERT_EQ(buf.samples.size(), 1u);
  EXPECT_DOUBLE_EQ(buf.samples[0], 0.5);
  EXPECT_EQ(buf.sample_rate, 16000);
}

TEST(ReadWav, StereoAveragesToMono) {
  const fs::path p = temp_dir() / "stereo.wav";
  const std::int16_t l = static_cast<std::int16_t>(std::lround(0.2 * 32768.0));
  const std::int16_t r = static_cast<std::int16_t>(std::lround(0.4 * 32768.0));
  write_pcm16(p, {l, r}, 2, 16000);
  AudioBuffer buf = read_wav(p.string());
  ASSERT_EQ(buf.samples.size(), 1u);
  EXPECT_NEAR(buf.samples[0], 0.3, 1.0 / 32768.0);
}

TEST(ReadWav, HeaderArithmetic) {
  const fs::path p = temp_dir() / "one_second.wav";
  std::vector<std::int16_t> samples(16000, 1000);
  write_pcm16(p, samples, 1, 16000);
  AudioBuffer buf = read_wav(p.string());
  EXPECT_EQ(buf.samples.size(), 16000u);
  EXPECT_EQ(buf.sample_rate, 16000);
}

TEST(ReadWav, Errors) {
  EXPECT_THROW(read_wav((temp_dir() / "missing.wav").string()), std::runtime_error);

  const fs::path float_wav = temp_dir() / "float.wav";
  write_pcm16(float_wav, {0, 0, 0, 0}, 1, 16000, /*format=*/3);
  EXPECT_THROW(read_wav(float_wav.string()), std::runtime_error);

  const fs::path empty = temp_dir() / "empty.wav";
  write_pcm16(empty, {}, 1, 16000);
  EXPECT_THROW(read_wav(empty.string()), std::runtime_error);
}

TEST(WriteWav, RoundTripWithinQuantizationStep) {
  Rng rng(5);
  AudioBuffer buf;
  buf.sample_rate = 16000;
  for (int i = 0; i < 100; ++i) buf.samples.push_back(rng.uniform(-1.0, 1.0));
  const fs::path p = temp_dir() / "roundtrip.wav";
  write_wav(buf, p.string());
  AudioBuffer back = read_wav(p.string());
  ASSERT_EQ(back.samples.size(), buf.samples.size());
  for (std::size_t i = 0; i < buf.samples.size(); ++i)
    EXPECT_LE(std::abs(back.samples[i] - buf.samples[i]), 1.0 / 32768.0);
}

TEST(WriteWav, ClampsOutOfRange) {
  AudioBuffer buf;
  buf.samples = {1.7, -2.5};
  const fs::path p = temp_dir() / "clamp.wav";
  write_wav(buf, p.string());
  AudioBuffer back = read_wav(p.string());
  EXPECT_NEAR(back.samples[0], 1.0, 2.0 / 32768.0);
  EXPECT_NEAR(back.samples[1], -1.0, 2.0 / 32768.0);
}

TEST(WriteWav, EmptyBufferThrows) {
  AudioBuffer buf;
  EXPECT_THROW(write_wav(buf, (temp_dir() / "x.wav").string()), std::invalid_argument);
}

TEST(WriteWav, UnwritablePathThrows) {
  AudioBuffer buf;
  buf.samples = {0.1};
  EXPECT_THROW(write_wav(buf, "/nonexistent_dir_zzz/x.wav"), std::runtime_error);
}

TEST(NormalizePeak, ScalesToTarget) {
  AudioBuffer buf;
  buf.samples = {0.1, -0.5, 0.25};
  AudioBuffer out = normalize_peak(buf);
  double peak = 0;
  for (double s : out.samples) peak = std::max(peak, std::abs(s));
  EXPECT_NEAR(peak, 0.95, 1e-12);

  AudioBuffer silent;
  silent.samples = {0.0, 0.0};
  AudioBuffer still_silent = normalize_peak(silent);
  EXPECT_DOUBLE_EQ(still_silent.samples[0], 0.0);
}
