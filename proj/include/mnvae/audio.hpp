#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mnvae {

/// Mono audio in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 16000;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

}  // namespace detail

/// Read a 16-bit PCM WAV file. Multichannel input is averaged down to mono;
/// integer samples are scaled by 1/32768.
inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: " + path + " is not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t len = detail::read_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) break;
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      format = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      sample_rate = detail::read_u32(bytes.data() + body + 4);
      bits = detail::read_u16(bytes.data() + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word aligned
  }

  if (format != 1) throw std::runtime_error("read_wav: " + path + ": only PCM WAV is supported");
  if (bits != 16) throw std::runtime_error("read_wav: " + path + ": only 16-bit samples supported");
  if (channels == 0 || sample_rate == 0 || data == nullptr)
    throw std::runtime_error("read_wav: " + path + ": malformed WAV header");

  const std::size_t total = data_len / 2;
  const std::size_t frames = total / channels;
  if (frames == 0) throw std::runtime_error("read_wav: " + path + ": zero-length audio");

  AudioBuffer buf;
  buf.sample_rate = static_cast<int>(sample_rate);
  buf.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + 2 * (f * channels + c);
      const std::int16_t s = static_cast<std::int16_t>(p[0] | (p[1] << 8));
      acc += static_cast<double>(s) / 32768.0;
    }
    buf.samples[f] = acc / static_cast<double>(channels);
  }
  return buf;
}

/// Write mono 16-bit PCM WAV. Samples are clamped to [-1, 1] before
/// quantization.
inline void write_wav(const AudioBuffer& buf, const std::string& path) {
  if (buf.samples.empty()) throw std::invalid_argument("write_wav: empty buffer");
  if (buf.sample_rate <= 0) throw std::invalid_argument("write_wav: invalid sample rate");
  for (double s : buf.samples)
    if (!std::isfinite(s)) throw std::invalid_argument("write_wav: non-finite sample");

  const std::uint32_t n = static_cast<std::uint32_t>(buf.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(buf.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(buf.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, 2 * n);
  for (double s : buf.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const long q = std::lround(clamped * 32768.0);
    const std::int16_t v = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
    detail::put_u16(out, static_cast<std::uint16_t>(v));
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("write_wav: short write to " + path);
}

/// Scale so that max |sample| == peak (no-op on silence).
inline AudioBuffer normalize_peak(AudioBuffer buf, double peak = 0.95) {
  double m = 0.0;
  for (double s : buf.samples) m = std::max(m, std::abs(s));
  if (m > 0.0) {
    const double g = peak / m;
    for (double& s : buf.samples) s *= g;
  }
  return buf;
}

}  // namespace mnvae
