#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "mnvae/audio.hpp"
#include "mnvae/fft.hpp"
#include "mnvae/matrix.hpp"

namespace mnvae {

/// Analysis parameters. With the default 1024-point transform the one-sided
/// spectrum has 513 bins; the Nyquist bin is dropped so spectrograms carry
/// exactly 512 bins, and inversion reconstructs it as zero.
struct StftConfig {
  std::size_t fft_size = 1024;
  std::size_t hop = 256;
  std::string window = "hann";  // periodic Hann

  std::size_t bins() const { return fft_size / 2; }
};

/// Magnitude + phase of an audio signal, frames x bins.
struct Spectrogram {
  Matrix mag;    // nonnegative
  Matrix phase;  // radians
  StftConfig config;
  int sample_rate = 16000;

  std::size_t frames() const { return mag.rows; }
  std::size_t bins() const { return mag.cols; }
};

namespace detail {

inline void validate_stft_config(const StftConfig& cfg) {
  if (cfg.fft_size == 0 || (cfg.fft_size & (cfg.fft_size - 1)) != 0)
    throw std::invalid_argument("stft: fft_size must be a power of two");
  if (cfg.hop == 0 || cfg.hop > cfg.fft_size)
    throw std::invalid_argument("stft: hop must be in (0, fft_size]");
  if (cfg.window != "hann") throw std::invalid_argument("stft: unknown window " + cfg.window);
}

inline std::vector<double> periodic_hann(std::size_t n) {
  std::vector<double> w(n);
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

// Overlap-added squared window must stay bounded away from zero over an
// interior period, otherwise the configuration is not invertible.
inline void check_cola(const StftConfig& cfg) {
  const auto w = periodic_hann(cfg.fft_size);
  double min_d = 1e300, max_d = 0.0;
  for (std::size_t n = cfg.fft_size; n < 2 * cfg.fft_size; ++n) {
    double d = 0.0;
    for (std::size_t t = 0; t * cfg.hop <= n; ++t) {
      const std::size_t off = n - t * cfg.hop;
      if (off < cfg.fft_size) d += w[off] * w[off];
    }
    min_d = std::min(min_d, d);
    max_d = std::max(max_d, d);
  }
  if (min_d <= 1e-9 * max_d)
    throw std::invalid_argument("istft: window/hop violate the overlap-add condition");
}

}  // namespace detail

/// Windowed DFT magnitudes and phases. Frame t covers samples
/// [t*hop, t*hop + fft_size).
inline Spectrogram stft(const AudioBuffer& buf, const StftConfig& cfg = {}) {
  detail::validate_stft_config(cfg);
  if (buf.samples.size() < cfg.fft_size)
    throw std::invalid_argument("stft: audio shorter than one frame");

  const std::size_t frames = (buf.samples.size() - cfg.fft_size) / cfg.hop + 1;
  const std::size_t bins = cfg.bins();
  const auto window = detail::periodic_hann(cfg.fft_size);

  Spectrogram spec;
  spec.config = cfg;
  spec.sample_rate = buf.sample_rate;
  spec.mag = Matrix(frames, bins);
  spec.phase = Matrix(frames, bins);

  std::vector<std::complex<double>> frame(cfg.fft_size);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = buf.samples.data() + t * cfg.hop;
    for (std::size_t i = 0; i < cfg.fft_size; ++i) frame[i] = src[i] * window[i];
    detail::fft_inplace(frame, false);
    double* mrow = spec.mag.row(t);
    double* prow = spec.phase.row(t);
    for (std::size_t k = 0; k < bins; ++k) {
      mrow[k] = std::abs(frame[k]);
      prow[k] = std::arg(frame[k]);
    }
  }
  return spec;
}

/// Overlap-add synthesis with window-square normalization. The dropped
/// Nyquist bin is reconstructed as zero.
inline AudioBuffer istft(const Spectrogram& spec) {
  detail::validate_stft_config(spec.config);
  check_same_shape(spec.mag, spec.phase, "istft");
  if (spec.mag.cols != spec.config.bins())
    throw std::invalid_argument("istft: bin count does not match config");
  if (spec.mag.rows == 0) throw std::invalid_argument("istft: empty spectrogram");
  detail::check_cola(spec.config);

  const std::size_t fft_size = spec.config.fft_size;
  const std::size_t hop = spec.config.hop;
  const std::size_t frames = spec.mag.rows;
  const std::size_t bins = spec.mag.cols;
  const std::size_t out_len = (frames - 1) * hop + fft_size;
  const auto window = detail::periodic_hann(fft_size);

  std::vector<double> acc(out_len, 0.0), norm(out_len, 0.0);
  std::vector<std::complex<double>> frame(fft_size);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* mrow = spec.mag.row(t);
    const double* prow = spec.phase.row(t);
    for (std::size_t k = 0; k < bins; ++k)
      frame[k] = std::polar(mrow[k], prow[k]);
    frame[fft_size / 2] = 0.0;  // Nyquist
    for (std::size_t k = 1; k < bins; ++k) frame[fft_size - k] = std::conj(frame[k]);
    detail::fft_inplace(frame, true);
    const std::size_t base = t * hop;
    for (std::size_t i = 0; i < fft_size; ++i) {
      acc[base + i] += frame[i].real() * window[i];
      norm[base + i] += window[i] * window[i];
    }
  }

  AudioBuffer out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i)
    out.samples[i] = norm[i] > 1e-12 ? acc[i] / norm[i] : 0.0;
  return out;
}

}  // namespace mnvae
