#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "mnvae/audio.hpp"
#include "mnvae/rng.hpp"

namespace mnvae {

/// Parameters of one synthetic "speaker": fundamental plus two resonance
/// centers shaping the harmonic rolloff. Distinct voices give the frame
/// distribution distinct spectral modes.
struct SynthVoice {
  double f0_base = 150.0;
  std::array<double, 2> formants = {500.0, 1500.0};
};

/// Canonical voice family used by the corpus generator and tests.
inline SynthVoice synth_voice(std::size_t index) {
  static const SynthVoice table[] = {
      {130.0, {450.0, 1700.0}},
      {210.0, {700.0, 2400.0}},
      {95.0, {350.0, 1100.0}},
      {170.0, {900.0, 3100.0}},
      {250.0, {550.0, 2000.0}},
      {115.0, {800.0, 1400.0}},
  };
  return table[index % (sizeof(table) / sizeof(table[0]))];
}

/// Harmonic tone complex with syllable-like silences and lively prosody: each
/// syllable gets its own fundamental (jittered around the voice base) and a
/// pitch glide, so harmonics sweep across spectrogram bins the way real
/// speech does instead of sitting still.
inline AudioBuffer synth_speech(double duration_s, int sample_rate, const SynthVoice& voice,
                                std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(duration_s * sample_rate);
  AudioBuffer buf;
  buf.sample_rate = sample_rate;
  buf.samples.assign(n, 0.0);

  // Per-sample voicing gate and f0 contour, built syllable by syllable.
  std::vector<double> gate(n, 0.0), f0(n, voice.f0_base);
  const std::size_t ramp = static_cast<std::size_t>(0.012 * sample_rate);
  std::size_t pos = 0;
  bool voiced = true;
  while (pos < n) {
    const double len_s = voiced ? rng.uniform(0.08, 0.20) : rng.uniform(0.08, 0.20);
    const std::size_t len = static_cast<std::size_t>(len_s * sample_rate);
    if (voiced) {
      const double base = voice.f0_base * (1.0 + rng.uniform(-0.14, 0.14));
      const double glide = rng.uniform(-0.16, 0.16);  // relative sweep over the syllable
      for (std::size_t i = 0; i < len && pos + i < n; ++i) {
        double g = 1.0;
        if (i < ramp) g = 0.5 - 0.5 * std::cos(3.14159265358979323846 * i / ramp);
        if (i + ramp > len) {
          const std::size_t left = len - i;
          g = std::min(g, 0.5 - 0.5 * std::cos(3.14159265358979323846 * left / ramp));
        }
        gate[pos + i] = g;
        const double frac = static_cast<double>(i) / static_cast<double>(len);
        f0[pos + i] = base * (1.0 + glide * (frac - 0.5));
      }
    }
    pos += len;
    voiced = !voiced;
  }

  const double vibrato_rate = rng.uniform(4.5, 6.5);
  const double vibrato_phase = rng.uniform(0.0, 6.28);
  const int max_harm = 14;
  std::array<double, 14> phase{};
  for (int h = 0; h < max_harm; ++h) phase[h] = rng.uniform(0.0, 6.28);

  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double f = f0[i] * (1.0 + 0.02 * std::sin(2 * 3.14159265358979323846 * vibrato_rate * t +
                                                    vibrato_phase));
    double v = 0.0;
    for (int h = 1; h <= max_harm; ++h) {
      const double fh = f * h;
      if (fh > 0.38 * sample_rate) break;
      double res = 0.12;
      for (double fc : voice.formants)
        res += std::exp(-(fh - fc) * (fh - fc) / (2 * 350.0 * 350.0));
      const double amp = res / std::sqrt(static_cast<double>(h));
      phase[h - 1] += 2 * 3.14159265358979323846 * fh / sample_rate;
      v += amp * std::sin(phase[h - 1]);
    }
    buf.samples[i] = 0.18 * gate[i] * v;
  }
  return buf;
}

/// Looped chord drone plus periodic percussive bursts; tiling one rendered
/// loop keeps the spectrogram exactly periodic (low rank).
inline AudioBuffer synth_music(double duration_s, int sample_rate, std::uint64_t seed,
                               double loop_s = 0.5, double percussion_level = 1.0) {
  Rng rng(seed);
  const std::size_t loop_len = static_cast<std::size_t>(loop_s * sample_rate);
  std::vector<double> loop(loop_len, 0.0);

  // Chord: steady partials.
  const double chord[] = {196.0, 247.0, 294.0, 392.0};
  for (double f : chord) {
    const double ph = rng.uniform(0.0, 6.28);
    for (std::size_t i = 0; i < loop_len; ++i)
      loop[i] += 0.22 * std::sin(2 * 3.14159265358979323846 * f * i / sample_rate + ph);
  }

  // Two percussive bursts per loop: decaying smoothed noise.
  const std::size_t hits[] = {0, loop_len / 2};
  for (std::size_t start : hits) {
    const std::size_t burst = static_cast<std::size_t>(0.06 * sample_rate);
    double lp = 0.0;
    for (std::size_t i = 0; i < burst && start + i < loop_len; ++i) {
      lp = 0.6 * lp + 0.4 * rng.normal();  // crude lowpass keeps it thumpy
      const double env = std::exp(-static_cast<double>(i) / (0.018 * sample_rate));
      loop[start + i] += percussion_level * 0.9 * env * lp;
    }
  }

  const std::size_t n = static_cast<std::size_t>(duration_s * sample_rate);
  AudioBuffer buf;
  buf.sample_rate = sample_rate;
  buf.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf.samples[i] = loop[i % loop_len];
  return buf;
}

/// Scale the background so that 10 log10(P_fore / P_back) equals snr_db, then
/// add. Signals must share length and rate.
inline AudioBuffer mix_at_snr(const AudioBuffer& foreground, const AudioBuffer& background,
                              double snr_db) {
  if (foreground.samples.size() != background.samples.size())
    throw std::invalid_argument("mix_at_snr: length mismatch");
  double pf = 0.0, pb = 0.0;
  for (double s : foreground.samples) pf += s * s;
  for (double s : background.samples) pb += s * s;
  if (pb == 0.0) throw std::invalid_argument("mix_at_snr: silent background");
  const double gain = std::sqrt(pf / pb * std::pow(10.0, -snr_db / 10.0));
  AudioBuffer out = foreground;
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] += gain * background.samples[i];
  return out;
}

}  // namespace mnvae
