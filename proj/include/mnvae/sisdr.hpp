#pragma once

#include <cmath>
#include <stdexcept>

#include "mnvae/audio.hpp"

namespace mnvae {

/// Scale-invariant signal-to-distortion ratio in dB, capped at +-60.
/// The estimate is compared against the least-squares projection of itself
/// onto the reference, so constant gains do not affect the score.
inline double si_sdr(const AudioBuffer& reference, const AudioBuffer& estimate) {
  if (reference.samples.size() != estimate.samples.size())
    throw std::invalid_argument("si_sdr: length mismatch");
  if (reference.samples.empty()) throw std::invalid_argument("si_sdr: empty signals");

  double ref_energy = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < reference.samples.size(); ++i) {
    ref_energy += reference.samples[i] * reference.samples[i];
    cross += reference.samples[i] * estimate.samples[i];
  }
  if (ref_energy == 0.0) throw std::invalid_argument("si_sdr: zero reference");

  const double alpha = cross / ref_energy;
  double target = 0.0, error = 0.0;
  for (std::size_t i = 0; i < reference.samples.size(); ++i) {
    const double t = alpha * reference.samples[i];
    const double e = t - estimate.samples[i];
    target += t * t;
    error += e * e;
  }
  if (error == 0.0) return 60.0;
  if (target == 0.0) return -60.0;
  const double db = 10.0 * std::log10(target / error);
  return std::clamp(db, -60.0, 60.0);
}

}  // namespace mnvae
