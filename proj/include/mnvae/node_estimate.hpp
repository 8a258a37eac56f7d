#pragma once

#include <stdexcept>
#include <vector>

#include "mnvae/gmm.hpp"
#include "mnvae/pca.hpp"
#include "mnvae/stft.hpp"

namespace mnvae {

/// Recommended latent node counts derived from a likelihood curve. k is the
/// elbow cluster count minus one (one cluster absorbs the non-speech
/// residual); k_safe adds two spare nodes for margin.
struct NodeEstimate {
  std::size_t elbow_components = 0;
  std::size_t k = 0;
  std::size_t k_safe = 0;
};

/// Stack every frame of every spectrogram and project to the first two
/// principal components.
inline Matrix frame_features(const std::vector<Spectrogram>& specs) {
  std::size_t total = 0;
  std::size_t bins = 0;
  for (const auto& s : specs) {
    total += s.frames();
    if (bins == 0) bins = s.bins();
    if (s.bins() != bins) throw std::invalid_argument("frame_features: inconsistent bin counts");
  }
  if (total < 2) throw std::invalid_argument("frame_features: need at least 2 frames");

  Matrix stacked(total, bins);
  std::size_t row = 0;
  for (const auto& s : specs) {
    for (std::size_t t = 0; t < s.frames(); ++t, ++row)
      std::copy(s.mag.row(t), s.mag.row(t) + bins, stacked.row(row));
  }
  return pca_project(stacked, 2);
}

/// Elbow rule: the chosen component count n* is the first n whose marginal
/// likelihood gain to n+1, normalized by the largest gain on the curve, drops
/// below the threshold. Depends only on likelihood differences.
inline NodeEstimate estimate_nodes(const LikelihoodCurve& curve,
                                   double gain_ratio_threshold = 0.1) {
  const auto& pts = curve.points;
  if (pts.size() < 2) throw std::invalid_argument("estimate_nodes: curve needs >= 2 points");

  std::vector<double> gains(pts.size() - 1);
  double max_gain = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    gains[i] = std::max(0.0, pts[i + 1].second - pts[i].second);
    max_gain = std::max(max_gain, gains[i]);
  }

  NodeEstimate est;
  if (max_gain <= 1e-12) {
    // Flat curve: a single component already explains the data.
    est.elbow_components = pts.front().first;
  } else {
    est.elbow_components = pts.back().first;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (gains[i] / max_gain < gain_ratio_threshold) {
        est.elbow_components = pts[i].first;
        break;
      }
    }
  }
  est.k = est.elbow_components > 1 ? est.elbow_components - 1 : 1;
  est.k_safe = est.k + 2;
  return est;
}

}  // namespace mnvae
