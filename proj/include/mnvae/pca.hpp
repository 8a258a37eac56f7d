#pragma once

#include <cmath>
#include <stdexcept>

#include "mnvae/svd.hpp"

namespace mnvae {

/// Center the rows of x and project onto the top-k right singular vectors of
/// the centered matrix. Component sign is fixed so the largest-magnitude
/// loading of each component is positive.
inline Matrix pca_project(const Matrix& x, std::size_t k) {
  if (x.rows < 2) throw std::invalid_argument("pca_project: need at least 2 rows");
  if (k > x.cols) throw std::invalid_argument("pca_project: k exceeds data dimension");
  if (k == 0) throw std::invalid_argument("pca_project: k must be positive");

  Matrix centered = x;
  for (std::size_t j = 0; j < x.cols; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) mean += x(i, j);
    mean /= static_cast<double>(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) centered(i, j) -= mean;
  }

  SvdResult s = svd(centered);

  // Loadings: rows of vt. Flip a component when its largest-|.| loading is
  // negative so the projection is deterministic.
  std::vector<double> flip(k, 1.0);
  for (std::size_t c = 0; c < k; ++c) {
    double best = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      if (std::abs(s.vt(c, j)) > std::abs(best)) best = s.vt(c, j);
    }
    if (best < 0.0) flip[c] = -1.0;
  }

  Matrix out(x.rows, k);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      const double* xi = centered.row(i);
      for (std::size_t j = 0; j < x.cols; ++j) acc += xi[j] * s.vt(c, j);
      out(i, c) = flip[c] * acc;
    }
  }
  return out;
}

}  // namespace mnvae
