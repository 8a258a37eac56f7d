#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mnvae/matrix.hpp"
#include "mnvae/rng.hpp"

namespace mnvae {

/// Full-covariance 2-D Gaussian mixture fitted by EM.
struct GmmFit {
  std::size_t n_components = 0;
  std::vector<double> weights;                    // simplex
  std::vector<std::array<double, 2>> means;       // [k][2]
  std::vector<std::array<double, 3>> covariances; // [k] packed (xx, xy, yy), SPD
  double train_log_likelihood = 0.0;              // mean per-point log density
  std::vector<double> loglik_history;             // per EM iteration (best restart)
  bool floored = false;  // a covariance hit the eigenvalue floor (degenerate data)
};

/// (n_components, train_log_likelihood) pairs over a model-size range.
struct LikelihoodCurve {
  std::vector<std::pair<std::size_t, double>> points;  // n strictly increasing
};

namespace detail {

constexpr double kCovEigenFloor = 1e-6;

// Clamp eigenvalues of a symmetric 2x2 to >= floor. Returns true if clamped.
inline bool floor_spd(std::array<double, 3>& c) {
  const double a = c[0], b = c[1], d = c[2];
  const double tr = a + d;
  const double diff = a - d;
  const double disc = std::sqrt(diff * diff + 4.0 * b * b);
  double l1 = 0.5 * (tr + disc);
  double l2 = 0.5 * (tr - disc);
  if (l2 >= kCovEigenFloor && l1 >= kCovEigenFloor) return false;

  // Eigenvector for l1.
  double vx, vy;
  if (std::abs(b) > 1e-300) {
    vx = l1 - d;
    vy = b;
  } else if (a >= d) {
    vx = 1.0;
    vy = 0.0;
  } else {
    vx = 0.0;
    vy = 1.0;
  }
  const double norm = std::sqrt(vx * vx + vy * vy);
  vx /= norm;
  vy /= norm;
  l1 = std::max(l1, kCovEigenFloor);
  l2 = std::max(l2, kCovEigenFloor);
  // Reassemble v l1 v^T + v_perp l2 v_perp^T with v_perp = (-vy, vx).
  c[0] = l1 * vx * vx + l2 * vy * vy;
  c[1] = l1 * vx * vy - l2 * vy * vx;
  c[2] = l1 * vy * vy + l2 * vx * vx;
  return true;
}

struct Gauss2 {
  // Cached inverse and log normalizer for one component.
  double inv00, inv01, inv11, log_norm;
};

inline Gauss2 prepare(const std::array<double, 3>& c) {
  const double det = c[0] * c[2] - c[1] * c[1];
  Gauss2 g;
  g.inv00 = c[2] / det;
  g.inv01 = -c[1] / det;
  g.inv11 = c[0] / det;
  g.log_norm = -std::log(2.0 * 3.14159265358979323846) - 0.5 * std::log(det);
  return g;
}

inline double log_density(const Gauss2& g, double dx, double dy) {
  const double q = dx * (g.inv00 * dx + g.inv01 * dy) + dy * (g.inv01 * dx + g.inv11 * dy);
  return g.log_norm - 0.5 * q;
}

// k-means++-style seeding: first mean uniform, then each next mean sampled
// with probability proportional to squared distance from the nearest chosen.
inline std::vector<std::array<double, 2>> kmeanspp_means(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows;
  std::vector<std::array<double, 2>> means;
  means.reserve(k);
  const std::size_t first = rng.uniform_index(n);
  means.push_back({x(first, 0), x(first, 1)});
  std::vector<double> d2(n, std::numeric_limits<double>::max());
  while (means.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = x(i, 0) - means.back()[0];
      const double dy = x(i, 1) - means.back()[1];
      d2[i] = std::min(d2[i], dx * dx + dy * dy);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(n);
    }
    means.push_back({x(pick, 0), x(pick, 1)});
  }
  return means;
}

inline GmmFit em_run(const Matrix& x, std::size_t k, std::uint64_t seed) {
  const std::size_t n = x.rows;
  Rng rng(seed);

  GmmFit fit;
  fit.n_components = k;
  fit.weights.assign(k, 1.0 / static_cast<double>(k));
  fit.means = kmeanspp_means(x, k, rng);

  // Shared initial covariance: the sample covariance of all points.
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x(i, 0);
    my += x(i, 1);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  std::array<double, 3> cov0 = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x(i, 0) - mx, dy = x(i, 1) - my;
    cov0[0] += dx * dx;
    cov0[1] += dx * dy;
    cov0[2] += dy * dy;
  }
  for (double& v : cov0) v /= static_cast<double>(n);
  fit.floored = floor_spd(cov0);
  fit.covariances.assign(k, cov0);

  std::vector<double> resp(n * k);
  std::vector<double> log_w(k);
  double prev_ll = -std::numeric_limits<double>::max();

  for (int iter = 0; iter < 500; ++iter) {
    // E step with log-sum-exp.
    std::vector<Gauss2> comps(k);
    for (std::size_t c = 0; c < k; ++c) {
      comps[c] = prepare(fit.covariances[c]);
      log_w[c] = std::log(std::max(fit.weights[c], 1e-300));
    }
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::max();
      for (std::size_t c = 0; c < k; ++c) {
        const double lp = log_w[c] + log_density(comps[c], x(i, 0) - fit.means[c][0],
                                                 x(i, 1) - fit.means[c][1]);
        resp[i * k + c] = lp;
        best = std::max(best, lp);
      }
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) sum += std::exp(resp[i * k + c] - best);
      const double log_px = best + std::log(sum);
      ll += log_px;
      for (std::size_t c = 0; c < k; ++c)
        resp[i * k + c] = std::exp(resp[i * k + c] - log_px);
    }
    ll /= static_cast<double>(n);
    fit.loglik_history.push_back(ll);
    fit.train_log_likelihood = ll;
    if (ll - prev_ll < 1e-6 && iter > 0) break;
    prev_ll = ll;

    // M step.
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0, sx = 0.0, sy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + c];
        sx += resp[i * k + c] * x(i, 0);
        sy += resp[i * k + c] * x(i, 1);
      }
      nk = std::max(nk, 1e-12);
      fit.weights[c] = nk / static_cast<double>(n);
      fit.means[c] = {sx / nk, sy / nk};
      std::array<double, 3> cov = {0, 0, 0};
      for (std::size_t i = 0; i < n; ++i) {
        const double dx = x(i, 0) - fit.means[c][0];
        const double dy = x(i, 1) - fit.means[c][1];
        const double r = resp[i * k + c];
        cov[0] += r * dx * dx;
        cov[1] += r * dx * dy;
        cov[2] += r * dy * dy;
      }
      for (double& v : cov) v /= nk;
      fit.floored = floor_spd(cov) || fit.floored;
      fit.covariances[c] = cov;
    }
  }
  return fit;
}

}  // namespace detail

/// EM fit with k-means++ seeding, full covariances with a 1e-6 eigenvalue
/// floor, convergence at log-likelihood improvement < 1e-6 or 500 iterations;
/// best of 5 seeded restarts.
inline GmmFit fit_gmm(const Matrix& x, std::size_t k, std::uint64_t seed) {
  if (x.cols != 2) throw std::invalid_argument("fit_gmm: expected 2-D data");
  if (k == 0) throw std::invalid_argument("fit_gmm: k must be positive");
  if (x.rows < k) throw std::invalid_argument("fit_gmm: fewer points than components");

  GmmFit best;
  bool have = false;
  for (std::uint64_t restart = 0; restart < 5; ++restart) {
    GmmFit fit = detail::em_run(x, k, Rng::mix(seed, restart));
    if (!have || fit.train_log_likelihood > best.train_log_likelihood) {
      best = fit;
      have = true;
    }
  }
  return best;
}

/// Mean per-point log density of a fitted mixture at a point.
inline double gmm_log_density(const GmmFit& fit, double px, double py) {
  double best = -std::numeric_limits<double>::max();
  std::vector<double> lps(fit.n_components);
  for (std::size_t c = 0; c < fit.n_components; ++c) {
    const auto g = detail::prepare(fit.covariances[c]);
    lps[c] = std::log(std::max(fit.weights[c], 1e-300)) +
             detail::log_density(g, px - fit.means[c][0], py - fit.means[c][1]);
    best = std::max(best, lps[c]);
  }
  double sum = 0.0;
  for (double lp : lps) sum += std::exp(lp - best);
  return best + std::log(sum);
}

/// Fit one GMM per component count in k_range and record the training
/// likelihoods.
inline LikelihoodCurve likelihood_curve(const Matrix& x, const std::vector<std::size_t>& k_range,
                                        std::uint64_t seed) {
  LikelihoodCurve curve;
  for (std::size_t i = 0; i < k_range.size(); ++i) {
    if (i > 0 && k_range[i] <= k_range[i - 1])
      throw std::invalid_argument("likelihood_curve: k_range must be strictly increasing");
    GmmFit fit = fit_gmm(x, k_range[i], Rng::mix(seed, 1000 + k_range[i]));
    curve.points.emplace_back(k_range[i], fit.train_log_likelihood);
  }
  return curve;
}

}  // namespace mnvae
