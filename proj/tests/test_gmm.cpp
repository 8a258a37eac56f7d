#include <gtest/gtest.h>

#include <cmath>

#include "mnvae/gmm.hpp"
#include "mnvae/node_estimate.hpp"
#include "mnvae/rng.hpp"
#include "oracles.hpp"

using namespace mnvae;

namespace {

// Sampling oracle: draw from a known mixture of isotropic Gaussians.
Matrix sample_clusters(const std::vector<std::array<double, 2>>& centers, double sigma,
                       std::size_t per_cluster, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(centers.size() * per_cluster, 2);
  std::size_t row = 0;
  for (const auto& c : centers) {
    for (std::size_t i = 0; i < per_cluster; ++i, ++row) {
      x(row, 0) = c[0] + sigma * rng.normal();
      x(row, 1) = c[1] + sigma * rng.normal();
    }
  }
  return x;
}

}  // namespace

TEST(FitGmm, RecoversSeparatedClusters) {
  const std::vector<std::array<double, 2>> centers = {{-5.0, 0.0}, {5.0, 1.0}};
  Matrix x = sample_clusters(centers, 0.3, 400, 7);
  GmmFit fit = fit_gmm(x, 2, 123);
  ASSERT_EQ(fit.n_components, 2u);

  // Match each recovered mean to its closest true center.
  for (const auto& c : centers) {
    double best = 1e300;
    for (const auto& m : fit.means) {
      const double d = std::hypot(m[0] - c[0], m[1] - c[1]);
      best = std::min(best, d);
    }
    EXPECT_LE(best, 0.05);
  }
  double wsum = 0;
  for (double w : fit.weights) wsum += w;
  EXPECT_NEAR(wsum, 1.0, 1e-9);
}

TEST(FitGmm, SingleComponentClosedForm) {
  Matrix x = sample_clusters({{1.0, -2.0}}, 1.5, 500, 9);
  GmmFit fit = fit_gmm(x, 1, 1);

  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    mx += x(i, 0);
    my += x(i, 1);
  }
  mx /= static_cast<double>(x.rows);
  my /= static_cast<double>(x.rows);
  std::array<double, 3> cov = {0, 0, 0};
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double dx = x(i, 0) - mx, dy = x(i, 1) - my;
    cov[0] += dx * dx;
    cov[1] += dx * dy;
    cov[2] += dy * dy;
  }
  for (double& v : cov) v /= static_cast<double>(x.rows);

  EXPECT_NEAR(fit.means[0][0], mx, 1e-9);
  EXPECT_NEAR(fit.means[0][1], my, 1e-9);
  EXPECT_NEAR(fit.covariances[0][0], cov[0], 1e-9);
  EXPECT_NEAR(fit.covariances[0][1], cov[1], 1e-9);
  EXPECT_NEAR(fit.covariances[0][2], cov[2], 1e-9);
}

TEST(FitGmm, EmMonotoneLogLikelihood) {
  Matrix x = sample_clusters({{-3.0, 0.0}, {3.0, 0.0}, {0.0, 4.0}}, 0.8, 200, 21);
  GmmFit fit = fit_gmm(x, 3, 77);
  for (std::size_t i = 1; i < fit.loglik_history.size(); ++i)
    EXPECT_GE(fit.loglik_history[i], fit.loglik_history[i - 1] - 1e-9);
}

TEST(FitGmm, DeterministicForFixedSeed) {
  Matrix x = sample_clusters({{-2.0, 1.0}, {2.0, -1.0}}, 0.5, 150, 3);
  GmmFit a = fit_gmm(x, 2, 42);
  GmmFit b = fit_gmm(x, 2, 42);
  EXPECT_EQ(a.train_log_likelihood, b.train_log_likelihood);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(a.means[c][0], b.means[c][0]);
    EXPECT_EQ(a.weights[c], b.weights[c]);
  }
}

TEST(FitGmm, DegenerateDataIsFlaggedAndFinite) {
  Matrix x(50, 2);
  for (std::size_t i = 0; i < x.rows; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = -2.0;
  }
  GmmFit fit = fit_gmm(x, 2, 5);
  EXPECT_TRUE(fit.floored);
  EXPECT_TRUE(std::isfinite(fit.train_log_likelihood));
}

TEST(FitGmm, ErrorsOnTooFewPoints) {
  Matrix x(2, 2);
  EXPECT_THROW(fit_gmm(x, 3, 1), std::invalid_argument);
}

TEST(FitGmm, DensityIntegratesToOne) {
  Matrix x = sample_clusters({{0.0, 0.0}, {4.0, 2.0}}, 0.7, 300, 11);
  GmmFit fit = fit_gmm(x, 2, 9);
  // Monte Carlo integral over a box that contains essentially all the mass.
  const double lo = -8.0, hi = 12.0;
  Rng rng(1234);
  const std::size_t draws = 400000;
  double acc = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double px = rng.uniform(lo, hi);
    const double py = rng.uniform(lo, hi);
    acc += std::exp(gmm_log_density(fit, px, py));
  }
  const double integral = acc / static_cast<double>(draws) * (hi - lo) * (hi - lo);
  EXPECT_NEAR(integral, 1.0, 0.02);
}

TEST(LikelihoodCurve, NondecreasingInComponents) {
  Matrix x = sample_clusters({{-4.0, 0.0}, {4.0, 0.0}}, 1.0, 250, 17);
  LikelihoodCurve curve = likelihood_curve(x, {1, 2, 3, 4}, 99);
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    EXPECT_GE(curve.points[i].second, curve.points[i - 1].second - 1e-3);
}

TEST(LikelihoodCurve, ElbowAtThreeForThreeClusters) {
  Matrix x = sample_clusters({{-6.0, 0.0}, {6.0, 0.0}, {0.0, 7.0}}, 0.6, 300, 23);
  LikelihoodCurve curve = likelihood_curve(x, {1, 2, 3, 4}, 5);
  const double g23 = curve.points[2].second - curve.points[1].second;
  const double g34 = curve.points[3].second - curve.points[2].second;
  EXPECT_LE(g34, 0.1 * g23);
}

TEST(LikelihoodCurve, SinglePointRange) {
  Matrix x = sample_clusters({{0.0, 0.0}}, 1.0, 100, 29);
  LikelihoodCurve curve = likelihood_curve(x, {1}, 3);
  ASSERT_EQ(curve.points.size(), 1u);
  EXPECT_EQ(curve.points[0].first, 1u);
}

TEST(EstimateNodes, SaturationAtTwoComponentsGivesOneNode) {
  // Likelihood saturates at n=2: one dominant speech mode plus residual.
  LikelihoodCurve curve;
  curve.points = {{1, -5.0}, {2, -3.0}, {3, -2.95}, {4, -2.93}, {5, -2.92}};
  NodeEstimate est = estimate_nodes(curve);
  EXPECT_EQ(est.elbow_components, 2u);
  EXPECT_EQ(est.k, 1u);
  EXPECT_EQ(est.k_safe, 3u);
}

TEST(EstimateNodes, SaturationAtFourComponentsGivesThreeNodes) {
  LikelihoodCurve curve;
  curve.points = {{1, -8.0}, {2, -6.0}, {3, -4.5}, {4, -3.2}, {5, -3.15}, {6, -3.12}};
  NodeEstimate est = estimate_nodes(curve);
  EXPECT_EQ(est.elbow_components, 4u);
  EXPECT_EQ(est.k, 3u);
  EXPECT_EQ(est.k_safe, 5u);
}

TEST(EstimateNodes, FlatCurveFloorsToOneNode) {
  LikelihoodCurve curve;
  curve.points = {{1, -2.0}, {2, -2.0}, {3, -2.0}};
  NodeEstimate est = estimate_nodes(curve);
  EXPECT_EQ(est.k, 1u);
}

TEST(EstimateNodes, InvariantToConstantShift) {
  LikelihoodCurve curve;
  curve.points = {{1, -8.0}, {2, -6.0}, {3, -4.5}, {4, -3.2}, {5, -3.15}};
  NodeEstimate a = estimate_nodes(curve);
  for (auto& p : curve.points) p.second += 1234.5;
  NodeEstimate b = estimate_nodes(curve);
  EXPECT_EQ(a.elbow_components, b.elbow_components);
  EXPECT_EQ(a.k, b.k);
}

TEST(EstimateNodes, CurveTooShortThrows) {
  LikelihoodCurve curve;
  curve.points = {{1, -2.0}};
  EXPECT_THROW(estimate_nodes(curve), std::invalid_argument);
}

TEST(FrameFeatures, RowCountAndVarianceOrdering) {
  // Build tiny spectrograms directly.
  Rng rng(5);
  std::vector<Spectrogram> specs(2);
  for (auto& s : specs) {
    s.mag = Matrix(30, 8);
    s.phase = Matrix(30, 8);
    for (std::size_t t = 0; t < 30; ++t) {
      const double a = rng.normal();
      const double b = 0.2 * rng.normal();
      for (std::size_t j = 0; j < 8; ++j)
        s.mag(t, j) = std::abs(3.0 * a * (j == 1) + b * (j == 5) + 0.01 * rng.normal());
    }
  }
  Matrix feats = frame_features(specs);
  EXPECT_EQ(feats.rows, 60u);
  EXPECT_EQ(feats.cols, 2u);

  double v1 = 0, v2 = 0, m1 = 0, m2 = 0;
  for (std::size_t i = 0; i < feats.rows; ++i) {
    m1 += feats(i, 0);
    m2 += feats(i, 1);
  }
  m1 /= static_cast<double>(feats.rows);
  m2 /= static_cast<double>(feats.rows);
  for (std::size_t i = 0; i < feats.rows; ++i) {
    v1 += (feats(i, 0) - m1) * (feats(i, 0) - m1);
    v2 += (feats(i, 1) - m2) * (feats(i, 1) - m2);
  }
  EXPECT_GE(v1, v2);
}

TEST(FrameFeatures, CollapsesOneDimensionalData) {
  // All frames proportional to one spectral template: second component ~ 0.
  std::vector<Spectrogram> specs(1);
  Rng rng(8);
  specs[0].mag = Matrix(50, 6);
  specs[0].phase = Matrix(50, 6);
  const double tmpl[6] = {1.0, 0.5, 0.2, 0.8, 0.1, 0.05};
  for (std::size_t t = 0; t < 50; ++t) {
    const double g = 1.0 + rng.uniform();
    for (std::size_t j = 0; j < 6; ++j) specs[0].mag(t, j) = g * tmpl[j];
  }
  Matrix feats = frame_features(specs);
  double v2 = 0;
  for (std::size_t i = 0; i < feats.rows; ++i) v2 += feats(i, 1) * feats(i, 1);
  EXPECT_LE(v2 / static_cast<double>(feats.rows), 1e-16);
}

TEST(FrameFeatures, TooFewFramesThrows) {
  std::vector<Spectrogram> specs(1);
  specs[0].mag = Matrix(1, 4);
  specs[0].phase = Matrix(1, 4);
  EXPECT_THROW(frame_features(specs), std::invalid_argument);
}
