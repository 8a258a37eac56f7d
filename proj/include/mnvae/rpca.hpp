#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mnvae/svd.hpp"

namespace mnvae {

/// Inexact augmented-Lagrangian solver parameters for the low-rank + sparse
/// split. lambda = lambda_scale / sqrt(max(n1, n2)); the 0.3 default trades
/// background removal against speech quality, 1.0 reproduces the reference
/// principal-component-pursuit setting.
struct RpcaConfig {
  double lambda_scale = 0.3;
  std::size_t max_iter = 500;
  double tol = 1e-7;           // on ||M - L - S||_F / ||M||_F
  double mu_init_factor = 1.25;  // mu0 = factor / ||M||_2
  double mu_growth = 1.5;
};

struct RpcaDecomposition {
  Matrix l;  // low rank
  Matrix s;  // sparse
  std::size_t iterations = 0;
  double residual = 0.0;  // final ||M - L - S||_F / ||M||_F
  bool converged = false;
  // Objective ||L||_* + lambda ||S||_1 of the feasible completion (L, M - L)
  // at each iterate; the raw pair only becomes feasible in the limit.
  std::vector<double> objective_trace;
};

namespace detail {

inline double nuclear_norm(const Matrix& m) {
  SvdResult s = svd(m);
  double acc = 0.0;
  for (double v : s.sigma) acc += v;
  return acc;
}

inline double l1_norm(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data) acc += std::abs(v);
  return acc;
}

}  // namespace detail

/// Split a nonnegative magnitude spectrogram into low-rank and sparse parts by
/// alternating singular-value and elementwise shrinkage with a dual update.
inline RpcaDecomposition rpca(const Matrix& m, const RpcaConfig& cfg = {}) {
  if (cfg.lambda_scale <= 0.0) throw std::invalid_argument("rpca: lambda_scale must be positive");
  if (cfg.tol <= 0.0) throw std::invalid_argument("rpca: tol must be positive");
  if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("rpca: empty matrix");
  for (double v : m.data)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("rpca: input must be a nonnegative finite matrix");

  RpcaDecomposition out;
  out.l = Matrix(m.rows, m.cols);
  out.s = Matrix(m.rows, m.cols);

  const double m_fro = frobenius_norm(m);
  if (m_fro == 0.0) {
    out.converged = true;
    return out;
  }

  const double lambda =
      cfg.lambda_scale / std::sqrt(static_cast<double>(std::max(m.rows, m.cols)));
  const double m_spec = spectral_norm(m);
  const double m_inf = max_abs(m);

  // Dual-feasible start for the multiplier, then grow mu geometrically.
  const double y_scale = std::max(m_spec, m_inf / lambda);
  Matrix y = (1.0 / y_scale) * m;
  double mu = cfg.mu_init_factor / m_spec;
  const double mu_max = mu * 1e7;

  for (std::size_t iter = 0; iter < cfg.max_iter; ++iter) {
    Matrix target_l = m - out.s;
    for (std::size_t i = 0; i < target_l.size(); ++i) target_l.data[i] += y.data[i] / mu;
    out.l = sv_threshold(target_l, 1.0 / mu);

    Matrix target_s = m - out.l;
    for (std::size_t i = 0; i < target_s.size(); ++i) target_s.data[i] += y.data[i] / mu;
    out.s = soft_threshold(target_s, lambda / mu);

    Matrix z = m - out.l - out.s;
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += mu * z.data[i];
    mu = std::min(mu * cfg.mu_growth, mu_max);

    out.iterations = iter + 1;
    out.residual = frobenius_norm(z) / m_fro;
    out.objective_trace.push_back(detail::nuclear_norm(out.l) +
                                  lambda * detail::l1_norm(m - out.l));
    if (out.residual <= cfg.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

/// Magnitude-ratio cutoff sqrt(g^2 / (1 + g^2)) implied by requiring the
/// sparse part to exceed the low-rank part by the gain factor g.
inline double mask_threshold(double g) {
  if (g < 0.0) throw std::invalid_argument("mask_threshold: negative gain");
  return std::sqrt(g * g / (1.0 + g * g));
}

/// Sigmoid speech mask: smooth version of the hard |S| > g|L| rule.
struct MaskConfig {
  double gain = 1.0;    // g >= 0
  double alpha = 20.0;  // sigmoid slope
};

inline Matrix soft_mask(const Matrix& s, const Matrix& m, const MaskConfig& cfg = {}) {
  check_same_shape(s, m, "soft_mask");
  if (cfg.gain < 0.0) throw std::invalid_argument("soft_mask: negative gain");
  if (cfg.alpha <= 0.0) throw std::invalid_argument("soft_mask: alpha must be positive");
  const double thr = mask_threshold(cfg.gain);
  Matrix w(s.rows, s.cols);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (m.data[i] < 0.0) throw std::invalid_argument("soft_mask: negative magnitude");
    const double ratio = m.data[i] > 0.0 ? std::abs(s.data[i]) / m.data[i] : 0.0;
    w.data[i] = 1.0 / (1.0 + std::exp(-cfg.alpha * (ratio - thr)));
  }
  return w;
}

/// Elementwise product of mask and magnitude.
inline Matrix apply_mask(const Matrix& w, const Matrix& m) {
  check_same_shape(w, m, "apply_mask");
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = w.data[i] * m.data[i];
  return out;
}

}  // namespace mnvae
