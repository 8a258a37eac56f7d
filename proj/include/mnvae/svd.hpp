#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mnvae/matrix.hpp"

namespace mnvae {

/// Thin SVD, m = u * diag(sigma) * vt with sigma nonincreasing.
struct SvdResult {
  Matrix u;                   // [m x r]
  std::vector<double> sigma;  // [r], r = min(m, n)
  Matrix vt;                  // [r x n]
};

namespace detail {

// One-sided Jacobi on a tall matrix (rows >= cols): rotate column pairs until
// every pair is orthogonal to within tol of the off-diagonal mass, then read
// singular values off the column norms. Deterministic sweep order, no pivoting.
// Works on the transposed copy so every inner loop runs over contiguous rows.
inline void jacobi_svd_tall(const Matrix& a, Matrix& u, std::vector<double>& sigma, Matrix& vt) {
  const std::size_t m = a.rows, n = a.cols;
  Matrix b = transpose(a);  // rows of b are columns of a
  Matrix w = Matrix::identity(n);  // accumulates v^T as row operations
  const double tol = 1e-12;
  const int max_sweeps = 60;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* bp = b.row(p);
        double* bq = b.row(q);
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          app += bp[i] * bp[i];
          aqq += bq[i] * bq[i];
          apq += bp[i] * bq[i];
        }
        if (apq == 0.0 || std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = bp[i], xq = bq[i];
          bp[i] = c * xp - s * xq;
          bq[i] = s * xp + c * xq;
        }
        double* wp = w.row(p);
        double* wq = w.row(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = wp[i], xq = wq[i];
          wp[i] = c * xp - s * xq;
          wq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  sigma.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    const double* bj = b.row(j);
    for (std::size_t i = 0; i < m; ++i) norm += bj[i] * bj[i];
    sigma[j] = std::sqrt(norm);
  }

  // Sort singular values in nonincreasing order, carrying rows along.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Matrix ut(n, m);  // rows are the final left singular vectors
  vt = Matrix(n, n);
  std::vector<double> s_sorted(n);
  const double rank_eps = *std::max_element(sigma.begin(), sigma.end()) * 1e-14;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    s_sorted[j] = sigma[src];
    std::copy(w.row(src), w.row(src) + n, vt.row(j));
    if (sigma[src] > rank_eps) {
      const double inv = 1.0 / sigma[src];
      const double* bj = b.row(src);
      double* uj = ut.row(j);
      for (std::size_t i = 0; i < m; ++i) uj[i] = bj[i] * inv;
    } else {
      // (Near-)null column: complete with a unit vector orthogonal to the
      // vectors already kept, so u stays orthonormal.
      for (std::size_t e = 0; e < m; ++e) {
        std::vector<double> cand(m, 0.0);
        cand[e] = 1.0;
        for (std::size_t k = 0; k < j; ++k) {
          const double* uk = ut.row(k);
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += uk[i] * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * uk[i];
        }
        double norm = 0.0;
        for (double cv : cand) norm += cv * cv;
        norm = std::sqrt(norm);
        if (norm > 0.5) {
          double* uj = ut.row(j);
          for (std::size_t i = 0; i < m; ++i) uj[i] = cand[i] / norm;
          break;
        }
      }
    }
  }
  sigma = s_sorted;
  u = transpose(ut);
}

}  // namespace detail

/// Thin SVD of an arbitrary finite matrix (one-sided Jacobi; the wide case is
/// handled by factoring the transpose).
inline SvdResult svd(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("svd: empty matrix");
  if (!all_finite(m)) throw std::invalid_argument("svd: non-finite input");

  SvdResult r;
  if (m.rows >= m.cols) {
    detail::jacobi_svd_tall(m, r.u, r.sigma, r.vt);
  } else {
    // m = (u' s vt')^T of the tall transpose: u = vt'^T, vt = u'^T.
    Matrix u_of_t, vt_of_t;
    detail::jacobi_svd_tall(transpose(m), u_of_t, r.sigma, vt_of_t);
    r.u = transpose(vt_of_t);  // [m x r]
    r.vt = transpose(u_of_t);  // [r x n]
  }
  return r;
}

/// Singular value shrinkage: U * diag(max(sigma - tau, 0)) * Vt.
/// Proximal operator of the nuclear norm.
inline Matrix sv_threshold(const Matrix& m, double tau) {
  if (tau < 0.0) throw std::invalid_argument("sv_threshold: negative tau");
  SvdResult s = svd(m);
  Matrix out(m.rows, m.cols);
  const std::size_t r = s.sigma.size();
  for (std::size_t k = 0; k < r; ++k) {
    const double sk = std::max(s.sigma[k] - tau, 0.0);
    if (sk == 0.0) continue;
    for (std::size_t i = 0; i < m.rows; ++i) {
      const double uik = s.u(i, k) * sk;
      if (uik == 0.0) continue;
      double* oi = out.row(i);
      const double* vk = s.vt.row(k);
      for (std::size_t j = 0; j < m.cols; ++j) oi[j] += uik * vk[j];
    }
  }
  return out;
}

/// Elementwise soft shrinkage: sign(x) * max(|x| - tau, 0).
/// Proximal operator of the l1 norm.
inline Matrix soft_threshold(const Matrix& m, double tau) {
  if (tau < 0.0) throw std::invalid_argument("soft_threshold: negative tau");
  Matrix out = m;
  for (double& v : out.data) {
    const double mag = std::abs(v) - tau;
    v = mag > 0.0 ? (v > 0.0 ? mag : -mag) : 0.0;
  }
  return out;
}

/// Largest singular value.
inline double spectral_norm(const Matrix& m) {
  SvdResult s = svd(m);
  return s.sigma.empty() ? 0.0 : s.sigma[0];
}

}  // namespace mnvae
