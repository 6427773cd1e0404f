#pragma once

// Symmetric eigendecomposition (cyclic Jacobi for small orders, Householder
// tridiagonalisation + implicit QL otherwise), eigenvector sign
// canonicalisation and raw Varimax rotation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm {

/// Leading eigenpairs of a symmetric matrix, eigenvalues descending.
struct EigenPairs {
  Vector values;
  Matrix vectors;
};

/// Orders up to this size use cyclic Jacobi.
inline constexpr Eigen::Index kJacobiMaxOrder = 64;

namespace detail {

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

/// Full decomposition by cyclic Jacobi rotations. Values unsorted.
inline void jacobi_eigen(const Matrix& s, Vector& values, Matrix& vectors, double rel_tol = 1e-15,
                         int max_sweeps = 100) {
  const Eigen::Index n = s.rows();
  Matrix a = s;
  vectors = Matrix::Identity(n, n);
  const double scale = a.norm();
  const double target = (rel_tol * scale) * (rel_tol * scale);
  int sweep = 0;
  for (;; ++sweep) {
    double off = 0.0;
    for (Eigen::Index q = 1; q < n; ++q)
      for (Eigen::Index p = 0; p < q; ++p) off += a(p, q) * a(p, q);
    if (off <= target || scale == 0.0) break;
    if (sweep >= max_sweeps)
      throw NumericError("Jacobi eigensolver did not converge, off-diagonal norm " +
                         std::to_string(std::sqrt(off)));
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = vectors(k, p), vkq = vectors(k, q);
          vectors(k, p) = c * vkp - sn * vkq;
          vectors(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  values = a.diagonal();
}

/// Householder reduction to tridiagonal form followed by implicit QL with
/// shifts (the EISPACK tred2/tql2 pair). Values unsorted.
inline void tridiagonal_ql_eigen(const Matrix& s, Vector& values, Matrix& vectors) {
  const Eigen::Index n = s.rows();
  Matrix v = s;
  Vector d(n), e(n);
  for (Eigen::Index j = 0; j < n; ++j) d(j) = v(n - 1, j);

  for (Eigen::Index i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (Eigen::Index k = 0; k < i; ++k) scale += std::abs(d(k));
    if (scale == 0.0) {
      e(i) = d(i - 1);
      for (Eigen::Index j = 0; j < i; ++j) {
        d(j) = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (Eigen::Index k = 0; k < i; ++k) {
        d(k) /= scale;
        h += d(k) * d(k);
      }
      double f = d(i - 1);
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e(i) = scale * g;
      h -= f * g;
      d(i - 1) = f - g;
      for (Eigen::Index j = 0; j < i; ++j) e(j) = 0.0;
      for (Eigen::Index j = 0; j < i; ++j) {
        f = d(j);
        v(j, i) = f;
        g = e(j) + v(j, j) * f;
        for (Eigen::Index k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d(k);
          e(k) += v(k, j) * f;
        }
        e(j) = g;
      }
      f = 0.0;
      for (Eigen::Index j = 0; j < i; ++j) {
        e(j) /= h;
        f += e(j) * d(j);
      }
      const double hh = f / (h + h);
      for (Eigen::Index j = 0; j < i; ++j) e(j) -= hh * d(j);
      for (Eigen::Index j = 0; j < i; ++j) {
        f = d(j);
        g = e(j);
        for (Eigen::Index k = j; k <= i - 1; ++k) v(k, j) -= (f * e(k) + g * d(k));
        d(j) = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d(i) = h;
  }

  for (Eigen::Index i = 0; i < n - 1; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d(i + 1);
    if (h != 0.0) {
      for (Eigen::Index k = 0; k <= i; ++k) d(k) = v(k, i + 1) / h;
      for (Eigen::Index j = 0; j <= i; ++j) {
        double g = 0.0;
        for (Eigen::Index k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (Eigen::Index k = 0; k <= i; ++k) v(k, j) -= g * d(k);
      }
    }
    for (Eigen::Index k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    d(j) = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e(0) = 0.0;

  // QL iterations on the tridiagonal (d, e).
  for (Eigen::Index i = 1; i < n; ++i) e(i - 1) = e(i);
  e(n - 1) = 0.0;
  double f = 0.0, tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  for (Eigen::Index l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d(l)) + std::abs(e(l)));
    Eigen::Index m = l;
    while (m < n) {
      if (std::abs(e(m)) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > 100) throw NumericError("tridiagonal QL eigensolver did not converge");
        double g = d(l);
        double p = (d(l + 1) - g) / (2.0 * e(l));
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d(l) = e(l) / (p + r);
        d(l + 1) = e(l) * (p + r);
        const double dl1 = d(l + 1);
        double h = g - d(l);
        for (Eigen::Index i = l + 2; i < n; ++i) d(i) -= h;
        f += h;

        p = d(m);
        double c = 1.0, c2 = 1.0, c3 = 1.0;
        const double el1 = e(l + 1);
        double sn = 0.0, s2 = 0.0;
        for (Eigen::Index i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = sn;
          g = c * e(i);
          h = c * p;
          r = std::hypot(p, e(i));
          e(i + 1) = sn * r;
          sn = e(i) / r;
          c = p / r;
          p = c * d(i) - sn * g;
          d(i + 1) = h + sn * (c * g + sn * d(i));
          for (Eigen::Index k = 0; k < n; ++k) {
            h = v(k, i + 1);
            v(k, i + 1) = sn * v(k, i) + c * h;
            v(k, i) = c * v(k, i) - sn * h;
          }
        }
        p = -sn * s2 * c3 * el1 * e(l) / dl1;
        e(l) = sn * p;
        d(l) = c * p;
      } while (std::abs(e(l)) > eps * tst1);
    }
    d(l) += f;
    e(l) = 0.0;
  }
  values = d;
  vectors = v;
}

}  // namespace detail

/// Flips each column so that its largest-magnitude entry is positive; ties go
/// to the lowest row index.
inline Matrix canonical_sign(Matrix vectors) {
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
      const double a = std::abs(vectors(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (!(best_abs > 0.0)) throw NumericError("canonical_sign: zero column " + std::to_string(j));
    if (vectors(best, j) < 0.0) vectors.col(j) *= -1.0;
  }
  return vectors;
}

/// Top-r eigenpairs of a symmetric matrix. The input is symmetrised as
/// (S + S^T)/2; vectors come back sign-canonicalised.
inline EigenPairs sym_eig(const Matrix& s, Eigen::Index r) {
  if (s.rows() != s.cols())
    throw DimensionError("sym_eig: matrix is " + std::to_string(s.rows()) + "x" +
                         std::to_string(s.cols()) + ", not square");
  const Eigen::Index n = s.rows();
  if (r < 1 || r > n)
    throw DimensionError("sym_eig: requested " + std::to_string(r) + " pairs from order " +
                         std::to_string(n));
  if (!s.allFinite()) throw NumericError("sym_eig: matrix has non-finite entries");
  const double asym = detail::max_abs(s - s.transpose());
  if (asym > 1e-8 * (1.0 + detail::max_abs(s)))
    throw DimensionError("sym_eig: matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  const Matrix sym = 0.5 * (s + s.transpose());

  Vector values;
  Matrix vectors;
  if (n <= kJacobiMaxOrder)
    detail::jacobi_eigen(sym, values, vectors);
  else
    detail::tridiagonal_ql_eigen(sym, values, vectors);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return values(a) > values(b); });

  EigenPairs out;
  out.values.resize(r);
  out.vectors.resize(n, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    out.values(j) = values(order[static_cast<std::size_t>(j)]);
    out.vectors.col(j) = vectors.col(order[static_cast<std::size_t>(j)]);
  }
  out.vectors = canonical_sign(std::move(out.vectors));

  const double tol = 1e-8 * (1.0 + std::abs(out.values(0)));
  for (Eigen::Index j = 0; j < r; ++j) {
    const double res = (sym * out.vectors.col(j) - out.values(j) * out.vectors.col(j)).norm();
    if (res > tol)
      throw NumericError("sym_eig: eigenpair " + std::to_string(j) + " residual " + std::to_string(res) +
                         " exceeds tolerance");
  }
  return out;
}

/// Orthonormal basis of the column space of a full-column-rank matrix,
/// A V diag(mu)^{-1/2} from the eigendecomposition of A^T A.
inline Matrix orthonormal_basis(const Matrix& a, double pivot_tol = 1e-10) {
  if (a.cols() == 0 || a.rows() < a.cols()) throw DimensionError("orthonormal_basis: matrix is not tall");
  const auto eig = sym_eig(a.transpose() * a, a.cols());
  const double top = eig.values(0);
  if (!(top > 0.0) || eig.values(a.cols() - 1) <= pivot_tol * top)
    throw NumericError("orthonormal_basis: matrix is rank deficient");
  Matrix q = a * eig.vectors;
  for (Eigen::Index j = 0; j < q.cols(); ++j) q.col(j) /= std::sqrt(eig.values(j));
  return q;
}

/// Raw (un-normalised) Varimax criterion: the sum over columns of the
/// variance of the squared loadings.
inline double varimax_criterion(const Matrix& loadings) {
  const double p = static_cast<double>(loadings.rows());
  double v = 0.0;
  for (Eigen::Index j = 0; j < loadings.cols(); ++j) {
    const Vector sq = loadings.col(j).array().square();
    const double mean = sq.sum() / p;
    v += sq.array().square().sum() / p - mean * mean;
  }
  return v;
}

struct VarimaxResult {
  Matrix rotated;
  Matrix rotation;
  double criterion = 0.0;
  int sweeps = 0;
};

/// Raw Varimax by cyclic planar rotations. Every planar step maximises the
/// criterion within its plane, so the criterion never decreases.
inline VarimaxResult varimax(const Matrix& loadings, double tol = 1e-8, int max_sweeps = 200) {
  const Eigen::Index r = loadings.cols();
  if (r < 1) throw DimensionError("varimax: need at least one column");
  VarimaxResult out{loadings, Matrix::Identity(r, r), varimax_criterion(loadings), 0};
  if (r == 1) return out;
  const double p = static_cast<double>(loadings.rows());
  Matrix& b = out.rotated;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const double before = out.criterion;
    for (Eigen::Index j = 0; j + 1 < r; ++j) {
      for (Eigen::Index l = j + 1; l < r; ++l) {
        const Vector x = b.col(j), y = b.col(l);
        const Vector u = x.array().square() - y.array().square();
        const Vector w = 2.0 * x.array() * y.array();
        const double su = u.sum(), sw = w.sum();
        const double c = (u.array().square() - w.array().square()).sum();
        const double d = 2.0 * (u.array() * w.array()).sum();
        const double num = d - 2.0 * su * sw / p;
        const double den = c - (su * su - sw * sw) / p;
        if (std::abs(num) < 1e-15 * (std::abs(den) + 1e-300)) continue;
        const double phi = 0.25 * std::atan2(num, den);
        const double cs = std::cos(phi), sn = std::sin(phi);
        if (std::abs(sn) < 1e-15) continue;
        b.col(j) = cs * x + sn * y;
        b.col(l) = -sn * x + cs * y;
        const Vector rj = out.rotation.col(j), rl = out.rotation.col(l);
        out.rotation.col(j) = cs * rj + sn * rl;
        out.rotation.col(l) = -sn * rj + cs * rl;
      }
    }
    out.criterion = varimax_criterion(b);
    out.sweeps = sweep + 1;
    if (std::abs(out.criterion - before) < tol) break;
  }
  return out;
}

}  // namespace rtfm
