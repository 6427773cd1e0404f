#pragma once

// Truncation grid and cross-validated choice of tau by fold/complement
// subspace agreement.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/estimator.hpp"
#include "rtfm/robust_moments.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm {

struct CvConfig {
  std::size_t grid_size = 50;
  std::size_t folds = 3;
  std::size_t iterations = 2;

  void validate() const {
    if (grid_size < 2) throw ConfigError("cv grid size must be at least 2");
    if (folds < 2) throw ConfigError("cv needs at least 2 folds");
  }
};

struct CvResult {
  double tau = 0.0;
  std::size_t index = 0;       // position of tau in grid
  std::vector<double> grid;    // descending
  std::vector<double> curve;   // CV value per grid point
};

/// Median with the midpoint convention for even counts. Reorders `v`.
inline double median_inplace(std::vector<double>& v) {
  if (v.empty()) throw DimensionError("median of an empty sample");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// Log-equispaced levels from max|X| down to median|X|.
inline std::vector<double> tau_grid(const TensorSeries& series, std::size_t m) {
  if (m < 2) throw ConfigError("tau grid needs at least 2 points");
  std::vector<double> a(series.data().size());
  double hi = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::abs(series.data()[i]);
    if (!std::isfinite(a[i])) throw NumericError("tau grid: data contain non-finite values");
    hi = std::max(hi, a[i]);
  }
  if (!(hi > 0.0)) throw NumericError("tau grid: data are all zero");
  const double lo = median_inplace(a);
  if (!(lo > 0.0)) throw NumericError("tau grid: median absolute value is zero");
  std::vector<double> grid(m);
  const double lhi = std::log(hi), llo = std::log(lo);
  for (std::size_t i = 0; i < m; ++i) {
    const double w = static_cast<double>(i) / static_cast<double>(m - 1);
    grid[i] = std::exp(lhi + w * (llo - lhi));
  }
  grid.front() = hi;
  grid.back() = lo;
  return grid;
}

/// 1 - ||E_a^T E_b||_F^2 / r for orthonormal p x r bases; lies in [0, 1].
inline double subspace_mismatch(const Matrix& ea, const Matrix& eb) {
  if (ea.rows() != eb.rows() || ea.cols() != eb.cols() || ea.cols() == 0)
    throw DimensionError("subspace_mismatch: bases must have equal, non-empty shapes");
  const double v = 1.0 - (ea.transpose() * eb).squaredNorm() / static_cast<double>(ea.cols());
  return std::clamp(v, 0.0, 1.0);
}

/// Contiguous folds of ceil(n/L) time points; the last may be shorter.
inline std::vector<detail::TimeRange> cv_folds(std::size_t n, std::size_t folds) {
  if (folds < 2) throw ConfigError("cv needs at least 2 folds");
  const std::size_t len = (n + folds - 1) / folds;
  if (len < 2) throw ConfigError("cv folds too short: ceil(n/L) = " + std::to_string(len) + " < 2");
  std::vector<detail::TimeRange> out;
  for (std::size_t l = 0; l < folds; ++l) {
    const std::size_t b = l * len, e = std::min(n, b + len);
    if (b >= e) throw ConfigError("cv fold " + std::to_string(l + 1) + " is empty for n = " + std::to_string(n));
    out.push_back({b, e});
  }
  return out;
}

namespace detail {

/// CV value at a single truncation level.
inline double cv_value(const TensorSeries& series, const Ranks& ranks, TruncationLevel tau,
                       const std::vector<TimeRange>& folds, std::size_t iterations) {
  const Dims& dims = series.dims();
  const std::size_t order = dims.size();
  const std::size_t nf = folds.size();
  const std::size_t n = series.length();

  // Fold-wise unscaled mode Grams; complements are sums of the others.
  std::vector<std::vector<Matrix>> grams(nf, std::vector<Matrix>(order));
  for (std::size_t l = 0; l < nf; ++l)
    for (std::size_t k = 0; k < order; ++k) grams[l][k] = mode_gram_sum(series, k, tau, {folds[l]});

  double total = 0.0;
  for (std::size_t l = 0; l < nf; ++l) {
    TimeSelection in{folds[l]}, out;
    for (std::size_t j = 0; j < nf; ++j)
      if (j != l) out.push_back(folds[j]);
    const std::size_t n_in = folds[l].end - folds[l].begin, n_out = n - n_in;

    std::vector<Matrix> m_in(order), m_out(order);
    for (std::size_t k = 0; k < order; ++k) {
      const auto s = split_at(dims, k);
      const double pmk = static_cast<double>(s.before * s.after);
      m_in[k] = grams[l][k] / (static_cast<double>(n_in) * pmk);
      Matrix acc = Matrix::Zero(grams[l][k].rows(), grams[l][k].cols());
      for (std::size_t j = 0; j < nf; ++j)
        if (j != l) acc += grams[j][k];
      m_out[k] = acc / (static_cast<double>(n_out) * pmk);
    }
    LoadingSet fit_in = loadings_from_moments(m_in, ranks);
    LoadingSet fit_out = loadings_from_moments(m_out, ranks);
    for (std::size_t i = 0; i < iterations; ++i) {
      fit_in = refine_loadings(series, in, fit_in, ranks, tau);
      fit_out = refine_loadings(series, out, fit_out, ranks, tau);
    }
    for (std::size_t k = 0; k < order; ++k) total += subspace_mismatch(fit_out.e[k], fit_in.e[k]);
  }
  return total;
}

}  // namespace detail

/// Cross-validated truncation level. The curve is minimised over the grid;
/// near-ties (within 1e-12) resolve to the larger tau.
inline CvResult cv_tau(const TensorSeries& series, const Ranks& ranks, const CvConfig& config = {}) {
  config.validate();
  validate_ranks(ranks, series.dims());
  const auto folds = cv_folds(series.length(), config.folds);
  CvResult out;
  out.grid = tau_grid(series, config.grid_size);
  out.curve.reserve(out.grid.size());
  for (double t : out.grid)
    out.curve.push_back(detail::cv_value(series, ranks, TruncationLevel(t), folds, config.iterations));
  const double best = *std::min_element(out.curve.begin(), out.curve.end());
  for (std::size_t m = 0; m < out.curve.size(); ++m) {
    if (out.curve[m] <= best + 1e-12) {
      out.index = m;
      break;
    }
  }
  out.tau = out.grid[out.index];
  return out;
}

}  // namespace rtfm
