#pragma once

// Loading estimation by projected iterations on truncated data, core factor
// estimation and common-component reconstruction.
//
// Stage 0 takes the leading eigenvectors of each truncated mode-k second
// moment. Stage iota >= 1 re-estimates every mode from the second moment of
// the data projected onto the other modes' stage iota-1 bases, so all modes
// within a stage see the same (previous) projections.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/linalg.hpp"
#include "rtfm/robust_moments.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm {

using Ranks = std::vector<std::size_t>;

inline std::string ranks_to_string(const Ranks& r) {
  std::string s;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(r[i]);
  }
  return s;
}

inline void validate_ranks(const Ranks& ranks, const Dims& dims) {
  if (ranks.size() != dims.size())
    throw DimensionError("expected " + std::to_string(dims.size()) + " ranks, got " + std::to_string(ranks.size()));
  for (std::size_t k = 0; k < dims.size(); ++k)
    if (ranks[k] < 1 || ranks[k] > dims[k])
      throw DimensionError("rank " + std::to_string(ranks[k]) + " for mode " + std::to_string(k + 1) +
                           " must lie in [1, " + std::to_string(dims[k]) + "]");
}

/// Per-mode loading estimates. For each mode k, e[k] has orthonormal columns,
/// lambda[k] = sqrt(p_k) e[k], and eigvals[k] is the full descending spectrum
/// of the matrix the basis was taken from.
struct LoadingSet {
  std::vector<Matrix> e;
  std::vector<Matrix> lambda;
  std::vector<Vector> eigvals;

  std::size_t order() const noexcept { return e.size(); }

  Ranks ranks() const {
    Ranks r;
    for (const auto& m : e) r.push_back(static_cast<std::size_t>(m.cols()));
    return r;
  }

  void push_mode(Matrix basis, Vector spectrum) {
    lambda.push_back(std::sqrt(static_cast<double>(basis.rows())) * basis);
    e.push_back(std::move(basis));
    eigvals.push_back(std::move(spectrum));
  }
};

/// Core tensors F_t, one per time point.
using FactorSeries = TensorSeries;

struct EstimatorConfig {
  Ranks ranks;
  TruncationLevel tau;
  TruncationLevel kappa;
  std::size_t iterations = 2;

  void validate(const Dims& dims) const { validate_ranks(ranks, dims); }
};

namespace detail {

/// Leading r-dimensional eigenbasis of a second-moment matrix plus its full
/// spectrum (clamped at zero).
inline void basis_from_moment(const Matrix& moment, std::size_t r, Matrix& basis, Vector& spectrum) {
  const auto eig = sym_eig(moment, moment.rows());
  if (!(eig.values(0) > 0.0))
    throw NumericError("degenerate spectrum: leading eigenvalue of the second moment is not positive");
  basis = eig.vectors.leftCols(static_cast<Eigen::Index>(r));
  spectrum = eig.values.cwiseMax(0.0);
}

inline LoadingSet loadings_from_moments(std::span<const Matrix> moments, const Ranks& ranks) {
  LoadingSet out;
  for (std::size_t k = 0; k < moments.size(); ++k) {
    Matrix basis;
    Vector spectrum;
    basis_from_moment(moments[k], ranks[k], basis, spectrum);
    out.push_mode(std::move(basis), std::move(spectrum));
  }
  return out;
}

inline LoadingSet initial_loadings(const TensorSeries& series, const TimeSelection& sel, const Ranks& ranks,
                                   TruncationLevel tau) {
  validate_ranks(ranks, series.dims());
  const std::size_t n = selection_size(sel);
  if (n == 0) throw DimensionError("loading estimation on an empty time selection");
  std::vector<Matrix> moments;
  for (std::size_t k = 0; k < series.order(); ++k) {
    const auto s = split_at(series.dims(), k);
    moments.push_back(mode_gram_sum(series, k, tau, sel) /
                      (static_cast<double>(n) * static_cast<double>(s.before * s.after)));
  }
  return loadings_from_moments(moments, ranks);
}

inline LoadingSet refine_loadings(const TensorSeries& series, const TimeSelection& sel, const LoadingSet& current,
                                  const Ranks& ranks, TruncationLevel tau) {
  validate_ranks(ranks, series.dims());
  if (current.order() != series.order()) throw DimensionError("refine_loadings: loading set order mismatch");
  const std::size_t n = selection_size(sel);
  if (n == 0) throw DimensionError("loading estimation on an empty time selection");
  const auto sums = projected_gram_sums(series, tau, current.e, sel);
  LoadingSet out;
  for (std::size_t k = 0; k < series.order(); ++k) {
    const auto s = split_at(series.dims(), k);
    const Matrix moment = sums[k] / (static_cast<double>(n) * static_cast<double>(s.before * s.after));
    Matrix basis;
    Vector spectrum;
    basis_from_moment(moment, ranks[k], basis, spectrum);
    out.push_mode(std::move(basis), std::move(spectrum));
  }
  return out;
}

inline std::vector<LoadingSet> estimate_loadings(const TensorSeries& series, const TimeSelection& sel,
                                                 const Ranks& ranks, TruncationLevel tau, std::size_t iterations) {
  std::vector<LoadingSet> stages;
  stages.push_back(initial_loadings(series, sel, ranks, tau));
  for (std::size_t i = 1; i <= iterations; ++i)
    stages.push_back(refine_loadings(series, sel, stages.back(), ranks, tau));
  return stages;
}

}  // namespace detail

/// Stage-0 (HOSVD-type) loadings from the truncated mode-k second moments.
inline LoadingSet initial_loadings(const TensorSeries& series, const Ranks& ranks, TruncationLevel tau) {
  return detail::initial_loadings(series, detail::all_times(series), ranks, tau);
}

/// One projected refinement sweep over all modes, with every projection built
/// from `current`.
inline LoadingSet refine_loadings(const TensorSeries& series, const LoadingSet& current, const Ranks& ranks,
                                  TruncationLevel tau) {
  return detail::refine_loadings(series, detail::all_times(series), current, ranks, tau);
}

/// Stages 0..iterations; element i holds the stage-i estimate.
inline std::vector<LoadingSet> estimate_loadings(const TensorSeries& series, const Ranks& ranks,
                                                 TruncationLevel tau, std::size_t iterations = 2) {
  return detail::estimate_loadings(series, detail::all_times(series), ranks, tau, iterations);
}

/// F_t = p^{-1} X_t^trunc(kappa) x_1 Lambda_1^T ... x_K Lambda_K^T.
inline FactorSeries estimate_factors(const TensorSeries& series, const LoadingSet& loadings, TruncationLevel kappa) {
  const Dims& dims = series.dims();
  if (loadings.order() != dims.size()) throw DimensionError("estimate_factors: loading set order mismatch");
  Dims fdims;
  std::vector<Matrix> lt(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (static_cast<std::size_t>(loadings.lambda[k].rows()) != dims[k])
      throw DimensionError("estimate_factors: loading rows do not match mode " + std::to_string(k + 1));
    lt[k] = loadings.lambda[k].transpose();
    fdims.push_back(static_cast<std::size_t>(loadings.lambda[k].cols()));
  }
  // Contract every mode (no mode is kept, so pass an out-of-range "kept" mode).
  std::vector<std::size_t> order;
  for (std::size_t l = 0; l < dims.size(); ++l) order.push_back(l);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dims[a] > dims[b]; });

  const double inv_p = 1.0 / static_cast<double>(product(dims));
  FactorSeries out(fdims, series.length());
  std::vector<double> scratch, work;
  for (std::size_t t = 0; t < series.length(); ++t) {
    detail::project_other_modes(series.slice(t), dims, dims.size(), kappa, lt, order, scratch, work);
    auto dst = out.slice(t);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = work[i] * inv_p;
  }
  return out;
}

/// chi_t = F_t x_1 Lambda_1 ... x_K Lambda_K.
inline TensorSeries common_component(const FactorSeries& factors, const LoadingSet& loadings) {
  const Dims& fdims = factors.dims();
  if (loadings.order() != fdims.size()) throw DimensionError("common_component: loading set order mismatch");
  Dims dims;
  for (std::size_t k = 0; k < fdims.size(); ++k) {
    if (static_cast<std::size_t>(loadings.lambda[k].cols()) != fdims[k])
      throw DimensionError("common_component: factor dims do not match loading ranks");
    dims.push_back(static_cast<std::size_t>(loadings.lambda[k].rows()));
  }
  TensorSeries out(dims, factors.length());
  for (std::size_t t = 0; t < factors.length(); ++t) {
    Tensor chi = multi_mode_product(factors.item(t), loadings.lambda);
    std::copy(chi.data().begin(), chi.data().end(), out.slice(t).begin());
  }
  return out;
}

}  // namespace rtfm
