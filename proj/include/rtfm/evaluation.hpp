#pragma once

// Estimation error metrics, Monte Carlo aggregation and the loading
// normality diagnostic.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/estimator.hpp"
#include "rtfm/linalg.hpp"
#include "rtfm/robust_moments.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm {

/// sqrt(1 - tr(P_est P_truth) / r) for full-column-rank p x r inputs.
inline double loading_error(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols())
    throw DimensionError("loading_error: shapes differ");
  const Matrix qa = orthonormal_basis(est), qb = orthonormal_basis(truth);
  const double tr = (qa.transpose() * qb).squaredNorm();
  return std::sqrt(std::clamp(1.0 - tr / static_cast<double>(est.cols()), 0.0, 1.0));
}

/// sum_t |chi_hat - chi|^2 / sum_t |chi|^2 over all times, or over the last
/// min(last, n) times when `last` is set.
inline double common_error(const TensorSeries& est, const TensorSeries& truth,
                           std::optional<std::size_t> last = std::nullopt) {
  if (est.dims() != truth.dims() || est.length() != truth.length())
    throw DimensionError("common_error: series shapes differ");
  const std::size_t n = truth.length();
  const std::size_t begin = last ? n - std::min(*last, n) : 0;
  double num = 0.0, den = 0.0;
  for (std::size_t t = begin; t < n; ++t) {
    const auto a = est.slice(t), b = truth.slice(t);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      num += d * d;
      den += b[i] * b[i];
    }
  }
  if (!(den > 0.0)) throw NumericError("common_error: true common component is zero on the window");
  return num / den;
}

struct MetricSummary {
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n - 1); 0 for a single value
  std::size_t count = 0;
};

inline MetricSummary summarize(std::string metric, std::span<const double> values) {
  if (values.empty()) throw ConfigError("summary of zero replications");
  MetricSummary s{std::move(metric), 0.0, 0.0, values.size()};
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

/// Monte Carlo summary of several metrics for one scenario.
struct McSummary {
  std::string scenario;
  std::size_t replications = 0;
  std::vector<MetricSummary> metrics;

  const MetricSummary& at(const std::string& name) const {
    for (const auto& m : metrics)
      if (m.metric == name) return m;
    throw ConfigError("no metric named '" + name + "'");
  }
};

// ---------------------------------------------------------------------------
// Normality diagnostic for rank-one models.

struct NormalityScores {
  std::vector<std::vector<double>> z;           // per mode, per retained row
  std::vector<std::vector<double>> deviation;   // lambda_check_i - s_k lambda_i per mode, all rows
  std::vector<int> sign;                        // s_k
  std::size_t omitted = 0;                      // rows with a non-positive variance estimate
};

namespace detail {

inline int median_sign(const Vector& a, const Vector& b) {
  long pos = 0, neg = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double v = a(i) * b(i);
    if (v > 0) ++pos;
    else if (v < 0) ++neg;
  }
  return neg > pos ? -1 : 1;
}

}  // namespace detail

/// Standardised loading deviations given a fitted rank-one loading set.
/// `truth[k]` are the true loadings on the sqrt(p_k) scale.
inline NormalityScores normality_scores(const TensorSeries& series, const LoadingSet& fit,
                                        const std::vector<Vector>& truth, TruncationLevel tau) {
  const Dims& dims = series.dims();
  const std::size_t order = dims.size(), n = series.length();
  if (fit.order() != order || truth.size() != order) throw DimensionError("normality: one loading per mode needed");
  for (std::size_t k = 0; k < order; ++k) {
    if (fit.e[k].cols() != 1) throw DimensionError("normality diagnostic requires all ranks equal to 1");
    if (static_cast<std::size_t>(truth[k].size()) != dims[k]) throw DimensionError("normality: truth length mismatch");
  }
  if (n < 2) throw DimensionError("normality diagnostic needs n >= 2");

  const FactorSeries f = estimate_factors(series, fit, tau);
  const TensorSeries chi = common_component(f, fit);
  double gamma_f = 0.0;
  for (double v : f.data()) gamma_f += v * v;
  gamma_f /= static_cast<double>(n);
  if (!(gamma_f > 0.0)) throw NumericError("normality: estimated factor variance is zero");

  // Residuals R_t = X_t^trunc - chi_t^trunc.
  TensorSeries resid(dims, n);
  for (std::size_t i = 0; i < resid.data().size(); ++i)
    resid.data()[i] = tau.apply(series.data()[i]) - tau.apply(chi.data()[i]);

  NormalityScores out;
  std::vector<Matrix> et(order);
  for (std::size_t l = 0; l < order; ++l) et[l] = fit.e[l].transpose();
  std::vector<double> scratch, work;
  for (std::size_t k = 0; k < order; ++k) {
    const auto s = split_at(dims, k);
    const double pmk = static_cast<double>(s.before * s.after);
    const Vector lam = fit.lambda[k].col(0);
    const int sk = detail::median_sign(lam, truth[k]);
    out.sign.push_back(sk);

    // w_t = mat_k(R_t) D with D = kron of the other modes' unit loadings.
    const auto ord = detail::contraction_order(dims, k);
    Matrix w(static_cast<Eigen::Index>(dims[k]), static_cast<Eigen::Index>(n));
    for (std::size_t t = 0; t < n; ++t) {
      detail::project_other_modes(resid.slice(t), dims, k, TruncationLevel::infinity(), et, ord, scratch, work);
      for (std::size_t i = 0; i < dims[k]; ++i) w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = work[i];
    }

    std::vector<double> zk, dk;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      const double mean = w.row(i).mean();
      const double var = (w.row(i).array() - mean).square().sum() / static_cast<double>(n - 1);
      const double phi = var / gamma_f;
      const double dev = lam(i) - sk * truth[k](i);
      dk.push_back(dev);
      if (!(phi > 0.0)) {
        ++out.omitted;
        continue;
      }
      zk.push_back(std::sqrt(static_cast<double>(n) * pmk) * dev / std::sqrt(phi));
    }
    out.z.push_back(std::move(zk));
    out.deviation.push_back(std::move(dk));
  }
  return out;
}

/// Fits rank-one loadings (two refinements) at `tau` and standardises them
/// against `unit_truth`, unit-norm true loading directions. Estimates live on
/// the sqrt(p_k) scale, so the truth is compared as sqrt(p_k) * unit_truth.
inline NormalityScores normality_diagnostic(const TensorSeries& series, const std::vector<Vector>& unit_truth,
                                            TruncationLevel tau) {
  const Dims& dims = series.dims();
  if (unit_truth.size() != dims.size()) throw DimensionError("normality: one truth vector per mode needed");
  std::vector<Vector> truth;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (std::abs(unit_truth[k].norm() - 1.0) > 1e-8) throw ConfigError("normality: truth vectors must have unit norm");
    truth.push_back(std::sqrt(static_cast<double>(dims[k])) * unit_truth[k]);
  }
  const auto stages = estimate_loadings(series, Ranks(dims.size(), 1), tau, 2);
  return normality_scores(series, stages.back(), truth, tau);
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov test against N(0, 1)

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// sup_x |F_n(x) - Phi(x)| from the sorted sample.
inline double ks_statistic_normal(std::vector<double> sample) {
  if (sample.empty()) throw DimensionError("KS statistic of an empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = standard_normal_cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic p-value P(D_n >= d) via the Kolmogorov distribution with
/// Stephens' small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace rtfm
