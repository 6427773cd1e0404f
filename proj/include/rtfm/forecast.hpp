#pragma once

// Rolling-window direct forecasts for vector panels from truncated lagged
// second moments projected through the estimated factor space.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/linalg.hpp"
#include "rtfm/robust_moments.hpp"
#include "rtfm/tensor.hpp"
#include "rtfm/tuning.hpp"

namespace rtfm {

enum class Standardization { none, mean_sd, median_mad };

inline Standardization parse_standardization(const std::string& s) {
  if (s == "none") return Standardization::none;
  if (s == "mean_sd") return Standardization::mean_sd;
  if (s == "median_mad") return Standardization::median_mad;
  throw ConfigError("unknown standardization '" + s + "'");
}

inline std::string to_string(Standardization s) {
  switch (s) {
    case Standardization::none: return "none";
    case Standardization::mean_sd: return "mean_sd";
    case Standardization::median_mad: return "median_mad";
  }
  return "?";
}

struct ForecastConfig {
  std::size_t window = 120;
  std::size_t h_max = 24;
  std::size_t rank = 1;
  std::optional<TruncationLevel> tau;    // empty: cross-validate
  std::optional<TruncationLevel> kappa;  // empty: same as tau
  bool cv_per_window = false;            // otherwise CV once, on the first window
  CvConfig cv;
  Standardization standardization = Standardization::mean_sd;

  void validate(std::size_t p) const {
    if (h_max < 1) throw ConfigError("forecast horizon must be at least 1");
    if (window < h_max + 2) throw ConfigError("window must be at least h_max + 2");
    if (rank < 1 || rank > p) throw ConfigError("forecast rank must lie in [1, p]");
  }
};

/// Panel as a p x n matrix (columns are time points).
inline Matrix panel_matrix(const TensorSeries& s) {
  if (s.order() != 1) throw DimensionError("forecasting needs a vector (order-1) series");
  return Eigen::Map<const Matrix>(s.data().data(), static_cast<Eigen::Index>(s.dims()[0]),
                                  static_cast<Eigen::Index>(s.length()));
}

inline TensorSeries panel_series(const Matrix& m) {
  TensorSeries s({static_cast<std::size_t>(m.rows())}, static_cast<std::size_t>(m.cols()));
  Eigen::Map<Matrix>(s.data().data(), m.rows(), m.cols()) = m;
  return s;
}

/// T^{-1} sum_{u=0}^{T-1-h} x_u^trunc (x_{u+h}^trunc)^T over the columns of `w`.
inline Matrix lagged_second_moment(const Matrix& w, TruncationLevel tau, std::size_t h) {
  const Eigen::Index len = w.cols();
  if (len < 1) throw DimensionError("lagged moment of an empty window");
  if (static_cast<Eigen::Index>(h) >= len) throw DimensionError("lag exceeds window length");
  const Matrix x = w.unaryExpr([tau](double v) { return tau.apply(v); });
  const Eigen::Index m = len - static_cast<Eigen::Index>(h);
  return x.leftCols(m) * x.middleCols(static_cast<Eigen::Index>(h), m).transpose() / static_cast<double>(len);
}

/// Per-variable affine map used to standardise a window.
struct Scaling {
  Vector center;
  Vector scale;

  Matrix apply(const Matrix& w) const {
    return (w.colwise() - center).array().colwise() / scale.array();
  }
  Vector invert(const Vector& z) const { return center + scale.cwiseProduct(z); }
};

inline Scaling fit_scaling(const Matrix& w, Standardization kind) {
  Scaling s{Vector::Zero(w.rows()), Vector::Ones(w.rows())};
  if (kind == Standardization::none) return s;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (kind == Standardization::mean_sd) {
      s.center(i) = w.row(i).mean();
      if (w.cols() > 1)
        s.scale(i) = std::sqrt((w.row(i).array() - s.center(i)).square().sum() / static_cast<double>(w.cols() - 1));
    } else {
      std::vector<double> v(static_cast<std::size_t>(w.cols()));
      for (Eigen::Index j = 0; j < w.cols(); ++j) v[static_cast<std::size_t>(j)] = w(i, j);
      s.center(i) = median_inplace(v);
      for (double& x : v) x = std::abs(x - s.center(i));
      s.scale(i) = 1.4826 * median_inplace(v);
    }
    if (!(s.scale(i) > 0.0))
      throw NumericError("cannot standardise variable " + std::to_string(i + 1) + ": zero spread in window");
  }
  return s;
}

/// Predictions for horizons 1..h_max (columns) from a standardised window,
/// X_hat(h) = Gamma(h)^T E M^{-1} E^T x_last^trunc(kappa). Column 0 of the
/// result corresponds to h = 1 unless `include_zero` is set, in which case it
/// corresponds to h = 0.
inline Matrix forecast_window(const Matrix& w, std::size_t rank, TruncationLevel tau, TruncationLevel kappa,
                              std::size_t h_max, bool include_zero = false) {
  const Eigen::Index len = w.cols();
  if (len < 1) throw DimensionError("forecast from an empty window");
  if (static_cast<Eigen::Index>(h_max) >= len) throw DimensionError("horizon exceeds window length");
  const Matrix g0 = lagged_second_moment(w, tau, 0);
  const auto eig = sym_eig(0.5 * (g0 + g0.transpose()), static_cast<Eigen::Index>(rank));
  for (Eigen::Index j = 0; j < eig.values.size(); ++j)
    if (!(eig.values(j) > 1e-12)) throw NumericError("forecast: singular factor second moment (M is not invertible)");
  const Vector last = w.col(len - 1).unaryExpr([kappa](double v) { return kappa.apply(v); });
  const Vector v = eig.vectors * (eig.vectors.transpose() * last).cwiseQuotient(eig.values);

  // Gamma(h)^T v = T^{-1} sum_u x_{u+h} (x_u^T v), without forming Gamma(h).
  const Matrix x = w.unaryExpr([tau](double a) { return tau.apply(a); });
  const Vector s = x.transpose() * v;
  const std::size_t first = include_zero ? 0 : 1;
  Matrix out(w.rows(), static_cast<Eigen::Index>(h_max + 1 - first));
  for (std::size_t h = first; h <= h_max; ++h) {
    const Eigen::Index m = len - static_cast<Eigen::Index>(h);
    out.col(static_cast<Eigen::Index>(h - first)) =
        x.middleCols(static_cast<Eigen::Index>(h), m) * s.head(m) / static_cast<double>(len);
  }
  return out;
}

/// Single-variable prediction X_hat_{i, t+h | T} from a raw window.
inline double forecast_one(const Matrix& window, std::size_t i, std::size_t h, std::size_t rank, TruncationLevel tau,
                           TruncationLevel kappa, Standardization kind = Standardization::none) {
  if (static_cast<Eigen::Index>(i) >= window.rows()) throw DimensionError("forecast_one: variable index out of range");
  const Scaling sc = fit_scaling(window, kind);
  const Matrix pred = forecast_window(sc.apply(window), rank, tau, kappa, h, true);
  const double z = pred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h));
  return sc.center(static_cast<Eigen::Index>(i)) + sc.scale(static_cast<Eigen::Index>(i)) * z;
}

/// p x h_max predictions in original units from the raw window ending at
/// `origin` (0-based, inclusive).
using Forecaster = std::function<Matrix(const Matrix& window, std::size_t origin)>;

struct RollingResult {
  std::vector<std::size_t> origins;  // 0-based index of the last in-window observation
  Matrix errors;                     // p x origins: mean absolute error over horizons 1..h_max
  Vector mean_errors;                // per variable
  std::vector<double> taus;          // truncation level used at each origin (NaN for custom forecasters)
};

namespace detail {

inline double resolve_forecast_tau(const Matrix& std_window, const ForecastConfig& cfg) {
  if (cfg.tau) return cfg.tau->value();
  const auto cv = cv_tau(panel_series(std_window), {cfg.rank}, cfg.cv);
  return cv.tau;
}

}  // namespace detail

/// Built-in forecaster plus a record of the tau used per call.
inline Forecaster make_forecaster(const ForecastConfig& cfg, std::vector<double>* taus = nullptr) {
  auto cached = std::make_shared<std::optional<double>>();
  return [cfg, cached, taus](const Matrix& window, std::size_t) {
    const Scaling sc = fit_scaling(window, cfg.standardization);
    const Matrix z = sc.apply(window);
    double tau_v;
    if (cfg.tau) tau_v = cfg.tau->value();
    else if (!cfg.cv_per_window && cached->has_value()) tau_v = **cached;
    else {
      tau_v = detail::resolve_forecast_tau(z, cfg);
      *cached = tau_v;
    }
    if (taus) taus->push_back(tau_v);
    const TruncationLevel tau = std::isinf(tau_v) ? TruncationLevel::infinity() : TruncationLevel(tau_v);
    const TruncationLevel kappa = cfg.kappa ? *cfg.kappa : tau;
    Matrix pred = forecast_window(z, cfg.rank, tau, kappa, cfg.h_max);
    for (Eigen::Index h = 0; h < pred.cols(); ++h) pred.col(h) = sc.invert(pred.col(h));
    return pred;
  };
}

/// Forecast errors at origins T..n-h_max-1 (0-based), i.e. n - T - h_max
/// origins, each using only the T observations ending at the origin.
inline RollingResult rolling_errors(const TensorSeries& series, const ForecastConfig& cfg,
                                    const Forecaster& forecaster) {
  const Matrix x = panel_matrix(series);
  const std::size_t n = series.length(), p = series.dims()[0];
  cfg.validate(p);
  if (n < cfg.window + cfg.h_max + 1)
    throw ConfigError("need n >= T + h_max + 1 observations for rolling forecasts");
  RollingResult out;
  const std::size_t count = n - cfg.window - cfg.h_max;
  out.errors.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(count));
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t origin = cfg.window + c;
    out.origins.push_back(origin);
    const Matrix window = x.middleCols(static_cast<Eigen::Index>(origin + 1 - cfg.window),
                                       static_cast<Eigen::Index>(cfg.window));
    const Matrix pred = forecaster(window, origin);
    if (pred.rows() != static_cast<Eigen::Index>(p) || pred.cols() != static_cast<Eigen::Index>(cfg.h_max))
      throw DimensionError("forecaster returned a matrix of the wrong shape");
    const Matrix actual = x.middleCols(static_cast<Eigen::Index>(origin + 1), static_cast<Eigen::Index>(cfg.h_max));
    out.errors.col(static_cast<Eigen::Index>(c)) = (pred - actual).cwiseAbs().rowwise().mean();
  }
  out.mean_errors = out.errors.rowwise().mean();
  return out;
}

inline RollingResult rolling_errors(const TensorSeries& series, const ForecastConfig& cfg) {
  std::vector<double> taus;
  RollingResult r = rolling_errors(series, cfg, make_forecaster(cfg, &taus));
  r.taus = std::move(taus);
  return r;
}

/// Per-origin cross-sectional mean loss of A minus that of B.
struct LossDifference {
  std::vector<std::size_t> origins;
  std::vector<double> loss_a, loss_b, diff;
};

inline LossDifference loss_difference(const RollingResult& a, const RollingResult& b) {
  if (a.origins != b.origins || a.errors.rows() != b.errors.rows())
    throw DimensionError("loss_difference: results cover different origins or panels");
  LossDifference d;
  d.origins = a.origins;
  for (Eigen::Index c = 0; c < a.errors.cols(); ++c) {
    d.loss_a.push_back(a.errors.col(c).mean());
    d.loss_b.push_back(b.errors.col(c).mean());
    d.diff.push_back(d.loss_a.back() - d.loss_b.back());
  }
  return d;
}

}  // namespace rtfm
