#pragma once

// Synthetic tensor and vector factor panels with serial and cross-sectional
// dependence, heavy-tailed innovations and injected outliers.

#include <algorithm>
#include <boost/random/chi_squared_distribution.hpp>
#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/student_t_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <unordered_set>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/estimator.hpp"
#include "rtfm/linalg.hpp"
#include "rtfm/random.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm {

enum class Innovation { gaussian, t3_scaled };

/// How loading entries are drawn. `uniform` keeps raw Unif[-1,1] entries;
/// `orthonormal_sqrt_p` rescales their column space so that L^T L = p_k I.
enum class LoadingDraw { uniform, orthonormal_sqrt_p };

inline std::string to_string(Innovation d) { return d == Innovation::gaussian ? "gaussian" : "t3"; }

inline Innovation parse_innovation(const std::string& s) {
  if (s == "gaussian" || s == "normal") return Innovation::gaussian;
  if (s == "t3" || s == "t3_scaled") return Innovation::t3_scaled;
  throw ConfigError("unknown distribution '" + s + "' (expected gaussian or t3)");
}

struct TensorDgpConfig {
  Dims dims{20, 30, 40};
  Ranks ranks{3, 3, 3};
  std::size_t n = 500;
  double phi = 0.3;
  double psi = 0.3;
  Innovation factor_dist = Innovation::gaussian;
  Innovation idio_dist = Innovation::gaussian;
  LoadingDraw loading_draw = LoadingDraw::uniform;
  std::size_t burn_in = 200;
  std::uint64_t seed = 1;

  void validate() const {
    validate_dims(dims);
    validate_ranks(ranks, dims);
    if (n < 1) throw ConfigError("n must be at least 1");
    if (!(std::abs(phi) < 1.0) || !(std::abs(psi) < 1.0)) throw ConfigError("AR coefficients must lie in (-1, 1)");
  }

  /// T1 (10,10,10), T2 (100,10,10), T3 (20,30,40); ranks (3,3,3).
  static TensorDgpConfig preset(const std::string& name) {
    TensorDgpConfig c;
    if (name == "T1") c.dims = {10, 10, 10};
    else if (name == "T2") c.dims = {100, 10, 10};
    else if (name == "T3") c.dims = {20, 30, 40};
    else throw ConfigError("unknown tensor scenario '" + name + "'");
    return c;
  }
};

/// Observed data plus the ground truth that generated it.
struct TensorSample {
  TensorSeries x;
  TensorSeries common;
  TensorSeries idio;
  FactorSeries factors;
  std::vector<Matrix> loadings;
};

namespace detail {

template <class Engine>
double draw_innovation(Innovation d, Engine& gen) {
  if (d == Innovation::gaussian) return boost::random::normal_distribution<double>()(gen);
  return boost::random::student_t_distribution<double>(3.0)(gen) / std::sqrt(3.0);
}

/// Applies S = a I + b 11^T, the symmetric square root of the compound
/// symmetry matrix with unit diagonal and off-diagonal 1/p, along mode k.
inline void apply_compound_sqrt(std::span<double> x, const Dims& dims, std::size_t k) {
  const auto s = split_at(dims, k);
  const double p = static_cast<double>(s.extent);
  const double a = std::sqrt(1.0 - 1.0 / p);
  const double b = (std::sqrt(2.0 - 1.0 / p) - a) / p;
  for (std::size_t ib = 0; ib < s.after; ++ib)
    for (std::size_t ia = 0; ia < s.before; ++ia) {
      double* base = x.data() + ia + s.before * s.extent * ib;
      double sum = 0.0;
      for (std::size_t i = 0; i < s.extent; ++i) sum += base[i * s.before];
      for (std::size_t i = 0; i < s.extent; ++i) base[i * s.before] = a * base[i * s.before] + b * sum;
    }
}

/// Uniform k-subset of [0, n) by Floyd's algorithm, returned sorted.
template <class Engine>
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Engine& gen) {
  if (k > n) throw ConfigError("cannot sample more cells than exist");
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(k * 2);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = boost::random::uniform_int_distribution<std::size_t>(0, j)(gen);
    const std::size_t pick = chosen.insert(t).second ? t : j;
    if (pick == j) chosen.insert(j);
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Type-7 sample quantile (linear interpolation between order statistics).
inline double quantile_type7(std::vector<double> v, double level) {
  if (v.empty()) throw DimensionError("quantile of an empty sample");
  const double h = (static_cast<double>(v.size()) - 1.0) * level;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double a = v[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  return a + (h - std::floor(h)) * (b - a);
}

inline TensorSeries rebuild_common(const FactorSeries& f, const std::vector<Matrix>& loadings) {
  LoadingSet ls;
  for (const auto& l : loadings) {
    ls.lambda.push_back(l);
    ls.e.push_back(l);
  }
  return common_component(f, ls);
}

}  // namespace detail

inline TensorSample gen_tensor(const TensorDgpConfig& cfg) {
  cfg.validate();
  Philox4x32 gen(cfg.seed, streams::clean_data);
  const std::size_t order = cfg.dims.size();
  TensorSample out;

  boost::random::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (std::size_t k = 0; k < order; ++k) {
    Matrix l(static_cast<Eigen::Index>(cfg.dims[k]), static_cast<Eigen::Index>(cfg.ranks[k]));
    for (Eigen::Index j = 0; j < l.cols(); ++j)
      for (Eigen::Index i = 0; i < l.rows(); ++i) l(i, j) = unif(gen);
    if (cfg.loading_draw == LoadingDraw::orthonormal_sqrt_p)
      l = std::sqrt(static_cast<double>(cfg.dims[k])) * orthonormal_basis(l);
    out.loadings.push_back(std::move(l));
  }

  const std::size_t r = product(cfg.ranks), p = product(cfg.dims);
  const std::size_t steps = cfg.burn_in + cfg.n;

  out.factors = FactorSeries(cfg.ranks, cfg.n);
  std::vector<double> f(r, 0.0);
  const double sf = std::sqrt(1.0 - cfg.phi * cfg.phi);
  for (std::size_t s = 0; s < steps; ++s) {
    for (double& v : f) v = cfg.phi * v + sf * detail::draw_innovation(cfg.factor_dist, gen);
    if (s >= cfg.burn_in) std::copy(f.begin(), f.end(), out.factors.slice(s - cfg.burn_in).begin());
  }

  out.idio = TensorSeries(cfg.dims, cfg.n);
  std::vector<double> xi(p, 0.0), v(p);
  const double sx = std::sqrt(1.0 - cfg.psi * cfg.psi);
  for (std::size_t s = 0; s < steps; ++s) {
    for (double& e : v) e = detail::draw_innovation(cfg.idio_dist, gen);
    for (std::size_t k = 0; k < order; ++k) detail::apply_compound_sqrt(v, cfg.dims, k);
    for (std::size_t i = 0; i < p; ++i) xi[i] = cfg.psi * xi[i] + sx * v[i];
    if (s >= cfg.burn_in) std::copy(xi.begin(), xi.end(), out.idio.slice(s - cfg.burn_in).begin());
  }

  out.common = detail::rebuild_common(out.factors, out.loadings);
  out.x = out.common;
  for (std::size_t i = 0; i < out.x.data().size(); ++i) out.x.data()[i] += out.idio.data()[i];
  return out;
}

enum class OutlierTarget { idiosyncratic, factor };

struct OutlierConfig {
  OutlierTarget target = OutlierTarget::idiosyncratic;
  double varrho = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(varrho >= 0.0 && varrho < 1.0)) throw ConfigError("outlier proportion must lie in [0, 1)");
  }
};

struct Contamination {
  std::vector<std::size_t> cells;  // sorted linear offsets into the contaminated array
  double q = 0.0;                  // reference quantile
};

/// Replaces floor(varrho * size) uniformly chosen entries with s * U,
/// s = +-1 and U ~ Unif[Q + 12, Q + 15], Q the max(1 - 100/size, 0.999)
/// quantile of |values|.
template <class Engine>
Contamination contaminate_values(std::span<double> values, double varrho, Engine& gen) {
  Contamination c;
  const std::size_t total = values.size();
  const auto count = static_cast<std::size_t>(std::floor(varrho * static_cast<double>(total)));
  if (count == 0) return c;
  std::vector<double> mags(total);
  for (std::size_t i = 0; i < total; ++i) mags[i] = std::abs(values[i]);
  c.q = detail::quantile_type7(std::move(mags), std::max(1.0 - 100.0 / static_cast<double>(total), 0.999));
  c.cells = detail::sample_without_replacement(total, count, gen);
  boost::random::uniform_real_distribution<double> u(c.q + 12.0, c.q + 15.0);
  boost::random::uniform_int_distribution<int> coin(0, 1);
  for (std::size_t idx : c.cells) {
    const double sign = coin(gen) ? 1.0 : -1.0;
    values[idx] = sign * u(gen);
  }
  return c;
}

/// Idiosyncratic target: replaces observed cells, truth untouched. Factor
/// target: replaces core entries, then rebuilds the common component and the
/// observations from the contaminated factors.
inline Contamination contaminate(TensorSample& sample, const OutlierConfig& cfg) {
  cfg.validate();
  Philox4x32 gen(cfg.seed, streams::outliers);
  if (cfg.target == OutlierTarget::idiosyncratic) return contaminate_values(sample.x.data(), cfg.varrho, gen);
  Contamination c = contaminate_values(sample.factors.data(), cfg.varrho, gen);
  if (!c.cells.empty()) {
    sample.common = detail::rebuild_common(sample.factors, sample.loadings);
    sample.x = sample.common;
    for (std::size_t i = 0; i < sample.x.data().size(); ++i) sample.x.data()[i] += sample.idio.data()[i];
  }
  return c;
}

// ---------------------------------------------------------------------------
// Vector panels

enum class VectorScenario { V1, V2, V3, V4, V5 };
enum class Dependence { independent, dependent };

inline VectorScenario parse_vector_scenario(const std::string& s) {
  if (s == "V1") return VectorScenario::V1;
  if (s == "V2") return VectorScenario::V2;
  if (s == "V3") return VectorScenario::V3;
  if (s == "V4") return VectorScenario::V4;
  if (s == "V5") return VectorScenario::V5;
  throw ConfigError("unknown vector scenario '" + s + "'");
}

struct VectorDgpConfig {
  std::size_t p = 100;
  std::size_t n = 200;
  std::size_t r = 3;
  Dependence dependence = Dependence::independent;
  VectorScenario scenario = VectorScenario::V1;
  std::size_t burn_in = 200;
  std::uint64_t seed = 1;

  double rho() const { return dependence == Dependence::dependent ? 0.5 : 0.0; }
  double beta() const { return dependence == Dependence::dependent ? 0.2 : 0.0; }
  std::size_t bandwidth() const { return dependence == Dependence::dependent ? std::max<std::size_t>(10, p / 20) : 0; }

  void validate() const {
    if (p < 1 || n < 1) throw ConfigError("p and n must be at least 1");
    if (r < 1 || r > p) throw ConfigError("r must lie in [1, p]");
  }
};

/// Symmetric alpha-stable draw (skewness 0, scale 1, location 0) by the
/// Chambers-Mallows-Stuck transform.
template <class Engine>
double draw_symmetric_stable(double alpha, Engine& gen) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  const double v = boost::random::uniform_real_distribution<double>(-half_pi, half_pi)(gen);
  const double w = boost::random::exponential_distribution<double>(1.0)(gen);
  if (alpha == 1.0) return std::tan(v);
  return std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha) *
         std::pow(std::cos((1.0 - alpha) * v) / w, (1.0 - alpha) / alpha);
}

/// Skew-t with location 0, scale 1, slant `slant` and `nu` degrees of freedom:
/// a skew-normal variate divided by sqrt(chi^2_nu / nu).
template <class Engine>
double draw_skew_t(double slant, double nu, Engine& gen) {
  boost::random::normal_distribution<double> nd;
  const double delta = slant / std::sqrt(1.0 + slant * slant);
  const double z = delta * std::abs(nd(gen)) + std::sqrt(1.0 - delta * delta) * nd(gen);
  const double w = boost::random::chi_squared_distribution<double>(nu)(gen);
  return z / std::sqrt(w / nu);
}

namespace detail {

template <class Engine>
double draw_vector_factor(VectorScenario s, Engine& gen) {
  switch (s) {
    case VectorScenario::V1:
    case VectorScenario::V3: return boost::random::normal_distribution<double>()(gen);
    case VectorScenario::V2: return draw_innovation(Innovation::t3_scaled, gen);
    case VectorScenario::V4: return draw_symmetric_stable(1.9, gen);
    case VectorScenario::V5: return draw_skew_t(20.0, 3.0, gen);
  }
  return 0.0;
}

template <class Engine>
double draw_vector_idio(VectorScenario s, Engine& gen) {
  switch (s) {
    case VectorScenario::V1: return boost::random::normal_distribution<double>()(gen);
    case VectorScenario::V2:
    case VectorScenario::V3: return draw_innovation(Innovation::t3_scaled, gen);
    case VectorScenario::V4:
    case VectorScenario::V5: return draw_symmetric_stable(1.9, gen);
  }
  return 0.0;
}

}  // namespace detail

/// K = 1 panel x_t = L f_t + xi_t with N(0,1) loadings, i.i.d. factors and
/// AR(rho) idiosyncratic terms driven by a banded moving sum of innovations.
inline TensorSample gen_vector(const VectorDgpConfig& cfg) {
  cfg.validate();
  Philox4x32 gen(cfg.seed, streams::clean_data);
  TensorSample out;
  boost::random::normal_distribution<double> nd;
  Matrix l(static_cast<Eigen::Index>(cfg.p), static_cast<Eigen::Index>(cfg.r));
  for (Eigen::Index j = 0; j < l.cols(); ++j)
    for (Eigen::Index i = 0; i < l.rows(); ++i) l(i, j) = nd(gen);
  out.loadings.push_back(std::move(l));

  out.factors = FactorSeries({cfg.r}, cfg.n);
  for (double& v : out.factors.data()) v = detail::draw_vector_factor(cfg.scenario, gen);

  const double rho = cfg.rho(), beta = cfg.beta();
  const std::size_t J = cfg.bandwidth();
  const double scale = std::sqrt((1.0 - rho * rho) / (1.0 + 2.0 * static_cast<double>(J) * beta * beta));
  out.idio = TensorSeries({cfg.p}, cfg.n);
  std::vector<double> e(cfg.p, 0.0), v(cfg.p), prefix(cfg.p + 1);
  const std::size_t steps = cfg.burn_in + cfg.n;
  for (std::size_t s = 0; s < steps; ++s) {
    for (double& x : v) x = detail::draw_vector_idio(cfg.scenario, gen);
    prefix[0] = 0.0;
    for (std::size_t i = 0; i < cfg.p; ++i) prefix[i + 1] = prefix[i] + v[i];
    for (std::size_t i = 0; i < cfg.p; ++i) {
      double band = 0.0;
      if (beta != 0.0) {
        const std::size_t lo = i >= J ? i - J : 0, hi = std::min(cfg.p - 1, i + J);
        band = prefix[hi + 1] - prefix[lo];
      }
      e[i] = rho * e[i] + (1.0 - beta) * v[i] + beta * band;
    }
    if (s >= cfg.burn_in) {
      auto dst = out.idio.slice(s - cfg.burn_in);
      for (std::size_t i = 0; i < cfg.p; ++i) dst[i] = scale * e[i];
    }
  }

  out.common = detail::rebuild_common(out.factors, out.loadings);
  out.x = out.common;
  for (std::size_t i = 0; i < out.x.data().size(); ++i) out.x.data()[i] += out.idio.data()[i];
  return out;
}

}  // namespace rtfm
