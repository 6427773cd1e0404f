#pragma once

// Eigenvalue-ratio factor-number estimation and its iterative refinement over
// projected second moments.

#include <algorithm>
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

/// Ridge term rho added to the denominator of every eigenvalue ratio.
struct RhoRule {
  enum class Kind { reciprocal_leading, fixed } kind = Kind::reciprocal_leading;
  double value = 0.0;

  static RhoRule reciprocal() { return {}; }
  static RhoRule fixed_value(double rho) {
    if (!(rho > 0.0)) throw ConfigError("rho must be positive");
    return {Kind::fixed, rho};
  }

  double resolve(double leading_eigenvalue) const {
    if (kind == Kind::fixed) return value;
    if (!(leading_eigenvalue > 0.0))
      throw NumericError("rho = 1/mu_1 undefined: leading eigenvalue is not positive");
    return 1.0 / leading_eigenvalue;
  }
};

/// min(floor(p/2), p-1, 20); a mode of extent 1 can only carry rank 1.
inline std::size_t default_r_bar(std::size_t p) {
  if (p <= 1) return 1;
  return std::min<std::size_t>({p / 2, p - 1, 20});
}

struct RankConfig {
  std::optional<Ranks> r_bar;  // default_r_bar per mode when empty
  std::size_t max_iterations = 10;
  RhoRule rho;

  Ranks resolve_r_bar(const Dims& dims) const {
    Ranks out;
    if (r_bar) {
      if (r_bar->size() != dims.size())
        throw ConfigError("r_bar needs " + std::to_string(dims.size()) + " entries");
      out = *r_bar;
    } else {
      for (std::size_t p : dims) out.push_back(default_r_bar(p));
    }
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const std::size_t hi = dims[k] == 1 ? 1 : dims[k] - 1;
      if (out[k] < 1 || out[k] > hi)
        throw ConfigError("r_bar for mode " + std::to_string(k + 1) + " must lie in [1, " + std::to_string(hi) + "]");
    }
    return out;
  }

  void validate(const Dims& dims) const {
    if (max_iterations < 1) throw ConfigError("rank selection needs at least one pass");
    resolve_r_bar(dims);
  }
};

/// argmax over 1 <= j <= r_bar of mu_j / (mu_{j+1} + rho); smallest j on ties.
inline std::size_t ratio_select(std::span<const double> eigvals, std::size_t r_bar, double rho) {
  if (r_bar < 1) throw ConfigError("ratio_select: r_bar must be at least 1");
  if (eigvals.size() < r_bar + 1)
    throw DimensionError("ratio_select: need " + std::to_string(r_bar + 1) + " eigenvalues, got " +
                         std::to_string(eigvals.size()));
  if (!(rho > 0.0)) throw ConfigError("ratio_select: rho must be positive");
  std::size_t best = 1;
  double best_ratio = eigvals[0] / (eigvals[1] + rho);
  for (std::size_t j = 2; j <= r_bar; ++j) {
    const double ratio = eigvals[j - 1] / (eigvals[j] + rho);
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = j;
    }
  }
  return best;
}

struct RankResult {
  Ranks ranks;
  std::vector<Ranks> trace;  // ranks after each pass
  bool converged = false;
  std::size_t stable_since = 0;  // 1-based pass from which the ranks stopped changing
  std::vector<Vector> eigvals;   // projected spectra of the last pass
};

/// Iterative rank estimation starting from r_bar. Each pass projects every mode
/// onto the leading eigenvectors of the other modes' plain second moments, at
/// the previous pass's ranks, and applies the ratio rule to the projected
/// spectrum. Stops once a pass reproduces its input ranks or after
/// max_iterations passes.
inline RankResult estimate_ranks(const TensorSeries& series, TruncationLevel tau, const RankConfig& config = {}) {
  const Dims& dims = series.dims();
  config.validate(dims);
  if (series.length() == 0) throw DimensionError("rank estimation on an empty series");
  const Ranks r_bar = config.resolve_r_bar(dims);
  const std::size_t order = dims.size();

  // Plain moment eigenvectors do not depend on the ranks, so decompose once.
  std::vector<Matrix> full_vectors(order);
  for (std::size_t k = 0; k < order; ++k) {
    const auto eig = sym_eig(mode_second_moment(series, k, tau), static_cast<Eigen::Index>(dims[k]));
    if (!(eig.values(0) > 0.0)) throw NumericError("degenerate spectrum in mode " + std::to_string(k + 1));
    full_vectors[k] = eig.vectors;
  }

  RankResult out;
  Ranks current = r_bar;
  const auto full = detail::all_times(series);
  for (std::size_t pass = 1; pass <= config.max_iterations; ++pass) {
    std::vector<Matrix> e(order);
    for (std::size_t l = 0; l < order; ++l) e[l] = full_vectors[l].leftCols(static_cast<Eigen::Index>(current[l]));
    Ranks next(order, 1);
    out.eigvals.assign(order, Vector());
    const auto sums = detail::projected_gram_sums(series, tau, e, full);
    for (std::size_t k = 0; k < order; ++k) {
      const auto s = split_at(dims, k);
      const Matrix moment = sums[k] /
                            (static_cast<double>(series.length()) * static_cast<double>(s.before * s.after));
      const auto eig = sym_eig(moment, moment.rows());
      const Vector mu = eig.values.cwiseMax(0.0);
      out.eigvals[k] = mu;
      if (dims[k] == 1) continue;
      const double rho = config.rho.resolve(mu(0));
      next[k] = ratio_select(std::span<const double>(mu.data(), static_cast<std::size_t>(mu.size())), r_bar[k], rho);
    }
    out.trace.push_back(next);
    const bool same = next == current;
    current = next;
    if (same) {
      out.converged = true;
      break;
    }
  }
  out.ranks = current;
  out.stable_since = out.trace.size();
  while (out.stable_since > 1 && out.trace[out.stable_since - 2] == out.ranks) --out.stable_since;
  return out;
}

}  // namespace rtfm
