#pragma once

// One-call estimation: truncation level (fixed or cross-validated), ranks
// (fixed or estimated), loadings, factors and the common component.

#include <optional>
#include <vector>

#include "rtfm/estimator.hpp"
#include "rtfm/rank_selection.hpp"
#include "rtfm/robust_moments.hpp"
#include "rtfm/tuning.hpp"

namespace rtfm {

struct FitOptions {
  std::optional<Ranks> ranks;          // empty: estimate
  std::optional<TruncationLevel> tau;  // empty: cross-validate
  std::optional<TruncationLevel> kappa;  // empty: same as tau
  std::size_t iterations = 2;
  CvConfig cv;
  RankConfig rank;
};

struct EstimationReport {
  Ranks ranks;
  TruncationLevel tau;
  TruncationLevel kappa;
  std::optional<CvResult> cv;
  std::optional<RankResult> rank;
  std::vector<LoadingSet> stages;  // stage 0..iterations
  FactorSeries factors;
  TensorSeries common;

  const LoadingSet& loadings() const { return stages.back(); }
};

/// With estimated ranks and cross-validated tau, CV runs once at the rank
/// upper bounds r_bar and the ranks are then estimated at the chosen tau.
inline EstimationReport fit(const TensorSeries& series, const FitOptions& opt = {}) {
  EstimationReport rep;
  const Dims& dims = series.dims();
  if (opt.ranks) validate_ranks(*opt.ranks, dims);
  opt.rank.validate(dims);

  if (opt.tau) {
    rep.tau = *opt.tau;
  } else {
    CvConfig cvc = opt.cv;
    cvc.iterations = opt.iterations;
    const Ranks cv_ranks = opt.ranks ? *opt.ranks : opt.rank.resolve_r_bar(dims);
    rep.cv = cv_tau(series, cv_ranks, cvc);
    rep.tau = TruncationLevel(rep.cv->tau);
  }
  rep.kappa = opt.kappa ? *opt.kappa : rep.tau;

  if (opt.ranks) {
    rep.ranks = *opt.ranks;
  } else {
    rep.rank = estimate_ranks(series, rep.tau, opt.rank);
    rep.ranks = rep.rank->ranks;
  }

  rep.stages = estimate_loadings(series, rep.ranks, rep.tau, opt.iterations);
  rep.factors = estimate_factors(series, rep.stages.back(), rep.kappa);
  rep.common = common_component(rep.factors, rep.stages.back());
  return rep;
}

}  // namespace rtfm
