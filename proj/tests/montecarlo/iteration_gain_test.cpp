#include <gtest/gtest.h>

#include "rtfm/estimator.hpp"
#include "rtfm/evaluation.hpp"
#include "rtfm/simulate.hpp"

using namespace rtfm;

// Projected refinement should beat the initial estimate on most draws of the
// (20,30,40) design, even though it is not monotone on every draw.
TEST(IterationGain, RefinedBeatsInitialOnMostReplications) {
  constexpr std::size_t kReps = 100;
  std::array<std::size_t, 3> wins{};
  for (std::size_t r = 0; r < kReps; ++r) {
    TensorDgpConfig c = TensorDgpConfig::preset("T3");
    c.seed = replication_seed(101, r);
    const auto s = gen_tensor(c);
    std::vector<double> mag(s.x.data().begin(), s.x.data().end());
    for (double& v : mag) v = std::abs(v);
    const TruncationLevel tau(detail::quantile_type7(std::move(mag), 0.999));
    const auto stages = estimate_loadings(s.x, c.ranks, tau, 2);
    for (std::size_t k = 0; k < 3; ++k)
      if (loading_error(stages[2].e[k], s.loadings[k]) <= loading_error(stages[0].e[k], s.loadings[k])) ++wins[k];
  }
  for (std::size_t k = 0; k < 3; ++k) EXPECT_GE(wins[k], 80u) << "mode " << k + 1;
}
