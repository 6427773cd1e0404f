#include <gtest/gtest.h>

#include "rtfm/estimator.hpp"
#include "rtfm/evaluation.hpp"
#include "test_support.hpp"

using namespace rtfm;
using rtfm_test::low_rank_series;
using rtfm_test::subspace_distance;

namespace {

const TruncationLevel kInf = TruncationLevel::infinity();

void expect_loading_invariants(const LoadingSet& s) {
  for (std::size_t k = 0; k < s.order(); ++k) {
    const Matrix& e = s.e[k];
    EXPECT_LT((e.transpose() * e - Matrix::Identity(e.cols(), e.cols())).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(s.lambda[k], (std::sqrt(static_cast<double>(e.rows())) * e).eval());
    for (Eigen::Index j = 0; j < s.eigvals[k].size(); ++j) {
      EXPECT_GE(s.eigvals[k](j), 0.0);
      if (j > 0) EXPECT_LE(s.eigvals[k](j), s.eigvals[k](j - 1));
    }
  }
}

}  // namespace

TEST(InitialLoadings, RecoversNoiselessRankOne) {
  std::mt19937_64 gen(11);
  const auto d = low_rank_series({8, 6, 5}, {1, 1, 1}, 30, gen);
  const LoadingSet s = initial_loadings(d.x, {1, 1, 1}, kInf);
  expect_loading_invariants(s);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_LT(loading_error(s.e[k], d.units[k]), 1e-8);
}

TEST(InitialLoadings, VectorCaseIsTruncatedPca) {
  std::mt19937_64 gen(12);
  const auto x = rtfm_test::random_series({15}, 40, gen);
  const TruncationLevel tau(1.0);
  Matrix data(15, 40);
  for (std::size_t t = 0; t < 40; ++t)
    for (std::size_t i = 0; i < 15; ++i) data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
        std::clamp(x.slice(t)[i], -1.0, 1.0);
  const Matrix cov = data * data.transpose() / 40.0;
  Eigen::SelfAdjointEigenSolver<Matrix> ref(cov);
  const Matrix top = ref.eigenvectors().rightCols(3);

  const auto stages = estimate_loadings(x, {3}, tau, 2);
  EXPECT_LT(subspace_distance(stages[0].e[0], top), 1e-10);
  // No other modes to project on, so refinement changes nothing.
  EXPECT_EQ(stages[1].e[0], stages[0].e[0]);
  EXPECT_EQ(stages[2].e[0], stages[0].e[0]);
  for (Eigen::Index j = 0; j < 15; ++j) EXPECT_NEAR(stages[0].eigvals[0](j), ref.eigenvalues()(14 - j), 1e-12);
}

TEST(InitialLoadings, ZeroSeriesIsDegenerate) {
  TensorSeries zero({4, 3}, 5);
  EXPECT_THROW(initial_loadings(zero, {1, 1}, kInf), NumericError);
}

TEST(InitialLoadings, RankAboveDimensionRejected) {
  std::mt19937_64 gen(13);
  const auto x = rtfm_test::random_series({4, 3}, 5, gen);
  EXPECT_THROW(initial_loadings(x, {5, 1}, kInf), DimensionError);
}

TEST(RefineLoadings, NoiselessFixedPoint) {
  std::mt19937_64 gen(14);
  const auto d = low_rank_series({12, 10, 8}, {2, 3, 1}, 50, gen);
  const LoadingSet s0 = initial_loadings(d.x, {2, 3, 1}, kInf);
  const LoadingSet s1 = refine_loadings(d.x, s0, {2, 3, 1}, kInf);
  expect_loading_invariants(s1);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_LT(subspace_distance(s1.e[k], s0.e[k]), 1e-8);
    EXPECT_LT(loading_error(s1.e[k], d.units[k]), 1e-8);
  }
}

TEST(RefineLoadings, EigenvaluesMatchFactorMomentsUnderTrueProjection) {
  std::mt19937_64 gen(15);
  const Dims dims{7, 6, 5}, ranks{2, 3, 1};
  const std::size_t n = 36;
  const auto d = low_rank_series(dims, ranks, n, gen, true);
  LoadingSet truth;
  for (std::size_t k = 0; k < 3; ++k) truth.push_mode(d.units[k], Vector::Zero(ranks[k]));
  const LoadingSet s = refine_loadings(d.x, truth, ranks, kInf);
  for (std::size_t k = 0; k < 3; ++k) {
    Matrix gf = Matrix::Zero(static_cast<Eigen::Index>(ranks[k]), static_cast<Eigen::Index>(ranks[k]));
    for (std::size_t t = 0; t < n; ++t) {
      const Matrix m = unfold(d.factors.item(t), k);
      gf += m * m.transpose();
    }
    gf /= static_cast<double>(n);
    ASSERT_LT((gf - Matrix(gf.diagonal().asDiagonal())).cwiseAbs().maxCoeff(), 1e-14);
    const Vector diag = gf.diagonal();
    std::vector<double> expected(diag.data(), diag.data() + diag.size());
    std::sort(expected.rbegin(), expected.rend());
    for (std::size_t j = 0; j < ranks[k]; ++j)
      EXPECT_NEAR(s.eigvals[k](static_cast<Eigen::Index>(j)), static_cast<double>(dims[k]) * expected[j], 1e-8);
    for (Eigen::Index j = static_cast<Eigen::Index>(ranks[k]); j < s.eigvals[k].size(); ++j)
      EXPECT_NEAR(s.eigvals[k](j), 0.0, 1e-8);
  }
}

TEST(EstimateLoadings, ZeroIterationsIsInitial) {
  std::mt19937_64 gen(16);
  const auto x = rtfm_test::random_series({6, 5, 4}, 20, gen);
  const auto stages = estimate_loadings(x, {2, 2, 2}, TruncationLevel(1.2), 0);
  ASSERT_EQ(stages.size(), 1u);
  const LoadingSet ref = initial_loadings(x, {2, 2, 2}, TruncationLevel(1.2));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(stages[0].e[k], ref.e[k]);
}

TEST(EstimateLoadings, Deterministic) {
  std::mt19937_64 gen(17);
  const auto x = rtfm_test::random_series({9, 7, 5}, 30, gen);
  const auto a = estimate_loadings(x, {2, 3, 2}, TruncationLevel(0.8), 2);
  const auto b = estimate_loadings(x, {2, 3, 2}, TruncationLevel(0.8), 2);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(a[i].e[k], b[i].e[k]);
      EXPECT_EQ(a[i].eigvals[k], b[i].eigvals[k]);
    }
  for (const auto& s : a) expect_loading_invariants(s);
}

TEST(EstimateLoadings, ScaleEquivariance) {
  std::mt19937_64 gen(18);
  const auto x = rtfm_test::random_series({8, 6, 5}, 25, gen);
  const double c = 3.7;
  TensorSeries y = x;
  for (double& v : y.data()) v *= c;
  const auto a = estimate_loadings(x, {2, 2, 1}, TruncationLevel(0.9), 2);
  const auto b = estimate_loadings(y, {2, 2, 1}, TruncationLevel(0.9 * c), 2);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_LT(subspace_distance(a[2].e[k], b[2].e[k]), 1e-10);
  const auto fa = estimate_factors(x, a[2], TruncationLevel(0.9));
  const auto fb = estimate_factors(y, b[2], TruncationLevel(0.9 * c));
  // Factors are identified up to the sign of each loading column.
  const auto chi_a = common_component(fa, a[2]);
  const auto chi_b = common_component(fb, b[2]);
  for (std::size_t i = 0; i < chi_a.data().size(); ++i) EXPECT_NEAR(chi_b.data()[i], c * chi_a.data()[i], 1e-9);
  for (std::size_t i = 0; i < fa.data().size(); ++i) EXPECT_NEAR(std::abs(fb.data()[i]), c * std::abs(fa.data()[i]), 1e-9);
}

TEST(EstimateFactors, ExactWithTrueLoadings) {
  std::mt19937_64 gen(19);
  const auto d = low_rank_series({6, 5, 4}, {2, 2, 1}, 12, gen);
  LoadingSet truth;
  for (std::size_t k = 0; k < 3; ++k) truth.push_mode(d.units[k], Vector::Zero(1));
  const auto f = estimate_factors(d.x, truth, kInf);
  ASSERT_EQ(f.dims(), (Dims{2, 2, 1}));
  for (std::size_t i = 0; i < f.data().size(); ++i) EXPECT_NEAR(f.data()[i], d.factors.data()[i], 1e-10);

  double mx = 0.0;
  for (double v : d.x.data()) mx = std::max(mx, std::abs(v));
  EXPECT_EQ(estimate_factors(d.x, truth, TruncationLevel(mx * 1.01)), f);

  TensorSeries zero({6, 5, 4}, 3);
  const auto fz = estimate_factors(zero, truth, kInf);
  for (double v : fz.data()) EXPECT_EQ(v, 0.0);
}

TEST(CommonComponent, NoiselessReconstruction) {
  std::mt19937_64 gen(20);
  const auto d = low_rank_series({12, 10, 8}, {2, 3, 1}, 50, gen);
  const auto stages = estimate_loadings(d.x, {2, 3, 1}, kInf, 2);
  const auto chi = common_component(estimate_factors(d.x, stages.back(), kInf), stages.back());
  EXPECT_LE(common_error(chi, d.x), 1e-10);
}

TEST(CommonComponent, ZeroFactorsGiveZero) {
  std::mt19937_64 gen(21);
  LoadingSet s;
  s.push_mode(orthonormal_basis(rtfm_test::random_matrix(5, 2, gen)), Vector::Zero(2));
  s.push_mode(orthonormal_basis(rtfm_test::random_matrix(4, 1, gen)), Vector::Zero(1));
  const auto chi = common_component(TensorSeries({2, 1}, 3), s);
  for (double v : chi.data()) EXPECT_EQ(v, 0.0);
}

TEST(CommonComponent, RotationInvariance) {
  std::mt19937_64 gen(22);
  const Dims dims{6, 5, 4}, ranks{2, 3, 2};
  LoadingSet s, rotated;
  std::vector<Matrix> rot;
  for (std::size_t k = 0; k < 3; ++k) {
    const Matrix e = orthonormal_basis(rtfm_test::random_matrix(static_cast<Eigen::Index>(dims[k]),
                                                                static_cast<Eigen::Index>(ranks[k]), gen));
    const Matrix r = orthonormal_basis(rtfm_test::random_matrix(static_cast<Eigen::Index>(ranks[k]),
                                                                static_cast<Eigen::Index>(ranks[k]), gen));
    s.push_mode(e, Vector::Zero(1));
    rotated.push_mode(e * r, Vector::Zero(1));
    rot.push_back(r);
  }
  const auto f = rtfm_test::random_series(ranks, 7, gen);
  TensorSeries g(ranks, 7);
  for (std::size_t t = 0; t < 7; ++t) g.set_item(t, multi_mode_product_transposed(f.item(t), rot));
  const auto a = common_component(f, s), b = common_component(g, rotated);
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-10);
}

TEST(EstimatorConfig, ValidatesRanks) {
  EstimatorConfig c{{2, 0}, kInf, kInf, 2};
  EXPECT_THROW(c.validate({4, 4}), DimensionError);
  c.ranks = {2, 4};
  EXPECT_NO_THROW(c.validate({4, 4}));
}
