#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "rtfm/robust_moments.hpp"
#include "test_support.hpp"

using namespace rtfm;
using rtfm_test::random_matrix;
using rtfm_test::random_series;

namespace {

Matrix naive_moment(const TensorSeries& s, std::size_t k, TruncationLevel tau, const Matrix* d = nullptr) {
  const auto split = split_at(s.dims(), k);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(split.extent), static_cast<Eigen::Index>(split.extent));
  for (std::size_t t = 0; t < s.length(); ++t) {
    Matrix m = unfold(truncate(s.item(t), tau), k);
    if (d) m = (m * *d * d->transpose()).eval() * m.transpose(), out += m;
    else
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.rows(); ++j)
          for (Eigen::Index l = 0; l < m.cols(); ++l) out(i, j) += m(i, l) * m(j, l);
  }
  return out / (static_cast<double>(s.length()) * static_cast<double>(split.before * split.after));
}

}  // namespace

TEST(Truncate, Scalars) {
  const TruncationLevel three(3.0);
  EXPECT_EQ(truncate(5.0, three), 3.0);
  EXPECT_EQ(truncate(-4.2, three), -3.0);
  EXPECT_EQ(truncate(1.5, three), 1.5);
  EXPECT_EQ(truncate(-1e300, TruncationLevel::infinity()), -1e300);
  EXPECT_THROW(TruncationLevel(0.0), ConfigError);
  EXPECT_THROW(TruncationLevel(-1.0), ConfigError);
  EXPECT_THROW(TruncationLevel(std::nan("")), ConfigError);
}

TEST(Truncate, TensorProperties) {
  std::mt19937_64 gen(21);
  const auto s = random_series({3, 4}, 6, gen);
  EXPECT_EQ(truncate(s, TruncationLevel::infinity()).data()[5], s.data()[5]);
  const TruncationLevel lo(0.5), hi(1.2);
  const auto a = truncate(s, lo), b = truncate(s, hi);
  const auto aa = truncate(a, lo);
  for (std::size_t i = 0; i < s.data().size(); ++i) {
    EXPECT_LE(std::abs(a.data()[i]), 0.5);
    EXPECT_EQ(aa.data()[i], a.data()[i]);
    EXPECT_LE(std::abs(a.data()[i]), std::abs(b.data()[i]));
    if (std::abs(s.data()[i]) <= 0.5) EXPECT_EQ(a.data()[i], s.data()[i]);
    EXPECT_GE(a.data()[i] * s.data()[i], 0.0);
  }
}

TEST(ModeSecondMoment, OuterProduct) {
  TensorSeries s({2}, 1, std::vector<double>{1, 2});
  const Matrix g = mode_second_moment(s, 0, TruncationLevel::infinity());
  Matrix ref(2, 2);
  ref << 1, 2, 2, 4;
  EXPECT_EQ(g, ref);
}

TEST(ModeSecondMoment, MatchesNaiveLoop) {
  std::mt19937_64 gen(22);
  const auto s = random_series({3, 2}, 4, gen);
  for (std::size_t k = 0; k < 2; ++k) {
    const TruncationLevel tau(1.5);
    const Matrix g = mode_second_moment(s, k, tau);
    EXPECT_LT((g - naive_moment(s, k, tau)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(g, g.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(ModeSecondMoment, ManyBatchesMatchNaive) {
  // Enough time points to force several accumulator flushes.
  std::mt19937_64 gen(23);
  const auto s = random_series({30, 20, 10}, 40, gen);
  for (std::size_t k = 0; k < 3; ++k) {
    const TruncationLevel tau(1.0);
    EXPECT_LT((mode_second_moment(s, k, tau) - naive_moment(s, k, tau)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ModeSecondMoment, PermutationInvarianceTraceAndMonotonicity) {
  std::mt19937_64 gen(24);
  const auto s = random_series({4, 3, 5}, 9, gen);
  std::vector<Tensor> items;
  for (std::size_t t = s.length(); t-- > 0;) items.push_back(s.item(t));
  const auto rev = TensorSeries::from_items(items);
  double total = 0.0;
  for (double v : s.data()) total += v * v;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto inf = TruncationLevel::infinity();
    EXPECT_LT((mode_second_moment(s, k, inf) - mode_second_moment(rev, k, inf)).norm(), 1e-12);
    const auto split = split_at(s.dims(), k);
    EXPECT_NEAR(mode_second_moment(s, k, inf).trace() * static_cast<double>(split.before * split.after),
                total / static_cast<double>(s.length()), 1e-10);
    double prev = 0.0;
    for (double tau : {0.1, 0.5, 1.0, 2.0, 5.0}) {
      const double tr = mode_second_moment(s, k, TruncationLevel(tau)).trace();
      EXPECT_GE(tr, prev);
      prev = tr;
    }
  }
}

TEST(ProjectedSecondMoment, FullOrthonormalDEqualsPlainMoment) {
  std::mt19937_64 gen(25);
  const auto s = random_series({3, 4, 2}, 5, gen);
  const TruncationLevel tau(0.8);
  const Matrix q = random_matrix(8, 8, gen).householderQr().householderQ();
  EXPECT_LT((projected_second_moment(s, 0, tau, q) - mode_second_moment(s, 0, tau)).norm(), 1e-12);
  EXPECT_EQ(projected_second_moment(s, 0, tau, Matrix::Zero(8, 3)), Matrix::Zero(3, 3));
  EXPECT_THROW(projected_second_moment(s, 0, tau, Matrix::Zero(7, 3)), DimensionError);
}

TEST(ProjectedSecondMoment, RandomDMatchesExplicitProjection) {
  std::mt19937_64 gen(26);
  const auto s = random_series({3, 4, 2}, 5, gen);
  const TruncationLevel tau(0.8);
  const Matrix d = random_matrix(6, 3, gen);
  EXPECT_LT((projected_second_moment(s, 1, tau, d) - naive_moment(s, 1, tau, &d)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProjectedSecondMoment, KroneckerFormMatchesExplicitD) {
  std::mt19937_64 gen(27);
  const Dims dims{5, 4, 6, 3};
  const auto s = random_series(dims, 7, gen);
  std::vector<Matrix> e;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    const Matrix q = random_matrix(static_cast<Eigen::Index>(dims[l]), 2, gen).householderQr().householderQ();
    e.push_back(q.leftCols(2));
  }
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const TruncationLevel tau(1.1);
    const Matrix d = kron_except(e, k);
    EXPECT_LT((projected_second_moment(s, k, tau, e) - naive_moment(s, k, tau, &d)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TheoreticalTau, Formula) {
  const double e = std::exp(1.0);
  EXPECT_NEAR(theoretical_tau(e, e, 1, 1.0, 1.0 - 1e-12, DependenceRegime::independent), std::pow(e, 0.25), 1e-10);
  EXPECT_THROW(theoretical_tau(e, e, 1, 1.0, 1.0, DependenceRegime::independent), ConfigError);
  EXPECT_THROW(theoretical_tau(e, e, 1, 1.0, 0.0, DependenceRegime::independent), ConfigError);
  EXPECT_THROW(theoretical_tau(e, e, 1, 0.0, 0.5, DependenceRegime::independent), ConfigError);

  const Dims dims{10, 10, 10};
  double prev = 0.0;
  for (std::size_t n : {10u, 50u, 100u, 500u}) {
    const double v = theoretical_tau(n, dims, 0, 1.0, 0.5, DependenceRegime::independent);
    EXPECT_GT(v, prev);
    prev = v;
  }
  const double np_k = 100.0 * 100.0, np = 100.0 * 1000.0;
  EXPECT_NEAR(theoretical_tau(100, dims, 0, 1.0, 0.5, DependenceRegime::independent),
              std::pow(np_k / std::log(np_k), 1.0 / 3.0), 1e-10);
  EXPECT_NEAR(theoretical_tau(100, dims, 0, 1.0, 0.5, DependenceRegime::random_field),
              std::pow(np_k / std::pow(std::log(np), 3.0), 1.0 / 3.0), 1e-10);
}
