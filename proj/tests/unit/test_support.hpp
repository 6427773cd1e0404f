#pragma once

#include <random>

#include "rtfm/linalg.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm_test {

inline rtfm::Tensor random_tensor(const rtfm::Dims& dims, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  rtfm::Tensor x(dims);
  for (double& v : x.data()) v = nd(gen);
  return x;
}

inline rtfm::TensorSeries random_series(const rtfm::Dims& dims, std::size_t n, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  rtfm::TensorSeries s(dims, n);
  for (double& v : s.data()) v = nd(gen);
  return s;
}

inline rtfm::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  rtfm::Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = nd(gen);
  return m;
}

inline rtfm::Matrix projector(const rtfm::Matrix& basis) {
  const rtfm::Matrix q = basis.householderQr().householderQ() * rtfm::Matrix::Identity(basis.rows(), basis.cols());
  return q * q.transpose();
}

inline double subspace_distance(const rtfm::Matrix& a, const rtfm::Matrix& b) {
  return (projector(a) - projector(b)).norm();
}

/// Exact low-rank series X_t = F_t x_1 L_1 ... x_K L_K with L_k = sqrt(p_k) Q_k,
/// Q_k orthonormal. `one_hot` factors put a single nonzero entry in each F_t,
/// cycling over all core positions with distinct magnitudes, which makes every
/// mode-k factor second moment diagonal.
struct LowRankData {
  rtfm::TensorSeries x;
  rtfm::TensorSeries factors;
  std::vector<rtfm::Matrix> loadings;  // sqrt(p_k) scale
  std::vector<rtfm::Matrix> units;     // orthonormal
};

inline LowRankData low_rank_series(const rtfm::Dims& dims, const rtfm::Dims& ranks, std::size_t n, std::mt19937_64& gen,
                                   bool one_hot = false) {
  LowRankData d;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const rtfm::Matrix q = rtfm::orthonormal_basis(random_matrix(static_cast<Eigen::Index>(dims[k]),
                                                                 static_cast<Eigen::Index>(ranks[k]), gen));
    d.units.push_back(q);
    d.loadings.push_back(std::sqrt(static_cast<double>(dims[k])) * q);
  }
  if (one_hot) {
    d.factors = rtfm::TensorSeries(ranks, n);
    const std::size_t r = rtfm::product(ranks);
    for (std::size_t t = 0; t < n; ++t) d.factors.slice(t)[t % r] = 1.0 + 0.37 * static_cast<double>(t % r);
  } else {
    d.factors = random_series(ranks, n, gen);
  }
  d.x = rtfm::TensorSeries(dims, n);
  for (std::size_t t = 0; t < n; ++t) d.x.set_item(t, rtfm::multi_mode_product(d.factors.item(t), d.loadings));
  return d;
}

}  // namespace rtfm_test
