#pragma once

// Dense order-K tensors and the multilinear algebra used throughout the
// library. Storage is first-index-fastest: the entry (i_1, ..., i_K) lives at
// offset sum_l i_l * (p_1 * ... * p_{l-1}) with 0-based indices. Under this
// order vec(X x_1 A_1 ... x_K A_K) = (A_K kron ... kron A_1) vec(X).

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rtfm/error.hpp"

namespace rtfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Dims = std::vector<std::size_t>;

inline std::size_t product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string dims_to_string(const Dims& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

inline void validate_dims(const Dims& dims) {
  if (dims.empty()) throw DimensionError("tensor order must be at least 1");
  for (auto d : dims)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + dims_to_string(dims));
}

/// Sizes of the three blocks (before mode k, mode k, after mode k).
struct ModeSplit {
  std::size_t before;
  std::size_t extent;
  std::size_t after;
};

inline ModeSplit split_at(const Dims& dims, std::size_t k) {
  if (k >= dims.size())
    throw DimensionError("mode " + std::to_string(k) + " out of range for order " +
                         std::to_string(dims.size()));
  ModeSplit s{1, dims[k], 1};
  for (std::size_t m = 0; m < k; ++m) s.before *= dims[m];
  for (std::size_t m = k + 1; m < dims.size(); ++m) s.after *= dims[m];
  return s;
}

class Tensor {
 public:
  Tensor() : dims_{1}, data_(1, 0.0) {}

  explicit Tensor(Dims dims) : dims_(std::move(dims)) {
    validate_dims(dims_);
    data_.assign(product(dims_), 0.0);
  }

  Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims(dims_);
    if (data_.size() != product(dims_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match dims " + dims_to_string(dims_));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t order() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t k) const { return dims_.at(k); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != dims_.size()) throw DimensionError("index arity does not match tensor order");
    std::size_t off = 0, stride = 1;
    for (std::size_t l = 0; l < dims_.size(); ++l) {
      if (index[l] >= dims_[l]) throw DimensionError("tensor index out of range");
      off += index[l] * stride;
      stride *= dims_[l];
    }
    return off;
  }

  double at(std::initializer_list<std::size_t> index) const {
    return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
  }
  double& at(std::initializer_list<std::size_t> index) {
    return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// n same-shaped tensors stored contiguously, time-major.
class TensorSeries {
 public:
  TensorSeries() = default;

  TensorSeries(Dims dims, std::size_t n) : dims_(std::move(dims)), n_(n) {
    validate_dims(dims_);
    data_.assign(n_ * product(dims_), 0.0);
  }

  TensorSeries(Dims dims, std::size_t n, std::vector<double> data)
      : dims_(std::move(dims)), n_(n), data_(std::move(data)) {
    validate_dims(dims_);
    if (data_.size() != n_ * product(dims_))
      throw DimensionError("series payload length does not match n * prod(dims)");
  }

  static TensorSeries from_items(std::span<const Tensor> items) {
    if (items.empty()) throw DimensionError("series needs at least one item");
    TensorSeries s(items.front().dims(), items.size());
    for (std::size_t t = 0; t < items.size(); ++t) s.set_item(t, items[t]);
    return s;
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t order() const noexcept { return dims_.size(); }
  std::size_t length() const noexcept { return n_; }
  /// Number of entries of one tensor (p).
  std::size_t cross_section() const noexcept { return n_ ? data_.size() / n_ : product(dims_); }

  std::span<const double> slice(std::size_t t) const {
    const auto p = cross_section();
    return std::span<const double>(data_).subspan(t * p, p);
  }
  std::span<double> slice(std::size_t t) {
    const auto p = cross_section();
    return std::span<double>(data_).subspan(t * p, p);
  }

  Tensor item(std::size_t t) const {
    auto s = slice(t);
    return Tensor(dims_, std::vector<double>(s.begin(), s.end()));
  }

  void set_item(std::size_t t, const Tensor& x) {
    if (x.dims() != dims_) throw DimensionError("item dims do not match series dims");
    std::copy(x.data().begin(), x.data().end(), slice(t).begin());
  }

  /// Time points [begin, end) as a new series.
  TensorSeries window(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > n_) throw DimensionError("invalid time window");
    const auto p = cross_section();
    return TensorSeries(dims_, end - begin,
                        std::vector<double>(data_.begin() + begin * p, data_.begin() + end * p));
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  friend bool operator==(const TensorSeries&, const TensorSeries&) = default;

 private:
  Dims dims_{1};
  std::size_t n_ = 0;
  std::vector<double> data_;
};

namespace detail {

/// Writes mat_k of the tensor stored at `in` into the column-major p_k x p_{-k}
/// buffer `out`. `transform` is applied to every entry on the way.
template <class F>
void unfold_into(const double* in, const Dims& dims, std::size_t k, double* out, F&& transform) {
  const auto s = split_at(dims, k);
  const std::size_t pk = s.extent;
  for (std::size_t ib = 0; ib < s.after; ++ib) {
    const double* block = in + ib * s.before * pk;
    double* col0 = out + ib * s.before * pk;
    for (std::size_t ik = 0; ik < pk; ++ik) {
      const double* src = block + ik * s.before;
      for (std::size_t ia = 0; ia < s.before; ++ia) col0[ia * pk + ik] = transform(src[ia]);
    }
  }
}

/// out = in x_k a, both tensors given as raw storage. `out` must hold
/// prod(dims) / p_k * a.rows() entries and must not alias `in`.
inline void mode_product_into(const double* in, const Dims& dims, const Matrix& a, std::size_t k,
                              double* out) {
  const auto s = split_at(dims, k);
  if (static_cast<std::size_t>(a.cols()) != s.extent)
    throw DimensionError("mode product: matrix has " + std::to_string(a.cols()) +
                         " columns, mode extent is " + std::to_string(s.extent));
  const auto m = static_cast<Eigen::Index>(a.rows());
  const auto pk = static_cast<Eigen::Index>(s.extent);
  const auto before = static_cast<Eigen::Index>(s.before);
  const auto after = static_cast<Eigen::Index>(s.after);
  using CMap = Eigen::Map<const Matrix>;
  using MMap = Eigen::Map<Matrix>;
  if (before == 1) {
    MMap(out, m, after).noalias() = a * CMap(in, pk, after);
  } else if (after == 1) {
    MMap(out, before, m).noalias() = CMap(in, before, pk) * a.transpose();
  } else {
    const Matrix at = a.transpose();
    for (Eigen::Index j = 0; j < after; ++j)
      MMap(out + j * before * m, before, m).noalias() = CMap(in + j * before * pk, before, pk) * at;
  }
}

}  // namespace detail

/// Mode-k unfolding (0-based k): a p_k x p_{-k} matrix whose columns are the
/// mode-k fibers, ordered with the remaining indices first-index-fastest.
inline Matrix unfold(const Tensor& x, std::size_t k) {
  const auto s = split_at(x.dims(), k);
  Matrix out(static_cast<Eigen::Index>(s.extent), static_cast<Eigen::Index>(s.before * s.after));
  detail::unfold_into(x.data().data(), x.dims(), k, out.data(), [](double v) { return v; });
  return out;
}

/// Inverse of unfold.
inline Tensor fold(const Matrix& m, std::size_t k, const Dims& dims) {
  validate_dims(dims);
  const auto s = split_at(dims, k);
  if (static_cast<std::size_t>(m.rows()) != s.extent ||
      static_cast<std::size_t>(m.cols()) != s.before * s.after)
    throw DimensionError("fold: matrix shape does not match dims " + dims_to_string(dims));
  Tensor x(dims);
  double* out = x.data().data();
  const std::size_t pk = s.extent;
  for (std::size_t ib = 0; ib < s.after; ++ib)
    for (std::size_t ik = 0; ik < pk; ++ik)
      for (std::size_t ia = 0; ia < s.before; ++ia)
        out[ia + s.before * ik + s.before * pk * ib] =
            m(static_cast<Eigen::Index>(ik), static_cast<Eigen::Index>(ia + s.before * ib));
  return x;
}

/// X x_k A for an m x p_k matrix A.
inline Tensor mode_product(const Tensor& x, const Matrix& a, std::size_t k) {
  Dims out_dims = x.dims();
  split_at(out_dims, k);
  out_dims[k] = static_cast<std::size_t>(a.rows());
  if (a.rows() == 0) throw DimensionError("mode product: matrix has no rows");
  Tensor out(out_dims);
  detail::mode_product_into(x.data().data(), x.dims(), a, k, out.data().data());
  return out;
}

/// X x_1 A_1 x_2 ... x_K A_K, applied in mode order.
inline Tensor multi_mode_product(const Tensor& x, std::span<const Matrix> mats) {
  if (mats.size() != x.order())
    throw DimensionError("multi_mode_product: need one matrix per mode");
  Tensor cur = x;
  for (std::size_t k = 0; k < mats.size(); ++k) cur = mode_product(cur, mats[k], k);
  return cur;
}

/// Same as multi_mode_product with every matrix transposed.
inline Tensor multi_mode_product_transposed(const Tensor& x, std::span<const Matrix> mats) {
  if (mats.size() != x.order())
    throw DimensionError("multi_mode_product: need one matrix per mode");
  Tensor cur = x;
  for (std::size_t k = 0; k < mats.size(); ++k) cur = mode_product(cur, mats[k].transpose(), k);
  return cur;
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// A_K kron ... kron A_1 with mode `skip` left out (the Delta_k / D_k ordering).
/// With every mode skipped for K = 1 the result is the 1 x 1 identity.
inline Matrix kron_except(std::span<const Matrix> mats, std::size_t skip) {
  Matrix out = Matrix::Identity(1, 1);
  for (std::size_t l = mats.size(); l-- > 0;) {
    if (l == skip) continue;
    out = kron(out, mats[l]);
  }
  return out;
}

inline Vector vec(const Tensor& x) {
  return Eigen::Map<const Vector>(x.data().data(), static_cast<Eigen::Index>(x.size()));
}

/// |X|_2, the square root of the sum of squared entries.
inline double frobenius_norm(std::span<const double> data) {
  double s = 0.0;
  for (double v : data) s += v * v;
  return std::sqrt(s);
}

inline double frobenius_norm(const Tensor& x) { return frobenius_norm(x.data()); }

}  // namespace rtfm
