#pragma once

// Element-wise truncation and the (projected) mode-k second-moment matrices
// built from truncated data.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm {

/// A truncation level tau in (0, +inf]. Infinity disables truncation.
class TruncationLevel {
 public:
  TruncationLevel() = default;  // +inf
  explicit TruncationLevel(double tau) : tau_(tau) {
    if (!(tau > 0.0)) throw ConfigError("truncation level must be positive, got " + std::to_string(tau));
  }
  static TruncationLevel infinity() { return TruncationLevel(); }

  double value() const noexcept { return tau_; }
  bool is_infinite() const noexcept { return std::isinf(tau_); }

  double apply(double x) const noexcept {
    if (x > tau_) return tau_;
    if (x < -tau_) return -tau_;
    return x;
  }

  friend bool operator==(TruncationLevel, TruncationLevel) = default;

 private:
  double tau_ = std::numeric_limits<double>::infinity();
};

inline double truncate(double x, TruncationLevel tau) { return tau.apply(x); }

inline Tensor truncate(Tensor x, TruncationLevel tau) {
  for (double& v : x.data()) v = tau.apply(v);
  return x;
}

inline TensorSeries truncate(TensorSeries x, TruncationLevel tau) {
  for (double& v : x.data()) v = tau.apply(v);
  return x;
}

namespace detail {

/// Half-open block of time indices.
struct TimeRange {
  std::size_t begin;
  std::size_t end;
};
using TimeSelection = std::vector<TimeRange>;

inline TimeSelection all_times(const TensorSeries& s) { return {{0, s.length()}}; }

inline std::size_t selection_size(const TimeSelection& sel) {
  std::size_t n = 0;
  for (const auto& r : sel) n += r.end - r.begin;
  return n;
}

inline std::vector<std::size_t> expand(const TimeSelection& sel) {
  std::vector<std::size_t> out;
  for (const auto& r : sel)
    for (std::size_t t = r.begin; t < r.end; ++t) out.push_back(t);
  return out;
}

inline Matrix pairwise_sum(std::vector<Matrix>& parts, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return std::move(parts[lo]);
  const std::size_t mid = lo + (hi - lo) / 2;
  Matrix left = pairwise_sum(parts, lo, mid);
  left += pairwise_sum(parts, mid, hi);
  return left;
}

/// Accumulates sum_t U_t U_t^T for the p_k x c unfoldings U_t.
///
/// Items are written in a "tall" layout: U_t^T occupies `rows_per_item` rows
/// of a column-major buffer with p_k columns, so batches are reduced with one
/// rank update of the stacked matrix. Batches are then summed pairwise.
class GramAccumulator {
 public:
  GramAccumulator(Eigen::Index pk, Eigen::Index rows_per_item) : pk_(pk), rows_(std::max<Eigen::Index>(1, rows_per_item)) {
    batch_ = std::max<Eigen::Index>(1, (Eigen::Index{1} << 18) / std::max<Eigen::Index>(1, pk_ * rows_));
    buffer_.resize(rows_ * batch_, pk_);
  }

  /// Leading dimension of the buffer returned by next().
  Eigen::Index stride() const noexcept { return rows_ * batch_; }

  /// Top-left of the next item's block; column ik starts at ptr + ik * stride().
  double* next() {
    if (filled_ == batch_) flush();
    return buffer_.data() + filled_++ * rows_;
  }

  Matrix finish() {
    flush();
    if (parts_.empty()) return Matrix::Zero(pk_, pk_);
    return pairwise_sum(parts_, 0, parts_.size());
  }

 private:
  void flush() {
    if (filled_ == 0) return;
    Matrix g = Matrix::Zero(pk_, pk_);
    if (filled_ == batch_)
      g.selfadjointView<Eigen::Lower>().rankUpdate(buffer_.transpose());
    else
      g.selfadjointView<Eigen::Lower>().rankUpdate(buffer_.topRows(filled_ * rows_).transpose());
    parts_.push_back(g.selfadjointView<Eigen::Lower>());
    filled_ = 0;
  }

  Eigen::Index pk_, rows_, batch_ = 1, filled_ = 0;
  Matrix buffer_;
  std::vector<Matrix> parts_;
};

/// Writes the tall unfolding mat_k(x)^T (rows: the other indices in canonical
/// order, columns: mode k) into `out` with leading dimension `ld`, applying
/// `transform` on the way. Copies run over contiguous stretches of length
/// `before`.
template <class F>
void unfold_tall_into(const double* in, const Dims& dims, std::size_t k, double* out, Eigen::Index ld, F&& transform) {
  const auto s = split_at(dims, k);
  for (std::size_t ib = 0; ib < s.after; ++ib) {
    const double* block = in + ib * s.before * s.extent;
    double* dst0 = out + ib * s.before;
    for (std::size_t ik = 0; ik < s.extent; ++ik) {
      const double* src = block + ik * s.before;
      double* dst = dst0 + static_cast<std::size_t>(ld) * ik;
      for (std::size_t ia = 0; ia < s.before; ++ia) dst[ia] = transform(src[ia]);
    }
  }
}

/// Unscaled sum over the selection of mat_k(X_t^trunc) mat_k(X_t^trunc)^T.
inline Matrix mode_gram_sum(const TensorSeries& series, std::size_t k, TruncationLevel tau,
                            const TimeSelection& sel) {
  const auto s = split_at(series.dims(), k);
  const auto trunc = [tau](double v) { return tau.apply(v); };
  if (s.before == 1) {
    // mat_1(X_t) is the storage itself: batch whole slices side by side.
    const auto pk = static_cast<Eigen::Index>(s.extent);
    const auto cols = static_cast<Eigen::Index>(s.after);
    const Eigen::Index batch = std::max<Eigen::Index>(1, (Eigen::Index{1} << 18) / std::max<Eigen::Index>(1, pk * cols));
    Matrix buffer(pk, cols * batch);
    std::vector<Matrix> parts;
    Eigen::Index filled = 0;
    const auto flush = [&] {
      if (filled == 0) return;
      Matrix g = Matrix::Zero(pk, pk);
      g.selfadjointView<Eigen::Lower>().rankUpdate(buffer.leftCols(filled * cols));
      parts.push_back(g.selfadjointView<Eigen::Lower>());
      filled = 0;
    };
    for (const auto& r : sel)
      for (std::size_t t = r.begin; t < r.end; ++t) {
        if (filled == batch) flush();
        const auto x = series.slice(t);
        double* dst = buffer.data() + filled++ * pk * cols;
        for (std::size_t i = 0; i < x.size(); ++i) dst[i] = trunc(x[i]);
      }
    flush();
    if (parts.empty()) return Matrix::Zero(pk, pk);
    return pairwise_sum(parts, 0, parts.size());
  }
  GramAccumulator acc(static_cast<Eigen::Index>(s.extent), static_cast<Eigen::Index>(s.before * s.after));
  for (const auto& r : sel)
    for (std::size_t t = r.begin; t < r.end; ++t)
      unfold_tall_into(series.slice(t).data(), series.dims(), k, acc.next(), acc.stride(), trunc);
  return acc.finish();
}

/// Order in which the non-k modes are contracted: largest extent first so the
/// intermediate tensors shrink fastest.
inline std::vector<std::size_t> contraction_order(const Dims& dims, std::size_t k) {
  std::vector<std::size_t> order;
  for (std::size_t l = 0; l < dims.size(); ++l)
    if (l != k) order.push_back(l);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dims[a] > dims[b]; });
  return order;
}

/// Computes Z = X^trunc x_{l != k} E_l^T into `work`, returning Z's dims.
/// `scratch` and `work` are resized as needed.
inline Dims project_other_modes(std::span<const double> x, const Dims& dims, std::size_t k,
                                TruncationLevel tau, std::span<const Matrix> e_transposed,
                                const std::vector<std::size_t>& order, std::vector<double>& scratch,
                                std::vector<double>& work) {
  work.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) work[i] = tau.apply(x[i]);
  Dims cur = dims;
  for (std::size_t l : order) {
    const Matrix& a = e_transposed[l];
    Dims next = cur;
    next[l] = static_cast<std::size_t>(a.rows());
    scratch.resize(product(next));
    mode_product_into(work.data(), cur, a, l, scratch.data());
    std::swap(work, scratch);
    cur = std::move(next);
  }
  work.resize(product(cur));
  return cur;
}

/// Leave-one-out projections: for every mode k in `keep`, calls
/// sink(k, data, dims) with x contracted by E_l^T over all l in `keep` other
/// than k. Halves of `keep` are contracted recursively so partial products are
/// shared; `pool` supplies per-depth buffers.
template <class Sink>
void leave_one_out(const double* x, const Dims& dims, std::span<const std::size_t> keep,
                   std::span<const Matrix> e_transposed, std::vector<std::vector<double>>& pool,
                   std::size_t depth, Sink&& sink) {
  if (keep.size() == 1) {
    sink(keep[0], x, dims);
    return;
  }
  if (pool.size() < 2 * (depth + 1)) pool.resize(2 * (depth + 1));
  const std::size_t half = keep.size() / 2;
  for (int side = 0; side < 2; ++side) {
    const auto stay = side == 0 ? keep.subspan(0, half) : keep.subspan(half);
    const auto drop = side == 0 ? keep.subspan(half) : keep.subspan(0, half);
    const double* cur = x;
    Dims cd = dims;
    std::size_t buf = 0;
    for (std::size_t l : drop) {
      Dims nd = cd;
      nd[l] = static_cast<std::size_t>(e_transposed[l].rows());
      auto& out = pool[2 * depth + buf];
      out.resize(product(nd));
      mode_product_into(cur, cd, e_transposed[l], l, out.data());
      cur = out.data();
      cd = std::move(nd);
      buf ^= 1;
    }
    // Deeper levels use their own buffers, so `cur` stays valid.
    leave_one_out(cur, cd, stay, e_transposed, pool, depth + 1, sink);
  }
}

/// Unscaled projected sums for every mode at once:
/// out[k] = sum_t mat_k(X^trunc) D_k D_k^T mat_k(X^trunc)^T with
/// D_k = E_K kron ... kron E_1 (mode k skipped).
inline std::vector<Matrix> projected_gram_sums(const TensorSeries& series, TruncationLevel tau,
                                               std::span<const Matrix> e, const TimeSelection& sel) {
  const Dims& dims = series.dims();
  const std::size_t order = dims.size();
  if (e.size() != order) throw DimensionError("projected moment: need one loading basis per mode");
  std::vector<Matrix> et(order);
  for (std::size_t l = 0; l < order; ++l) {
    if (static_cast<std::size_t>(e[l].rows()) != dims[l])
      throw DimensionError("projected moment: basis for mode " + std::to_string(l + 1) + " has wrong row count");
    et[l] = e[l].transpose();
  }
  std::vector<GramAccumulator> acc;
  for (std::size_t k = 0; k < order; ++k) {
    std::size_t rest = 1;
    for (std::size_t l = 0; l < order; ++l)
      if (l != k) rest *= static_cast<std::size_t>(e[l].cols());
    acc.emplace_back(static_cast<Eigen::Index>(dims[k]), static_cast<Eigen::Index>(rest));
  }
  // Contract the largest modes first.
  std::vector<std::size_t> keep(order);
  for (std::size_t l = 0; l < order; ++l) keep[l] = l;
  std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return dims[a] > dims[b]; });

  std::vector<double> work;
  std::vector<std::vector<double>> pool;
  const auto identity = [](double v) { return v; };
  const auto sink = [&](std::size_t k, const double* z, const Dims& zd) {
    unfold_tall_into(z, zd, k, acc[k].next(), acc[k].stride(), identity);
  };
  for (const auto& r : sel) {
    for (std::size_t t = r.begin; t < r.end; ++t) {
      const auto x = series.slice(t);
      work.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) work[i] = tau.apply(x[i]);
      leave_one_out(work.data(), dims, keep, et, pool, 0, sink);
    }
  }
  std::vector<Matrix> out;
  for (auto& a : acc) out.push_back(a.finish());
  return out;
}

/// Unscaled sum over the selection of mat_k(X^trunc) D D^T mat_k(X^trunc)^T
/// with D = E_K kron ... kron E_1 (mode k skipped), never forming D.
inline Matrix projected_gram_sum(const TensorSeries& series, std::size_t k, TruncationLevel tau,
                                 std::span<const Matrix> e, const TimeSelection& sel) {
  const Dims& dims = series.dims();
  if (e.size() != dims.size()) throw DimensionError("projected moment: need one loading basis per mode");
  split_at(dims, k);
  std::vector<Matrix> et(dims.size());
  std::size_t r_minus_k = 1;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    if (l == k) continue;
    if (static_cast<std::size_t>(e[l].rows()) != dims[l])
      throw DimensionError("projected moment: basis for mode " + std::to_string(l + 1) + " has wrong row count");
    et[l] = e[l].transpose();
    r_minus_k *= static_cast<std::size_t>(e[l].cols());
  }
  const auto order = contraction_order(dims, k);
  GramAccumulator acc(static_cast<Eigen::Index>(dims[k]), static_cast<Eigen::Index>(r_minus_k));
  std::vector<double> scratch, work;
  for (const auto& r : sel) {
    for (std::size_t t = r.begin; t < r.end; ++t) {
      const Dims zdims = project_other_modes(series.slice(t), dims, k, tau, et, order, scratch, work);
      unfold_tall_into(work.data(), zdims, k, acc.next(), acc.stride(), [](double v) { return v; });
    }
  }
  return acc.finish();
}

}  // namespace detail

/// Gamma_hat^(k)(tau) = (n p_{-k})^{-1} sum_t mat_k(X_t^trunc) mat_k(X_t^trunc)^T.
inline Matrix mode_second_moment(const TensorSeries& series, std::size_t k, TruncationLevel tau) {
  if (series.length() == 0) throw DimensionError("second moment of an empty series");
  const auto s = split_at(series.dims(), k);
  const double scale = static_cast<double>(series.length()) * static_cast<double>(s.before * s.after);
  return detail::mode_gram_sum(series, k, tau, detail::all_times(series)) / scale;
}

/// Projected second moment with an explicit p_{-k} x r_{-k} matrix D, computed
/// as the Gram matrix of mat_k(X^trunc) D.
inline Matrix projected_second_moment(const TensorSeries& series, std::size_t k, TruncationLevel tau,
                                      const Matrix& d) {
  if (series.length() == 0) throw DimensionError("second moment of an empty series");
  const auto s = split_at(series.dims(), k);
  const std::size_t p_minus_k = s.before * s.after;
  if (static_cast<std::size_t>(d.rows()) != p_minus_k)
    throw DimensionError("projected moment: D has " + std::to_string(d.rows()) + " rows, expected " +
                         std::to_string(p_minus_k));
  const auto pk = static_cast<Eigen::Index>(s.extent);
  Matrix u(pk, static_cast<Eigen::Index>(p_minus_k));
  detail::GramAccumulator acc(pk, std::max<Eigen::Index>(1, d.cols()));
  for (std::size_t t = 0; t < series.length(); ++t) {
    detail::unfold_into(series.slice(t).data(), series.dims(), k, u.data(),
                        [tau](double v) { return tau.apply(v); });
    Eigen::Map<Matrix, 0, Eigen::OuterStride<>> block(acc.next(), std::max<Eigen::Index>(1, d.cols()), pk,
                                                      Eigen::OuterStride<>(acc.stride()));
    if (d.cols() == 0) block.setZero();
    else block.noalias() = d.transpose() * u.transpose();
  }
  return acc.finish() / (static_cast<double>(series.length()) * static_cast<double>(p_minus_k));
}

/// Projected second moment with D = E_K kron ... kron E_1 (mode k skipped),
/// given the per-mode orthonormal bases; e[k] is ignored.
inline Matrix projected_second_moment(const TensorSeries& series, std::size_t k, TruncationLevel tau,
                                      std::span<const Matrix> e) {
  if (series.length() == 0) throw DimensionError("second moment of an empty series");
  const auto s = split_at(series.dims(), k);
  const double scale = static_cast<double>(series.length()) * static_cast<double>(s.before * s.after);
  return detail::projected_gram_sum(series, k, tau, e, detail::all_times(series)) / scale;
}

enum class DependenceRegime { independent, random_field };

/// Reference truncation level omega * (N / log L)^{1/(2+2eps)} with
/// N = n p_{-k} and L = n p_{-k} (independent) or log^K(n p) (random field).
inline double theoretical_tau(double n_p_minus_k, double n_p, std::size_t order, double omega, double epsilon,
                              DependenceRegime regime) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("theoretical_tau: epsilon must lie in (0, 1)");
  if (!(omega > 0.0)) throw ConfigError("theoretical_tau: omega must be positive");
  const double denom = regime == DependenceRegime::independent
                           ? std::log(n_p_minus_k)
                           : std::pow(std::log(n_p), static_cast<double>(order));
  if (!(denom > 0.0)) throw ConfigError("theoretical_tau: sample size too small for the log term");
  return omega * std::pow(n_p_minus_k / denom, 1.0 / (2.0 + 2.0 * epsilon));
}

inline double theoretical_tau(std::size_t n, const Dims& dims, std::size_t k, double omega, double epsilon,
                              DependenceRegime regime) {
  const auto s = split_at(dims, k);
  const double nn = static_cast<double>(n);
  return theoretical_tau(nn * static_cast<double>(s.before * s.after), nn * static_cast<double>(product(dims)),
                         dims.size(), omega, epsilon, regime);
}

}  // namespace rtfm
