#pragma once

#include <nkcca/common.hpp>
#include <nkcca/kernels.hpp>
#include <nkcca/linalg.hpp>
#include <nkcca/sampling.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace nkcca {

// ---------------------------------------------------------------------------
// Batch factor  L_gamma = C W_reg^+ C^T,  C = K S,  W_reg = S^T K S + N gamma I
// ---------------------------------------------------------------------------

struct NystromFactor {
  Matrix c;
  Matrix w_reg;
  double gamma = 0.0;

  Index n() const { return c.rows(); }
  Index rank() const { return c.cols(); }
};

template <class Oracle>
NystromFactor factor(const Oracle& oracle, const SamplingPlan& plan, double gamma) {
  detail::require(gamma >= 0.0 && std::isfinite(gamma), "factor: gamma must be >= 0");
  const Index n = oracle.n();
  const Index m = plan.size();
  NystromFactor f;
  f.gamma = gamma;
  f.c.resize(n, m);
  for (Index j = 0; j < m; ++j) {
    const Index i = plan.indices[static_cast<std::size_t>(j)];
    f.c.col(j) = plan.weights[static_cast<std::size_t>(j)] * oracle.column(i);
  }
  f.w_reg.resize(m, m);
  for (Index b = 0; b < m; ++b)
    for (Index a = 0; a < m; ++a)
      f.w_reg(a, b) = plan.weights[static_cast<std::size_t>(a)] *
                      f.c(plan.indices[static_cast<std::size_t>(a)], b);
  f.w_reg = 0.5 * (f.w_reg + f.w_reg.transpose()).eval();
  f.w_reg.diagonal().array() += static_cast<double>(n) * gamma;
  return f;
}

namespace detail {

inline Matrix w_reg_pinv(const NystromFactor& f) {
  if (f.gamma > 0.0) {
    const Eigen::LLT<Matrix> llt(f.w_reg);
    if (llt.info() == Eigen::Success) return llt.solve(Matrix::Identity(f.rank(), f.rank()));
  }
  return linalg::sym_pinv(f.w_reg);
}

}  // namespace detail

/// L_gamma v without forming L_gamma.
inline Vector apply(const NystromFactor& f, const Vector& v) {
  detail::require(v.size() == f.n(), "apply: vector length must equal N");
  if (f.rank() == 0) return Vector::Zero(f.n());
  const Vector ctv = f.c.transpose() * v;
  if (f.gamma > 0.0) {
    const Eigen::LLT<Matrix> llt(f.w_reg);
    if (llt.info() == Eigen::Success) return f.c * llt.solve(ctv);
  }
  return f.c * (linalg::sym_pinv(f.w_reg) * ctv);
}

/// Dense N x N approximation (small-N diagnostics only).
inline Matrix materialize(const NystromFactor& f) {
  if (f.rank() == 0) return Matrix::Zero(f.n(), f.n());
  Matrix l = f.c * detail::w_reg_pinv(f) * f.c.transpose();
  return 0.5 * (l + l.transpose());
}

// ---------------------------------------------------------------------------
// Rank-one Cholesky modifications of an upper-triangular R with R^T R = A.
// ---------------------------------------------------------------------------

/// R^T R + x x^T. Givens form, so a zero diagonal entry is admissible as
/// long as the matching entry of x is nonzero.
template <class DerivedR, class DerivedX>
void chol_rank_one_update(Eigen::MatrixBase<DerivedR>& r, const Eigen::MatrixBase<DerivedX>& x_in) {
  using Scalar = typename DerivedR::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x = x_in.template cast<Scalar>();
  const Index n = r.rows();
  for (Index k = 0; k < n; ++k) {
    const Scalar rkk = r(k, k);
    const Scalar xk = x(k);
    const Scalar rad = std::hypot(rkk, xk);
    if (rad == Scalar(0)) continue;
    const Scalar c = rkk / rad;
    const Scalar s = xk / rad;
    r(k, k) = rad;
    for (Index j = k + 1; j < n; ++j) {
      const Scalar t = r(k, j);
      r(k, j) = c * t + s * x(j);
      x(j) = c * x(j) - s * t;
    }
  }
}

/// R^T R - x x^T by hyperbolic rotations. Returns the first row at which the
/// squared pivot fell to `floor` or below (the factor is left partially
/// modified), or nullopt on success. `floor` may be a per-row threshold.
template <class DerivedR, class DerivedX, class Floor>
std::optional<Index> chol_rank_one_downdate(Eigen::MatrixBase<DerivedR>& r, const Eigen::MatrixBase<DerivedX>& x_in,
                                            Floor&& floor) {
  using Scalar = typename DerivedR::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x = x_in.template cast<Scalar>();
  const Index n = r.rows();
  for (Index k = 0; k < n; ++k) {
    const Scalar rkk = r(k, k);
    const Scalar xk = x(k);
    const Scalar rad2 = (rkk - xk) * (rkk + xk);
    if (!(rad2 > static_cast<Scalar>(floor(k)))) return k;
    const Scalar rad = std::sqrt(rad2);
    const Scalar c = rad / rkk;
    const Scalar s = xk / rkk;
    r(k, k) = rad;
    for (Index j = k + 1; j < n; ++j) {
      r(k, j) = (r(k, j) - s * x(j)) / c;
      x(j) = c * x(j) - s * r(k, j);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Incremental factor of  G = N lambda S^T K S + S^T K H K S  (one view)
// ---------------------------------------------------------------------------

struct CholOptions {
  /// A landmark is rejected as numerically dependent when its squared pivot
  /// is at most dependency_tol * d_m.
  double dependency_tol = 1e-10;
};

enum class StepStatus {
  Accepted,      // appended by the update/downdate pair
  Dependent,     // rejected, state unchanged
  Refactorized,  // appended after a dense re-factorization
};

/// Growable column-major storage; only the leading block is meaningful.
template <class Scalar>
class GrowableMatrixT {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  GrowableMatrixT() = default;
  GrowableMatrixT(Index rows, Index cols_capacity)
      : data_(Storage::Zero(rows, std::max<Index>(cols_capacity, 1))) {}

  void ensure(Index rows, Index cols) {
    if (rows <= data_.rows() && cols <= data_.cols()) return;
    const Index new_rows = rows <= data_.rows() ? data_.rows() : std::max({rows, 2 * data_.rows(), Index{4}});
    const Index new_cols = cols <= data_.cols() ? data_.cols() : std::max({cols, 2 * data_.cols(), Index{4}});
    Storage grown = Storage::Zero(new_rows, new_cols);
    grown.topLeftCorner(data_.rows(), data_.cols()) = data_;
    data_.swap(grown);
  }
  Storage& raw() { return data_; }
  const Storage& raw() const { return data_; }

 private:
  Storage data_;
};

using GrowableMatrix = GrowableMatrixT<double>;

namespace detail {

using Wide = long double;
using WideMatrix = Eigen::Matrix<Wide, Eigen::Dynamic, Eigen::Dynamic>;
using WideVector = Eigen::Matrix<Wide, Eigen::Dynamic, 1>;

/// Inner product accumulated in extended precision.
inline Wide wide_dot(const double* a, const double* b, Index n) {
  Wide acc = 0;
  for (Index i = 0; i < n; ++i) acc += static_cast<Wide>(a[i]) * static_cast<Wide>(b[i]);
  return acc;
}

}  // namespace detail

/// Incremental Cholesky state for one view. The Gram entries and the factor
/// are carried in extended precision: G is typically very ill-conditioned,
/// and a double-precision factor loses about as many digits as its condition
/// number has. Solves use a double copy of R.
class CholState {
 public:
  CholState() = default;
  CholState(Index n, double lambda, CholOptions opt = {}) : n_(n), lambda_(lambda), opt_(opt) {
    detail::require(n >= 1, "CholState: N must be >= 1");
    detail::require(lambda > 0.0 && std::isfinite(lambda), "CholState: lambda must be > 0");
    a_ = GrowableMatrix(n, 16);
    r_ = GrowableMatrix(16, 16);
    r_wide_ = GrowableMatrixT<detail::Wide>(16, 16);
    w_ = GrowableMatrix(16, 16);
  }

  Index n() const { return n_; }
  Index rank() const { return m_; }
  double lambda() const { return lambda_; }

  /// Centered weighted landmark columns A_m = H K S (N x m).
  auto a() const { return a_.raw().leftCols(m_); }
  /// Upper-triangular factor with R^T R = N lambda S^T K S + S^T K H K S.
  auto r() const { return r_.raw().topLeftCorner(m_, m_); }
  auto r_wide() const { return r_wide_.raw().topLeftCorner(m_, m_); }
  /// s_j s_l K(i_j, i_l) over the accepted landmarks.
  auto landmark_kernel() const { return w_.raw().topLeftCorner(m_, m_); }

  const std::vector<Index>& landmarks() const { return landmarks_; }
  const std::vector<double>& weights() const { return weights_; }
  int refactorizations() const { return refactorizations_; }

  /// Dense N lambda S^T K S + A^T A from the cached landmark data.
  Matrix regularized_gram() const { return regularized_gram_wide().cast<double>(); }

  /// One step of the incremental algorithm given the raw kernel column k_i.
  /// The first accepted landmark seeds R_1 = sqrt(d_1).
  StepStatus step(const Vector& raw_column, Index i, double s) {
    using detail::Wide;
    detail::require(raw_column.size() == n_, "CholState::step: column length must equal N");
    detail::require(i >= 0 && i < n_, "CholState::step: index out of range");
    detail::require(s > 0.0 && std::isfinite(s), "CholState::step: weight must be positive and finite");
    const Wide nl = static_cast<Wide>(n_) * static_cast<Wide>(lambda_);

    Vector a_new = raw_column;
    a_new.array() -= a_new.mean();
    a_new *= s;
    const double kii = raw_column(i);
    const Wide d = detail::wide_dot(a_new.data(), a_new.data(), n_) +
                   nl * static_cast<Wide>(s) * static_cast<Wide>(s) * static_cast<Wide>(kii);
    if (!std::isfinite(static_cast<double>(d)))
      throw NumericalError("CholState::step: non-finite pivot (weight out of range)");

    if (m_ == 0) {
      if (!(d > 0)) return StepStatus::Dependent;
      grow(1);
      r_wide_.raw()(0, 0) = std::sqrt(d);
      commit(a_new, Vector(), s, kii, i);
      return StepStatus::Accepted;
    }

    const Index m = m_;
    Vector b(m);
    for (Index j = 0; j < m; ++j)
      b(j) = s * weights_[static_cast<std::size_t>(j)] * raw_column(landmarks_[static_cast<std::size_t>(j)]);
    detail::WideVector c(m);
    for (Index j = 0; j < m; ++j)
      c(j) = detail::wide_dot(a_.raw().col(j).data(), a_new.data(), n_) + nl * static_cast<Wide>(b(j));
    const Wide g = std::sqrt(1 + d);

    detail::WideVector u(m + 1), v(m + 1);
    u.head(m) = c / (1 + g);
    v.head(m) = u.head(m);
    u(m) = g;
    v(m) = -1;

    grow(m + 1);
    const detail::WideMatrix backup = r_wide();
    auto rm = r_wide_.raw().topLeftCorner(m + 1, m + 1);
    rm.col(m).setZero();
    rm.row(m).setZero();
    chol_rank_one_update(rm, u);
    const Wide tol = static_cast<Wide>(opt_.dependency_tol) * d;
    const auto failed = chol_rank_one_downdate(rm, v, [&](Index k) { return k == m ? tol : Wide(0); });
    if (!failed) {
      commit(a_new, b, s, kii, i);
      return StepStatus::Accepted;
    }
    rm.topLeftCorner(m, m) = backup;
    rm.col(m).setZero();
    rm.row(m).setZero();
    if (*failed == m) return StepStatus::Dependent;

    // Breakdown inside the existing block: rebuild the bordered matrix densely.
    detail::WideMatrix gram_new(m + 1, m + 1);
    gram_new.topLeftCorner(m, m) = regularized_gram_wide();
    gram_new.topRightCorner(m, 1) = c;
    gram_new.bottomLeftCorner(1, m) = c.transpose();
    gram_new(m, m) = d;
    const Eigen::LLT<detail::WideMatrix> llt(gram_new);
    if (llt.info() != Eigen::Success) {
      const Eigen::LLT<detail::WideMatrix> old(regularized_gram_wide());
      if (old.info() != Eigen::Success) throw NumericalError("CholState: dense re-factorization failed");
      rm.topLeftCorner(m, m) = old.matrixU();
      sync_double(m);
      return StepStatus::Dependent;
    }
    const detail::WideMatrix upper = llt.matrixU();
    if (upper(m, m) * upper(m, m) <= tol) {
      rm.topLeftCorner(m, m) = upper.topLeftCorner(m, m);
      sync_double(m);
      return StepStatus::Dependent;
    }
    rm = upper;
    commit(a_new, b, s, kii, i);
    ++refactorizations_;
    return StepStatus::Refactorized;
  }

  template <class Oracle>
  StepStatus step(const Oracle& oracle, Index i, double s) {
    return step(oracle.column(i), i, s);
  }

  /// G^{-1} B via two triangular solves.
  Matrix solve(const Matrix& rhs) const { return solve_upper(solve_lower(rhs)); }

  /// R^{-T} B.
  Matrix solve_lower(const Matrix& rhs) const {
    detail::require(rhs.rows() == m_, "CholState::solve: row mismatch");
    if (m_ == 0) return rhs;
    return r().transpose().template triangularView<Eigen::Lower>().solve(rhs);
  }

  /// R^{-1} B.
  Matrix solve_upper(const Matrix& rhs) const {
    detail::require(rhs.rows() == m_, "CholState::solve: row mismatch");
    if (m_ == 0) return rhs;
    return r().template triangularView<Eigen::Upper>().solve(rhs);
  }

 private:
  detail::WideMatrix regularized_gram_wide() const {
    const Index m = m_;
    detail::WideMatrix g(m, m);
    const detail::Wide nl = static_cast<detail::Wide>(n_) * static_cast<detail::Wide>(lambda_);
    for (Index j = 0; j < m; ++j)
      for (Index k = 0; k <= j; ++k) {
        g(k, j) = detail::wide_dot(a_.raw().col(k).data(), a_.raw().col(j).data(), n_) +
                  nl * static_cast<detail::Wide>(w_.raw()(k, j));
        g(j, k) = g(k, j);
      }
    return g;
  }

  void grow(Index m) {
    a_.ensure(n_, m);
    r_.ensure(m, m);
    r_wide_.ensure(m, m);
    w_.ensure(m, m);
  }

  void sync_double(Index m) { r_.raw().topLeftCorner(m, m) = r_wide_.raw().topLeftCorner(m, m).cast<double>(); }

  void commit(const Vector& a_new, const Vector& b, double s, double kii, Index i) {
    const Index m = m_;
    a_.raw().col(m) = a_new;
    auto& w = w_.raw();
    for (Index j = 0; j < m; ++j) {
      w(j, m) = b(j);
      w(m, j) = b(j);
    }
    w(m, m) = s * s * kii;
    landmarks_.push_back(i);
    weights_.push_back(s);
    m_ = m + 1;
    sync_double(m_);
  }

  Index n_ = 0;
  Index m_ = 0;
  double lambda_ = 1.0;
  CholOptions opt_;
  GrowableMatrix a_;
  GrowableMatrix r_;
  GrowableMatrixT<detail::Wide> r_wide_;
  GrowableMatrix w_;
  std::vector<Index> landmarks_;
  std::vector<double> weights_;
  int refactorizations_ = 0;
};

/// State after the first landmark; d_1 <= 0 means the landmark is unusable.
template <class Oracle>
CholState chol_init(const Oracle& oracle, Index i1, double s1, double lambda, CholOptions opt = {}) {
  CholState state(oracle.n(), lambda, opt);
  if (state.step(oracle, i1, s1) != StepStatus::Accepted)
    throw NumericalError("chol_init: landmark has zero pivot and is rejected");
  return state;
}

// ---------------------------------------------------------------------------
// Incremental QR of H K S by modified Gram-Schmidt with one reorthogonalization.
// ---------------------------------------------------------------------------

class QrState {
 public:
  QrState() = default;
  explicit QrState(Index n, double dependency_tol = 1e-10) : n_(n), tol_(dependency_tol) {
    q_ = GrowableMatrix(n, 16);
    p_ = GrowableMatrix(16, 16);
  }

  Index n() const { return n_; }
  Index rank() const { return r_; }
  Index columns() const { return m_; }
  auto q() const { return q_.raw().leftCols(r_); }
  /// r x m coefficients with A = Q P.
  auto p() const { return p_.raw().topLeftCorner(r_, m_); }
  const std::vector<bool>& dependent() const { return dependent_; }

  /// Returns false when the column is numerically in span(Q); it is then kept
  /// only through its projection coefficients in P.
  bool append(const Vector& col) {
    detail::require(col.size() == n_, "QrState::append: length must equal N");
    p_.ensure(r_ + 1, m_ + 1);
    q_.ensure(n_, r_ + 1);
    auto& p = p_.raw();
    p.col(m_).setZero();
    p.row(r_).head(m_ + 1).setZero();
    Vector v = col;
    const double original = col.norm();
    for (int pass = 0; pass < 2; ++pass) {
      for (Index j = 0; j < r_; ++j) {
        const auto qj = q_.raw().col(j);
        const double coef = qj.dot(v);
        v.noalias() -= coef * qj;
        p(j, m_) += coef;
      }
    }
    const double residual = v.norm();
    const bool independent = original > 0.0 && residual >= tol_ * original;
    if (independent) {
      q_.raw().col(r_) = v / residual;
      p(r_, m_) = residual;
      ++r_;
    }
    dependent_.push_back(!independent);
    ++m_;
    return independent;
  }

 private:
  Index n_ = 0;
  Index r_ = 0;
  Index m_ = 0;
  double tol_ = 1e-10;
  GrowableMatrix q_;
  GrowableMatrix p_;
  std::vector<bool> dependent_;
};

}  // namespace nkcca
