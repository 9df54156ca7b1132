#pragma once

#include <nkcca/common.hpp>

#include <cmath>
#include <memory>
#include <string>

namespace nkcca {

enum class KernelFamily { GaussianRbf };

inline std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::GaussianRbf:
      return "gaussian_rbf";
  }
  return "unknown";
}

inline KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "gaussian_rbf" || name == "rbf") return KernelFamily::GaussianRbf;
  throw ConfigError("unknown kernel family '" + name + "'");
}

struct KernelSpec {
  KernelFamily family = KernelFamily::GaussianRbf;
  double sigma = 1.0;

  static KernelSpec rbf(double sigma) {
    KernelSpec spec{KernelFamily::GaussianRbf, sigma};
    spec.validate();
    return spec;
  }

  void validate() const {
    detail::require(std::isfinite(sigma) && sigma > 0.0, "kernel bandwidth sigma must be > 0");
  }
};

/// k(x, y); exp(-|x-y|^2 / (2 sigma^2)) for the Gaussian RBF.
template <class DerivedX, class DerivedY>
double kernel_eval(const KernelSpec& spec, const Eigen::MatrixBase<DerivedX>& x,
                   const Eigen::MatrixBase<DerivedY>& y) {
  detail::require(x.size() == y.size(), "kernel_eval: dimension mismatch");
  switch (spec.family) {
    case KernelFamily::GaussianRbf: {
      double dist2 = 0.0;
      for (Index i = 0; i < x.size(); ++i) {
        const double d = x(i) - y(i);
        dist2 += d * d;
      }
      return std::exp(-dist2 / (2.0 * spec.sigma * spec.sigma));
    }
  }
  throw ConfigError("kernel_eval: unsupported kernel family");
}

/// Symmetric N x N kernel matrix.
class GramMatrix {
 public:
  GramMatrix() = default;
  explicit GramMatrix(Matrix entries) : entries_(std::move(entries)) {
    detail::require(entries_.rows() == entries_.cols(), "GramMatrix must be square");
  }

  Index n() const { return entries_.rows(); }
  const Matrix& entries() const { return entries_; }
  double operator()(Index i, Index j) const { return entries_(i, j); }

 private:
  Matrix entries_;
};

/// Kernel values between every row of `a` and every row of `b`.
inline Matrix cross_gram(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  spec.validate();
  detail::require(a.cols() == b.cols(), "cross_gram: dimension mismatch");
  Matrix out(a.rows(), b.rows());
  switch (spec.family) {
    case KernelFamily::GaussianRbf: {
      const Vector na = a.rowwise().squaredNorm();
      const Vector nb = b.rowwise().squaredNorm();
      out.noalias() = -2.0 * a * b.transpose();
      out.colwise() += na;
      out.rowwise() += nb.transpose();
      const double scale = -1.0 / (2.0 * spec.sigma * spec.sigma);
      out = (out.array().max(0.0) * scale).exp().matrix();
      break;
    }
  }
  return out;
}

/// Gram matrix of the rows of X. The upper triangle is evaluated pairwise and
/// mirrored, so the result is exactly symmetric.
inline GramMatrix gram(const KernelSpec& spec, const Matrix& x) {
  spec.validate();
  detail::require(x.rows() >= 1, "gram: need at least one sample");
  const Index n = x.rows();
  Matrix k(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i <= j; ++i) {
      const double v = (i == j) ? kernel_eval(spec, x.row(i), x.row(i))
                                : kernel_eval(spec, x.row(i), x.row(j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return GramMatrix(std::move(k));
}

/// HKH with H = I - 11^T/N, computed by mean subtraction.
inline GramMatrix center(const GramMatrix& k) {
  const Matrix& a = k.entries();
  const Vector col_mean = a.colwise().mean().transpose();
  const Vector row_mean = a.rowwise().mean();
  const double grand = a.mean();
  Matrix out = a;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean.transpose();
  out.array() += grand;
  // Mirror to keep exact symmetry.
  out = 0.5 * (out + out.transpose()).eval();
  return GramMatrix(std::move(out));
}

/// Column oracles hand kernel columns to the Nyström machinery without
/// requiring the full Gram matrix in memory.
///
/// `DenseColumns` wraps an explicit Gram matrix; `DataColumns` evaluates the
/// kernel against the training data on demand.
class DenseColumns {
 public:
  explicit DenseColumns(std::shared_ptr<const GramMatrix> k) : k_(std::move(k)) {}
  explicit DenseColumns(const GramMatrix& k) : k_(std::make_shared<GramMatrix>(k)) {}

  Index n() const { return k_->n(); }
  Vector column(Index i) const {
    check(i);
    return k_->entries().col(i);
  }
  double entry(Index i, Index j) const {
    check(i);
    check(j);
    return (*k_)(i, j);
  }
  const GramMatrix& gram() const { return *k_; }

 private:
  void check(Index i) const {
    detail::require(i >= 0 && i < n(), "column index out of range");
  }
  std::shared_ptr<const GramMatrix> k_;
};

class DataColumns {
 public:
  DataColumns(KernelSpec spec, std::shared_ptr<const Matrix> x) : spec_(spec), x_(std::move(x)) {
    spec_.validate();
  }
  DataColumns(KernelSpec spec, const Matrix& x)
      : DataColumns(spec, std::make_shared<const Matrix>(x)) {}

  Index n() const { return x_->rows(); }
  Vector column(Index i) const {
    check(i);
    Vector out(n());
    for (Index r = 0; r < n(); ++r) out(r) = kernel_eval(spec_, x_->row(r), x_->row(i));
    return out;
  }
  double entry(Index i, Index j) const {
    check(i);
    check(j);
    return kernel_eval(spec_, x_->row(i), x_->row(j));
  }
  const KernelSpec& spec() const { return spec_; }
  const Matrix& data() const { return *x_; }
  std::shared_ptr<const Matrix> data_ptr() const { return x_; }

 private:
  void check(Index i) const {
    detail::require(i >= 0 && i < n(), "column index out of range");
  }
  KernelSpec spec_;
  std::shared_ptr<const Matrix> x_;
};

/// s * H k_i, the centered and weighted kernel column of landmark i.
template <class Oracle>
Vector centered_column(const Oracle& oracle, Index i, double s) {
  detail::require(s > 0.0 && std::isfinite(s), "centered_column: weight must be positive");
  Vector k = oracle.column(i);
  k.array() -= k.mean();
  return s * k;
}

}  // namespace nkcca
