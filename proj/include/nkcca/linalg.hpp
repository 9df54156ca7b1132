#pragma once

// Dense kernels shared by the solvers and the verifiers. When the build
// defines NKCCA_HAVE_LAPACKE the symmetric eigensolver and the SVD go through
// LAPACK's divide-and-conquer drivers, provided a one-time probe confirms the
// linked LAPACK/BLAS returns orthonormal factors on this machine; otherwise
// Eigen's own solvers are used.

#include <nkcca/common.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <vector>

#ifdef NKCCA_HAVE_LAPACKE
#include <lapacke.h>
#endif

namespace nkcca::linalg {

#ifdef NKCCA_HAVE_LAPACKE
namespace probe {

/// Runs dsyevd and dgesdd on a 128 x 128 matrix with a clustered spectrum and
/// checks the factors. Some BLAS builds select faulty kernels on newer CPUs.
inline bool probe_lapack() {
  const lapack_int n = 128, k = 65;
  Matrix a(n, n);
  for (lapack_int i = 0; i < n; ++i)
    for (lapack_int j = 0; j < n; ++j) {
      const double t = std::sin(0.37 * i) - std::sin(0.37 * j);
      a(i, j) = std::exp(-t * t);
    }
  Matrix v = a;
  Vector w(n);
  if (LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, v.data(), n, w.data()) != 0) return false;
  const double eig_err = (v.transpose() * v - Matrix::Identity(n, n)).norm() +
                         (v * w.asDiagonal() * v.transpose() - a).norm() / a.norm();
  Matrix b = a.leftCols(k), work = b, u(n, k), vt(k, k);
  Vector s(k);
  if (LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'S', n, k, work.data(), n, s.data(), u.data(), n, vt.data(), k) != 0)
    return false;
  const double svd_err = (u * s.asDiagonal() * vt - b).norm() / b.norm();
  return eig_err < 1e-10 && svd_err < 1e-10;
}

}  // namespace probe
#endif

/// True when decompositions are routed through LAPACK.
inline bool lapack_active() {
#ifdef NKCCA_HAVE_LAPACKE
  static const bool ok = [] {
    const bool good = probe::probe_lapack();
    if (!good)
      std::cerr << "nkcca: linked LAPACK failed its self-check; using Eigen decompositions"
                   " (for OpenBLAS, setting OPENBLAS_CORETYPE=Haswell usually helps)\n";
    return good;
  }();
  return ok;
#else
  return false;
#endif
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
struct SymEig {
  Vector values;
  Matrix vectors;
};

inline SymEig sym_eig(const Matrix& a) {
  detail::require(a.rows() == a.cols(), "sym_eig: matrix must be square");
  SymEig out;
  const Index n = a.rows();
  if (n == 0) return out;
#ifdef NKCCA_HAVE_LAPACKE
  if (lapack_active()) {
    out.vectors = a;
    out.values.resize(n);
    const lapack_int info =
        LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', static_cast<lapack_int>(n), out.vectors.data(),
                       static_cast<lapack_int>(n), out.values.data());
    if (info != 0) throw NumericalError("sym_eig: dsyevd failed with info " + std::to_string(info));
    return out;
  }
#endif
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) throw NumericalError("sym_eig: eigensolver did not converge");
  out.values = es.eigenvalues();
  out.vectors = es.eigenvectors();
  return out;
}

inline Vector sym_eigenvalues(const Matrix& a) {
  detail::require(a.rows() == a.cols(), "sym_eigenvalues: matrix must be square");
  const Index n = a.rows();
  if (n == 0) return Vector();
#ifdef NKCCA_HAVE_LAPACKE
  if (lapack_active()) {
    Matrix work = a;
    Vector w(n);
    const lapack_int info =
        LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'N', 'L', static_cast<lapack_int>(n), work.data(),
                       static_cast<lapack_int>(n), w.data());
    if (info != 0) throw NumericalError("sym_eigenvalues: dsyevd failed");
    return w;
  }
#endif
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("sym_eigenvalues: no convergence");
  return es.eigenvalues();
}

/// Thin SVD, singular values descending.
struct Svd {
  Matrix u;
  Vector s;
  Matrix v;
};

inline Svd thin_svd(const Matrix& a) {
  Svd out;
  const Index m = a.rows(), n = a.cols(), k = std::min(m, n);
  if (k == 0) {
    out.u = Matrix(m, 0);
    out.v = Matrix(n, 0);
    return out;
  }
#ifdef NKCCA_HAVE_LAPACKE
  if (lapack_active()) {
    Matrix work = a;
    out.s.resize(k);
    out.u.resize(m, k);
    Matrix vt(k, n);
    const lapack_int info = LAPACKE_dgesdd(
        LAPACK_COL_MAJOR, 'S', static_cast<lapack_int>(m), static_cast<lapack_int>(n), work.data(),
        static_cast<lapack_int>(m), out.s.data(), out.u.data(), static_cast<lapack_int>(m),
        vt.data(), static_cast<lapack_int>(k));
    if (info != 0) throw NumericalError("thin_svd: dgesdd failed with info " + std::to_string(info));
    out.v = vt.transpose();
    return out;
  }
#endif
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.u = svd.matrixU();
  out.s = svd.singularValues();
  out.v = svd.matrixV();
  return out;
}

inline Vector singular_values(const Matrix& a) {
  if (a.size() == 0) return Vector();
#ifdef NKCCA_HAVE_LAPACKE
  if (lapack_active()) {
    const Index m = a.rows(), n = a.cols(), k = std::min(m, n);
    Matrix work = a;
    Vector s(k);
    const lapack_int info = LAPACKE_dgesdd(
        LAPACK_COL_MAJOR, 'N', static_cast<lapack_int>(m), static_cast<lapack_int>(n), work.data(),
        static_cast<lapack_int>(m), s.data(), nullptr, 1, nullptr, 1);
    if (info != 0) throw NumericalError("singular_values: dgesdd failed");
    return s;
  }
#endif
  Eigen::BDCSVD<Matrix> svd(a);
  return svd.singularValues();
}

/// Spectral norm of a dense matrix.
inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return singular_values(a)(0);
}

/// Spectral norm of a symmetric matrix (largest |eigenvalue|).
inline double sym_spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  const Vector w = sym_eigenvalues(a);
  return std::max(std::abs(w(0)), std::abs(w(w.size() - 1)));
}

inline double min_eigenvalue(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return sym_eigenvalues(a)(0);
}

/// f(A) for symmetric A through its eigendecomposition.
template <class Fn>
Matrix sym_function(const SymEig& eig, Fn&& fn) {
  const Vector mapped = eig.values.unaryExpr(fn);
  return eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
}

/// Pseudo-inverse of a symmetric PSD matrix; eigenvalues at or below
/// rel_tol * max eigenvalue are treated as zero.
inline Matrix sym_pinv(const Matrix& a, double rel_tol = 1e-12) {
  if (a.size() == 0) return a;
  const SymEig eig = sym_eig(a);
  const double top = std::max(std::abs(eig.values.maxCoeff()), std::abs(eig.values.minCoeff()));
  const double cut = rel_tol * top;
  return sym_function(eig, [cut](double w) { return std::abs(w) > cut ? 1.0 / w : 0.0; });
}

/// Largest principal angle (radians) between the column spans of a and b,
/// from the sine form ||(I - Qa Qa^T) Qb|| with Qb the smaller basis.
inline double max_principal_angle(const Matrix& a, const Matrix& b) {
  detail::require(a.rows() == b.rows(), "max_principal_angle: row mismatch");
  if (a.cols() == 0 || b.cols() == 0) return 0.0;
  if (b.cols() > a.cols()) return max_principal_angle(b, a);
  const Matrix qa = Eigen::HouseholderQR<Matrix>(a).householderQ() * Matrix::Identity(a.rows(), a.cols());
  const Matrix qb = Eigen::HouseholderQR<Matrix>(b).householderQ() * Matrix::Identity(b.rows(), b.cols());
  const Matrix residual = qb - qa * (qa.transpose() * qb);
  return std::asin(std::min(1.0, spectral_norm(residual)));
}

/// Linear operator given by its action on blocks of vectors.
struct LinearOperator {
  Index rows = 0;
  Index cols = 0;
  std::function<Matrix(const Matrix&)> apply;            // cols x k -> rows x k
  std::function<Matrix(const Matrix&)> apply_transpose;  // rows x k -> cols x k
};

struct NormEstimateOptions {
  Index block = 8;
  int max_iterations = 500;
  double rel_tol = 1e-10;
  std::uint64_t seed = 0x6b63636155ULL;
};

/// Largest singular value of an implicit operator by block subspace iteration
/// on A^T A with a Rayleigh-Ritz step. Converges from below.
inline double operator_spectral_norm(const LinearOperator& op, NormEstimateOptions opt = {}) {
  if (op.rows == 0 || op.cols == 0) return 0.0;
  const Index k = std::max<Index>(1, std::min({opt.block, op.rows, op.cols}));
  std::mt19937_64 gen(opt.seed);
  std::normal_distribution<double> normal;
  Matrix x(op.cols, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < op.cols; ++i) x(i, j) = normal(gen);
  double previous = -1.0;
  double estimate = 0.0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::HouseholderQR<Matrix> qr(x);
    const Matrix q = qr.householderQ() * Matrix::Identity(op.cols, k);
    const Matrix y = op.apply(q);
    estimate = spectral_norm(y);
    if (estimate == 0.0) return 0.0;
    if (previous >= 0.0 && std::abs(estimate - previous) <= opt.rel_tol * estimate) break;
    previous = estimate;
    x = op.apply_transpose(y);
  }
  return estimate;
}

}  // namespace nkcca::linalg
