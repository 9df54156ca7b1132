#pragma once

#include <nkcca/common.hpp>
#include <nkcca/kernels.hpp>
#include <nkcca/linalg.hpp>
#include <nkcca/nystrom.hpp>
#include <nkcca/sampling.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <unordered_set>
#include <vector>

namespace nkcca {

enum class View { First = 0, Second = 1 };

/// Fitted KCCA or NKCCA solution.
struct KccaModel {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  Index dims = 0;            // L
  Vector rho;                // nonincreasing canonical correlations
  Matrix alpha_prime;        // N x L, unit columns
  Matrix beta_prime;         // N x L, unit columns
  Matrix alpha;              // N x L coefficients, empty until computed
  Matrix beta;
  // Training references for out-of-sample projection.
  std::optional<KernelSpec> kernel1;
  std::optional<KernelSpec> kernel2;
  std::shared_ptr<const Matrix> train1;
  std::shared_ptr<const Matrix> train2;
  // Accepted landmarks (empty for exact KCCA).
  std::vector<Index> landmarks1;
  std::vector<Index> landmarks2;
  std::vector<double> landmark_weights1;
  std::vector<double> landmark_weights2;

  Index n() const { return alpha_prime.rows(); }
  bool has_coefficients() const { return alpha.size() > 0 && beta.size() > 0; }
};

namespace detail {

/// Flip column pairs so that the first entry of each `a` column whose
/// magnitude exceeds 1e-6 of the column's largest entry is positive.
inline void canonical_signs(Matrix& a, Matrix& b) {
  for (Index l = 0; l < a.cols(); ++l) {
    const double top = a.col(l).cwiseAbs().maxCoeff();
    if (top == 0.0) continue;
    for (Index i = 0; i < a.rows(); ++i) {
      if (std::abs(a(i, l)) > 1e-6 * top) {
        if (a(i, l) < 0.0) {
          a.col(l) *= -1.0;
          b.col(l) *= -1.0;
        }
        break;
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Exact KCCA
// ---------------------------------------------------------------------------

struct ExactOptions {
  Index max_dense_n = 5000;
  /// Eigen-directions with s/(s + N lambda) below this are dropped from T.
  double phi_floor = 1e-14;
};

/// Exact solution together with the spectral data of both centered kernels,
/// which the verifiers reuse.
struct ExactKcca {
  KccaModel model;
  linalg::SymEig eig1;  // of the centered kernel, view 1
  linalg::SymEig eig2;
  Vector sigma;         // all singular values of T that survive the floor
  double phi_floor = 0.0;

  Index n() const { return eig1.values.size(); }

  /// K(K + N lambda I)^{-1} X for the centered kernel of the given view.
  Matrix reg_projector_apply(View view, const Matrix& x) const {
    const auto& eig = view == View::First ? eig1 : eig2;
    const double nl = static_cast<double>(n()) * (view == View::First ? model.lambda1 : model.lambda2);
    const Vector phi = eig.values.unaryExpr([nl](double w) {
      const double s = std::max(w, 0.0);
      return s / (s + nl);
    });
    return eig.vectors * (phi.asDiagonal() * (eig.vectors.transpose() * x));
  }

  /// (K + N lambda I)^{-1} X for the centered kernel of the given view.
  Matrix reg_inverse_apply(View view, const Matrix& x) const {
    const auto& eig = view == View::First ? eig1 : eig2;
    const double nl = static_cast<double>(n()) * (view == View::First ? model.lambda1 : model.lambda2);
    const Vector inv = eig.values.unaryExpr([nl](double w) { return 1.0 / (std::max(w, 0.0) + nl); });
    return eig.vectors * (inv.asDiagonal() * (eig.vectors.transpose() * x));
  }

  /// Dense T (small N only).
  Matrix dense_t() const {
    const Matrix a2 = reg_projector_apply(View::Second, Matrix::Identity(n(), n()));
    return reg_projector_apply(View::First, a2);
  }

  double gap() const { return sigma.size() >= 2 ? sigma(0) - sigma(1) : (sigma.size() == 1 ? sigma(0) : 0.0); }
};

inline ExactKcca exact_kcca_full(const GramMatrix& k1, const GramMatrix& k2, double lambda1,
                                 double lambda2, Index dims, ExactOptions opt = {}) {
  const Index n = k1.n();
  detail::require(k2.n() == n, "exact_kcca: kernel sizes differ");
  detail::require(n <= opt.max_dense_n, "exact_kcca: N exceeds the dense limit");
  detail::require(lambda1 > 0.0 && lambda2 > 0.0, "exact_kcca: lambda must be > 0");
  detail::require(dims >= 1 && dims <= n, "exact_kcca: L must lie in [1, N]");

  ExactKcca out;
  out.phi_floor = opt.phi_floor;
  out.eig1 = linalg::sym_eig(center(k1).entries());
  out.eig2 = linalg::sym_eig(center(k2).entries());

  auto kept = [&](const linalg::SymEig& eig, double lambda, Vector& phi, Vector& inv, Matrix& basis) {
    const double nl = static_cast<double>(n) * lambda;
    std::vector<Index> idx;
    for (Index j = eig.values.size() - 1; j >= 0; --j) {
      const double s = std::max(eig.values(j), 0.0);
      if (s / (s + nl) > opt.phi_floor) idx.push_back(j);
    }
    const auto r = static_cast<Index>(idx.size());
    phi.resize(r);
    inv.resize(r);
    basis.resize(n, r);
    for (Index c = 0; c < r; ++c) {
      const Index j = idx[static_cast<std::size_t>(c)];
      const double s = std::max(eig.values(j), 0.0);
      phi(c) = s / (s + nl);
      inv(c) = 1.0 / (s + nl);
      basis.col(c) = eig.vectors.col(j);
    }
  };
  Vector phi1, phi2, inv1, inv2;
  Matrix u1, u2;
  kept(out.eig1, lambda1, phi1, inv1, u1);
  kept(out.eig2, lambda2, phi2, inv2, u2);

  // T = U1 Phi1 U1^T U2 Phi2 U2^T restricted to the retained directions.
  const Matrix core = phi1.asDiagonal() * (u1.transpose() * u2) * phi2.asDiagonal();
  const linalg::Svd svd = linalg::thin_svd(core);
  out.sigma = svd.s;

  KccaModel& m = out.model;
  m.lambda1 = lambda1;
  m.lambda2 = lambda2;
  m.dims = dims;
  const Index avail = svd.s.size();
  detail::require(avail >= dims, "exact_kcca: kernel rank is below L");
  m.rho = svd.s.head(dims);
  m.alpha_prime = u1 * svd.u.leftCols(dims);
  m.beta_prime = u2 * svd.v.leftCols(dims);
  detail::canonical_signs(m.alpha_prime, m.beta_prime);
  // alpha = sqrt(N) (Kbar + N lambda I)^{-1} alpha'; alpha' lies in span(U_r).
  const double rn = std::sqrt(static_cast<double>(n));
  m.alpha = rn * (u1 * (inv1.asDiagonal() * (u1.transpose() * m.alpha_prime)));
  m.beta = rn * (u2 * (inv2.asDiagonal() * (u2.transpose() * m.beta_prime)));
  return out;
}

inline KccaModel exact_kcca(const GramMatrix& k1, const GramMatrix& k2, double lambda1, double lambda2,
                            Index dims, ExactOptions opt = {}) {
  return exact_kcca_full(k1, k2, lambda1, lambda2, dims, opt).model;
}

// ---------------------------------------------------------------------------
// Nyström KCCA
// ---------------------------------------------------------------------------

struct NkccaOptions {
  Index dims = 1;
  CholOptions chol;
  double qr_tol = 1e-10;
  bool compute_coefficients = true;
};

struct RankPathEntry {
  Index m1 = 0;  // draws consumed, view 1
  Index m2 = 0;
  Index rank1 = 0;  // accepted landmarks
  Index rank2 = 0;
  Vector rho_tilde;
  KccaModel model;
  double wall_time_incremental = 0.0;
  double wall_time_restart = 0.0;
};

/// alpha = sqrt(N) (Lbar + N lambda I)^{-1} alpha'
///       = (sqrt(N) / (N lambda)) (alpha' - A G^{-1} A^T alpha').
inline Matrix nkcca_coefficients(const CholState& state, const Matrix& unit_vectors) {
  const double n = static_cast<double>(state.n());
  const double scale = std::sqrt(n) / (n * state.lambda());
  if (state.rank() == 0) return scale * unit_vectors;
  const Matrix proj = state.a() * state.solve(state.a().transpose() * unit_vectors);
  return scale * (unit_vectors - proj);
}

/// Same coefficients through the orthonormal basis of H K S:
/// A G^{-1} A^T = Q Z Z^T Q^T with Z = P R^{-1}, which avoids forming G^{-1}.
inline Matrix nkcca_coefficients(const CholState& chol, const QrState& qr, const Matrix& unit_vectors) {
  const double n = static_cast<double>(chol.n());
  const double scale = std::sqrt(n) / (n * chol.lambda());
  if (chol.rank() == 0 || qr.rank() == 0) return scale * unit_vectors;
  const Matrix zt = chol.solve_lower(Matrix(qr.p().transpose()));  // m x r
  const Matrix coords = qr.q().transpose() * unit_vectors;
  return scale * (unit_vectors - qr.q() * (zt.transpose() * (zt * coords)));
}

/// (Lbar + N lambda I)^{-1} Lbar X = A G^{-1} A^T X.
inline Matrix nystrom_reg_projector_apply(const CholState& state, const Matrix& x) {
  if (state.rank() == 0) return Matrix::Zero(x.rows(), x.cols());
  return state.a() * state.solve(state.a().transpose() * x);
}

namespace detail {

struct SmallCoreSolution {
  Vector sigma;
  Matrix left;   // N x L
  Matrix right;  // N x L
};

/// That = Z1^T (R1^{-T} core R2^{-1}) Z2 with Z^T = R^{-T} P^T; `zt` is m x r
/// and `inner` the bracketed m1 x m2 block.
inline Matrix assemble_t_hat(const Matrix& zt1, const Matrix& inner, const Matrix& zt2) {
  if (zt1.cols() == 0 || zt2.cols() == 0) return Matrix(zt1.cols(), zt2.cols());
  return zt1.transpose() * inner * zt2;
}

/// Top `dims` singular triplets of That lifted back with Q1, Q2.
inline SmallCoreSolution solve_core(const Matrix& q1, const Matrix& t_hat, const Matrix& q2, Index dims) {
  const Index n = q1.rows();
  SmallCoreSolution out;
  out.sigma = Vector::Zero(dims);
  out.left = Matrix::Zero(n, dims);
  out.right = Matrix::Zero(n, dims);
  if (t_hat.size() == 0) return out;
  const linalg::Svd svd = linalg::thin_svd(t_hat);
  const Index k = std::min<Index>(dims, svd.s.size());
  out.sigma.head(k) = svd.s.head(k);
  out.left.leftCols(k) = q1 * svd.u.leftCols(k);
  out.right.leftCols(k) = q2 * svd.v.leftCols(k);
  return out;
}

}  // namespace detail

/// Incremental NKCCA: one CholState and one QrState per view plus the core
/// cross-matrix A1^T A2, all grown column by column.
template <class Oracle1, class Oracle2>
class NkccaSolver {
 public:
  NkccaSolver(const Oracle1& view1, const Oracle2& view2, double lambda1, double lambda2,
              NkccaOptions opt = {})
      : o1_(&view1),
        o2_(&view2),
        opt_(opt),
        chol1_(view1.n(), lambda1, opt.chol),
        chol2_(view2.n(), lambda2, opt.chol),
        qr1_(view1.n(), opt.qr_tol),
        qr2_(view2.n(), opt.qr_tol) {
    detail::require(view1.n() == view2.n(), "NkccaSolver: views have different N");
  }

  Index n() const { return o1_->n(); }
  const CholState& chol(View v) const { return v == View::First ? chol1_ : chol2_; }
  const QrState& qr(View v) const { return v == View::First ? qr1_ : qr2_; }
  auto core() const { return core_.raw().topLeftCorner(chol1_.rank(), chol2_.rank()); }

  /// Offers landmark i with weight s to one view. Repeated indices and
  /// numerically dependent columns are skipped; returns whether it was taken.
  bool add(View view, Index i, double s) {
    auto& seen = view == View::First ? seen1_ : seen2_;
    if (!seen.insert(i).second) return false;
    auto& chol = view == View::First ? chol1_ : chol2_;
    const Vector raw = view == View::First ? o1_->column(i) : o2_->column(i);
    const Index before = chol.rank();
    const StepStatus status = chol.step(raw, i, s);
    if (status == StepStatus::Dependent) return false;
    const Vector a_new = chol.a().col(before);
    (view == View::First ? qr1_ : qr2_).append(a_new);
    const Index m1 = chol1_.rank(), m2 = chol2_.rank();
    core_.ensure(std::max<Index>(m1, 1), std::max<Index>(m2, 1));
    auto& core = core_.raw();
    if (view == View::First) {
      if (m2 > 0) core.row(m1 - 1).head(m2) = (chol2_.a().transpose() * a_new).transpose();
    } else {
      if (m1 > 0) core.col(m2 - 1).head(m1) = chol1_.a().transpose() * a_new;
    }
    return true;
  }

  /// The r1 x r2 matrix That with T~ = Q1 That Q2^T.
  Matrix t_hat() const {
    const Matrix zt1 = chol1_.solve_lower(Matrix(qr1_.p().transpose()));  // m1 x r1
    const Matrix zt2 = chol2_.solve_lower(Matrix(qr2_.p().transpose()));  // m2 x r2
    Matrix inner;
    if (chol1_.rank() > 0 && chol2_.rank() > 0) {
      const Matrix left = chol1_.solve_lower(Matrix(core()));
      inner = chol2_.solve_lower(Matrix(left.transpose())).transpose();
    }
    return detail::assemble_t_hat(zt1, inner, zt2);
  }

  /// Current solution for the top `dims` directions.
  RankPathEntry solve(Index dims) const {
    RankPathEntry entry;
    entry.rank1 = chol1_.rank();
    entry.rank2 = chol2_.rank();
    detail::SmallCoreSolution sol = detail::solve_core(Matrix(qr1_.q()), t_hat(), Matrix(qr2_.q()), dims);
    KccaModel& m = entry.model;
    m.lambda1 = chol1_.lambda();
    m.lambda2 = chol2_.lambda();
    m.dims = dims;
    m.rho = sol.sigma;
    m.alpha_prime = std::move(sol.left);
    m.beta_prime = std::move(sol.right);
    detail::canonical_signs(m.alpha_prime, m.beta_prime);
    if (opt_.compute_coefficients) {
      m.alpha = nkcca_coefficients(chol1_, qr1_, m.alpha_prime);
      m.beta = nkcca_coefficients(chol2_, qr2_, m.beta_prime);
    }
    m.landmarks1 = chol1_.landmarks();
    m.landmarks2 = chol2_.landmarks();
    m.landmark_weights1 = chol1_.weights();
    m.landmark_weights2 = chol2_.weights();
    entry.rho_tilde = m.rho;
    return entry;
  }

 private:
  const Oracle1* o1_;
  const Oracle2* o2_;
  NkccaOptions opt_;
  CholState chol1_;
  CholState chol2_;
  QrState qr1_;
  QrState qr2_;
  GrowableMatrix core_{1, 1};
  std::unordered_set<Index> seen1_;
  std::unordered_set<Index> seen2_;
};

/// Records kernels and training inputs so the model can project new points.
inline void attach_training(KccaModel& m, const KernelSpec& spec1, std::shared_ptr<const Matrix> x1,
                            const KernelSpec& spec2, std::shared_ptr<const Matrix> x2) {
  detail::require(x1 && x2 && x1->rows() == m.n() && x2->rows() == m.n(),
                  "attach_training: training rows must match the model");
  m.kernel1 = spec1;
  m.kernel2 = spec2;
  m.train1 = std::move(x1);
  m.train2 = std::move(x2);
}

namespace detail {

/// Weight of draw j with the 1/sqrt(M) factor removed: s_j = 1/sqrt(p_{i_j}).
inline double unscaled_weight(const SamplingPlan& plan, Index j) {
  return plan.weights[static_cast<std::size_t>(j)] * std::sqrt(static_cast<double>(plan.size()));
}

inline void attach_training(KccaModel& m, const DataColumns& o1, const DataColumns& o2) {
  m.kernel1 = o1.spec();
  m.kernel2 = o2.spec();
  m.train1 = o1.data_ptr();
  m.train2 = o2.data_ptr();
}
template <class A, class B>
void attach_training(KccaModel&, const A&, const B&) {}

inline std::vector<Index> validated_checkpoints(std::vector<Index> checkpoints, Index max_draws) {
  detail::require(!checkpoints.empty(), "nkcca: need at least one checkpoint");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    detail::require(checkpoints[i] >= 1 && checkpoints[i] <= max_draws,
                    "nkcca: checkpoint exceeds the plan length");
    if (i > 0) detail::require(checkpoints[i] > checkpoints[i - 1], "nkcca: checkpoints must increase");
  }
  return checkpoints;
}

}  // namespace detail

/// Rank path with M1 = M2 = checkpoint. Each entry records the cumulative
/// incremental wall time.
template <class Oracle1, class Oracle2>
std::vector<RankPathEntry> nkcca_fit(const Oracle1& view1, const Oracle2& view2,
                                     const SamplingPlan& plan1, const SamplingPlan& plan2,
                                     double lambda1, double lambda2, std::vector<Index> checkpoints,
                                     NkccaOptions opt = {}) {
  detail::require(lambda1 > 0.0 && lambda2 > 0.0, "nkcca_fit: lambda must be > 0");
  const Index max_draws = std::min(plan1.size(), plan2.size());
  checkpoints = detail::validated_checkpoints(std::move(checkpoints), max_draws);
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  NkccaSolver<Oracle1, Oracle2> solver(view1, view2, lambda1, lambda2, opt);
  std::vector<RankPathEntry> path;
  Index consumed = 0;
  for (Index target : checkpoints) {
    for (; consumed < target; ++consumed) {
      solver.add(View::First, plan1.indices[static_cast<std::size_t>(consumed)],
                 detail::unscaled_weight(plan1, consumed));
      solver.add(View::Second, plan2.indices[static_cast<std::size_t>(consumed)],
                 detail::unscaled_weight(plan2, consumed));
    }
    RankPathEntry entry = solver.solve(opt.dims);
    entry.m1 = target;
    entry.m2 = target;
    detail::attach_training(entry.model, view1, view2);
    entry.wall_time_incremental = std::chrono::duration<double>(clock::now() - start).count();
    path.push_back(std::move(entry));
  }
  return path;
}

/// The same pipeline started from scratch at a single rank (the
/// non-incremental baseline used for timing).
template <class Oracle1, class Oracle2>
RankPathEntry nkcca_fresh(const Oracle1& view1, const Oracle2& view2, const SamplingPlan& plan1,
                          const SamplingPlan& plan2, double lambda1, double lambda2, Index draws,
                          NkccaOptions opt = {}) {
  auto path = nkcca_fit(view1, view2, plan1, plan2, lambda1, lambda2, {draws}, opt);
  RankPathEntry entry = std::move(path.front());
  entry.wall_time_restart = entry.wall_time_incremental;
  return entry;
}

/// Independent dense route: bordered Cholesky screening of the distinct
/// landmarks, an explicit LLT of the regularized Gram matrix, Householder QR
/// of H K S and a directly formed core matrix.
template <class Oracle1, class Oracle2>
RankPathEntry nkcca_dense(const Oracle1& view1, const Oracle2& view2, const SamplingPlan& plan1,
                          const SamplingPlan& plan2, double lambda1, double lambda2, Index draws,
                          NkccaOptions opt = {}) {
  const Index n = view1.n();
  detail::require(view2.n() == n, "nkcca_dense: views have different N");
  detail::require(draws >= 1 && draws <= std::min(plan1.size(), plan2.size()),
                  "nkcca_dense: draw count out of range");

  struct ViewFactor {
    Matrix a;   // accepted centered weighted columns
    Matrix r;   // upper Cholesky factor of their regularized Gram matrix
    Matrix q;   // Householder QR of a
    Matrix p;
    Matrix zt;  // (P R^{-1})^T
    std::vector<Index> landmarks;
    std::vector<double> weights;

    Matrix solve_lower(const Matrix& rhs) const {
      return r.transpose().triangularView<Eigen::Lower>().solve(rhs);
    }
  };

  auto build = [&](const auto& oracle, const SamplingPlan& plan, double lambda) {
    using detail::Wide;
    const Wide nl = static_cast<Wide>(n) * static_cast<Wide>(lambda);
    std::vector<Index> cand;
    std::vector<double> cand_w;
    std::unordered_set<Index> seen;
    for (Index j = 0; j < draws; ++j) {
      const Index i = plan.indices[static_cast<std::size_t>(j)];
      if (seen.insert(i).second) {
        cand.push_back(i);
        cand_w.push_back(detail::unscaled_weight(plan, j));
      }
    }
    const auto mc = static_cast<Index>(cand.size());
    Matrix raw(n, mc), a(n, mc);
    for (Index j = 0; j < mc; ++j) {
      raw.col(j) = oracle.column(cand[static_cast<std::size_t>(j)]);
      a.col(j) = raw.col(j).array() - raw.col(j).mean();
      a.col(j) *= cand_w[static_cast<std::size_t>(j)];
    }
    detail::WideMatrix g(mc, mc);
    for (Index c = 0; c < mc; ++c)
      for (Index r = 0; r <= c; ++r) {
        const Wide kernel = static_cast<Wide>(cand_w[static_cast<std::size_t>(r)]) *
                            static_cast<Wide>(cand_w[static_cast<std::size_t>(c)]) *
                            static_cast<Wide>(raw(cand[static_cast<std::size_t>(r)], c));
        g(r, c) = detail::wide_dot(a.col(r).data(), a.col(c).data(), n) + nl * kernel;
        g(c, r) = g(r, c);
      }

    // Bordered screening: keep candidate j when its Schur complement against
    // the kept set exceeds dependency_tol * G_jj.
    std::vector<Index> keep;
    detail::WideMatrix lower = detail::WideMatrix::Zero(mc, mc);
    for (Index j = 0; j < mc; ++j) {
      const auto k = static_cast<Index>(keep.size());
      detail::WideVector l(k);
      for (Index t = 0; t < k; ++t) l(t) = g(keep[static_cast<std::size_t>(t)], j);
      if (k > 0) lower.topLeftCorner(k, k).triangularView<Eigen::Lower>().solveInPlace(l);
      const Wide pivot2 = g(j, j) - l.squaredNorm();
      if (!(pivot2 > static_cast<Wide>(opt.chol.dependency_tol) * g(j, j))) continue;
      lower.row(k).head(k) = l.transpose();
      lower(k, k) = std::sqrt(pivot2);
      keep.push_back(j);
    }
    ViewFactor f;
    const auto r = static_cast<Index>(keep.size());
    f.a.resize(n, r);
    detail::WideMatrix gk(r, r);
    for (Index c = 0; c < r; ++c) {
      const Index src = keep[static_cast<std::size_t>(c)];
      f.a.col(c) = a.col(src);
      f.landmarks.push_back(cand[static_cast<std::size_t>(src)]);
      f.weights.push_back(cand_w[static_cast<std::size_t>(src)]);
      for (Index rr = 0; rr < r; ++rr) gk(rr, c) = g(keep[static_cast<std::size_t>(rr)], src);
    }
    const Eigen::LLT<detail::WideMatrix> llt(gk);
    if (r > 0 && llt.info() != Eigen::Success) throw NumericalError("nkcca_dense: LLT failed");
    f.r = r > 0 ? Matrix(detail::WideMatrix(llt.matrixU()).cast<double>()) : Matrix(0, 0);
    Eigen::HouseholderQR<Matrix> qr(f.a);
    const Index rq = std::min(n, r);
    f.q = qr.householderQ() * Matrix::Identity(n, rq);
    f.p = qr.matrixQR().topRows(rq).template triangularView<Eigen::Upper>();
    f.zt = r > 0 ? f.solve_lower(f.p.transpose()) : Matrix(0, 0);
    return f;
  };

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  ViewFactor f1 = build(view1, plan1, lambda1);
  ViewFactor f2 = build(view2, plan2, lambda2);
  Matrix inner;
  if (f1.a.cols() > 0 && f2.a.cols() > 0) {
    const Matrix left = f1.solve_lower(f1.a.transpose() * f2.a);
    inner = f2.solve_lower(left.transpose()).transpose();
  }
  detail::SmallCoreSolution sol =
      detail::solve_core(f1.q, detail::assemble_t_hat(f1.zt, inner, f2.zt), f2.q, opt.dims);

  RankPathEntry entry;
  entry.m1 = draws;
  entry.m2 = draws;
  entry.rank1 = f1.a.cols();
  entry.rank2 = f2.a.cols();
  KccaModel& m = entry.model;
  m.lambda1 = lambda1;
  m.lambda2 = lambda2;
  m.dims = opt.dims;
  m.rho = sol.sigma;
  m.alpha_prime = std::move(sol.left);
  m.beta_prime = std::move(sol.right);
  detail::canonical_signs(m.alpha_prime, m.beta_prime);
  if (opt.compute_coefficients) {
    auto coeff = [&](const ViewFactor& f, const Matrix& unit, double lambda) {
      const double nn = static_cast<double>(n);
      const double scale = std::sqrt(nn) / (nn * lambda);
      if (f.a.cols() == 0) return Matrix(scale * unit);
      const Matrix coords = f.q.transpose() * unit;
      return Matrix(scale * (unit - f.q * (f.zt.transpose() * (f.zt * coords))));
    };
    m.alpha = coeff(f1, m.alpha_prime, lambda1);
    m.beta = coeff(f2, m.beta_prime, lambda2);
  }
  m.landmarks1 = f1.landmarks;
  m.landmarks2 = f2.landmarks;
  m.landmark_weights1 = f1.weights;
  m.landmark_weights2 = f2.weights;
  detail::attach_training(m, view1, view2);
  entry.rho_tilde = m.rho;
  entry.wall_time_restart = std::chrono::duration<double>(clock::now() - start).count();
  return entry;
}

// ---------------------------------------------------------------------------
// Out-of-sample projection and evaluation
// ---------------------------------------------------------------------------

/// (H k)^T coeffs for each row of `points`, k against the training data. The
/// additive constant of the exact mapping is omitted.
inline Matrix project_all(const KccaModel& model, const Matrix& points, View view) {
  const bool first = view == View::First;
  const auto& spec = first ? model.kernel1 : model.kernel2;
  const auto& train = first ? model.train1 : model.train2;
  const Matrix& coeffs = first ? model.alpha : model.beta;
  detail::require(spec.has_value() && train, "project: model carries no training data for this view");
  detail::require(coeffs.size() > 0, "project: model has no coefficients for this view");
  detail::require(points.cols() == train->cols(), "project: dimension mismatch");
  Matrix centered = coeffs;
  centered.rowwise() -= coeffs.colwise().mean();
  return cross_gram(*spec, points, *train) * centered;
}

inline Vector project(const KccaModel& model, const Vector& x_new, View view) {
  const Matrix row = x_new.transpose();
  return project_all(model, row, view).row(0).transpose();
}

/// Sample Pearson correlation; zero when either side has no variance.
inline double pearson(const Vector& a, const Vector& b) {
  detail::require(a.size() == b.size() && a.size() >= 2, "pearson: need two equal-length samples");
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double na = da.norm(), nb = db.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(da.dot(db) / (na * nb), -1.0, 1.0);
}

/// Sum over dimensions of |corr(f_l, g_l)|.
inline double total_correlation(const Matrix& proj1, const Matrix& proj2) {
  detail::require(proj1.rows() == proj2.rows() && proj1.cols() == proj2.cols(),
                  "total_correlation: projection shapes differ");
  detail::require(proj1.cols() >= 1, "total_correlation: need L >= 1");
  detail::require(proj1.rows() >= 2, "total_correlation: need at least two test pairs");
  double total = 0.0;
  for (Index l = 0; l < proj1.cols(); ++l) total += std::abs(pearson(proj1.col(l), proj2.col(l)));
  return total;
}

}  // namespace nkcca
