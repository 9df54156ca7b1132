#pragma once

// Dense verifiers for the approximation and stability bounds. Everything here
// forms N x N matrices and is meant for small N, except TErrorNorm, which
// evaluates ||T - T~|| exactly in a reduced basis.

#include <nkcca/common.hpp>
#include <nkcca/kcca.hpp>
#include <nkcca/kernels.hpp>
#include <nkcca/linalg.hpp>
#include <nkcca/nystrom.hpp>
#include <nkcca/sampling.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace nkcca {

struct BoundReport {
  std::string context;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
  bool applicable = true;
};

inline bool bound_holds(double lhs, double rhs) {
  return lhs <= rhs + 1e-8 * std::max(1.0, rhs);
}

inline BoundReport make_report(std::string context, double lhs, double rhs) {
  return {std::move(context), lhs, rhs, bound_holds(lhs, rhs), true};
}

/// A report whose precondition failed. `holds` is false so that it can never
/// be counted as a pass.
inline BoundReport not_applicable(std::string context, double lhs = 0.0, double rhs = 0.0) {
  return {std::move(context), lhs, rhs, false, false};
}

inline void write_reports_csv(std::ostream& os, const std::vector<BoundReport>& reports, bool header = true) {
  if (header) os << "context,lhs,rhs,holds,applicable\n";
  os << std::setprecision(17);
  for (const auto& r : reports) {
    std::string ctx = r.context;
    for (char& ch : ctx)
      if (ch == ',' || ch == '\n') ch = ';';
    os << ctx << ',' << r.lhs << ',' << r.rhs << ',' << (r.holds ? 1 : 0) << ',' << (r.applicable ? 1 : 0)
       << '\n';
  }
}

struct DiagnosticOptions {
  Index max_n = 2000;
};

namespace dense {

inline void check_size(Index n, const DiagnosticOptions& opt) {
  detail::require(n <= opt.max_n, "diagnostics: N exceeds the dense limit (" + std::to_string(opt.max_n) + ")");
}

inline Matrix centered(const Matrix& k) {
  Matrix c = k;
  c.rowwise() -= k.colwise().mean();
  c.colwise() -= c.rowwise().mean();
  return 0.5 * (c + c.transpose());
}

/// C (S^T K S + N gamma I)^+ C^T with C = K S.
/// With K = B^T B and Y = B S: L_gamma = B^T Y (Y^T Y + N gamma I)^+ Y^T B.
/// Written as B^T P B with 0 <= P <= I, so the orderings survive rounding.
inline Matrix nystrom(const GramMatrix& k, const SamplingPlan& plan, double gamma) {
  const Index n = k.n();
  const linalg::SymEig eig = linalg::sym_eig(k.entries());
  const Matrix b = eig.values.cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.vectors.transpose();
  const linalg::Svd svd = linalg::thin_svd(b * sampling_matrix(plan, n));
  const double ng = static_cast<double>(n) * gamma;
  const double cutoff = svd.s.size() > 0 ? svd.s(0) * 1e-12 : 0.0;
  Vector shrink(svd.s.size());
  for (Index j = 0; j < svd.s.size(); ++j) {
    const double s2 = svd.s(j) * svd.s(j);
    shrink(j) = svd.s(j) > cutoff ? s2 / (s2 + ng) : 0.0;
  }
  const Matrix bu = b.transpose() * svd.u;
  return bu * shrink.asDiagonal() * bu.transpose();
}

/// A (A + N lambda I)^{-1} for symmetric PSD A.
inline Matrix reg_projector(const Matrix& a, double lambda) {
  const double nl = static_cast<double>(a.rows()) * lambda;
  const linalg::SymEig eig = linalg::sym_eig(a);
  return linalg::sym_function(eig, [nl](double w) {
    const double s = std::max(w, 0.0);
    return s / (s + nl);
  });
}

/// (A + N lambda I)^{-1} A (B + N lambda' I)^{-1} B. Both factors are
/// symmetric, so this is the product of the two regularized projectors.
inline Matrix t_matrix(const Matrix& a_centered, const Matrix& b_centered, double lambda1, double lambda2) {
  return reg_projector(a_centered, lambda1) * reg_projector(b_centered, lambda2);
}

}  // namespace dense

// ---------------------------------------------------------------------------
// Lemma-level checks
// ---------------------------------------------------------------------------

/// ||Phi - Phi^{1/2} U^T S S^T U Phi^{1/2}|| with K = U Sigma U^T and
/// Phi = Sigma (Sigma + N gamma I)^{-1}.
inline double d_matrix_norm(const GramMatrix& k, const SamplingPlan& plan, double gamma,
                            DiagnosticOptions opt = {}) {
  const Index n = k.n();
  dense::check_size(n, opt);
  detail::require(gamma > 0.0, "d_matrix_norm: gamma must be > 0");
  const linalg::SymEig eig = linalg::sym_eig(k.entries());
  const double ng = static_cast<double>(n) * gamma;
  const Vector root_phi = eig.values.unaryExpr([ng](double w) {
    const double s = std::max(w, 0.0);
    return std::sqrt(s / (s + ng));
  });
  Matrix d = Matrix(root_phi.array().square().matrix().asDiagonal());
  if (plan.size() > 0) {
    const Matrix s = sampling_matrix(plan, n);                       // N x M
    const Matrix b = root_phi.asDiagonal() * (eig.vectors.transpose() * s);  // N x M
    d -= b * b.transpose();
  }
  return linalg::sym_spectral_norm(0.5 * (d + d.transpose()));
}

/// L_gamma <= L <= K: minimum eigenvalues of K - L, L - L_gamma, K - L_gamma
/// are all >= -1e-8 ||K||. lhs is the largest violation, rhs the tolerance.
inline BoundReport psd_ordering_check(const GramMatrix& k, const SamplingPlan& plan, double gamma,
                                      DiagnosticOptions opt = {}) {
  dense::check_size(k.n(), opt);
  const Matrix l = dense::nystrom(k, plan, 0.0);
  const Matrix lg = dense::nystrom(k, plan, gamma);
  const Matrix& kk = k.entries();
  const double scale = linalg::sym_spectral_norm(kk);
  const double worst = std::max({-linalg::min_eigenvalue(kk - l), -linalg::min_eigenvalue(l - lg),
                                 -linalg::min_eigenvalue(kk - lg), 0.0});
  std::ostringstream ctx;
  ctx << "psd_ordering N=" << k.n() << " M=" << plan.size() << " gamma=" << gamma;
  BoundReport r = make_report(ctx.str(), worst, 1e-8 * scale);
  r.holds = worst <= 1e-8 * scale;
  return r;
}

/// K - L_gamma <= (N gamma / (1 - t)) I whenever ||D|| <= t.
inline BoundReport lemma1_tail_check(const GramMatrix& k, const SamplingPlan& plan, double gamma, double t,
                                     DiagnosticOptions opt = {}) {
  dense::check_size(k.n(), opt);
  detail::require(t > 0.0 && t < 1.0, "lemma1_tail_check: t must lie in (0,1)");
  std::ostringstream ctx;
  ctx << "lemma1_tail N=" << k.n() << " M=" << plan.size() << " gamma=" << gamma << " t=" << t;
  const double d = d_matrix_norm(k, plan, gamma, opt);
  const Matrix diff = k.entries() - dense::nystrom(k, plan, gamma);
  const double top = linalg::sym_eigenvalues(0.5 * (diff + diff.transpose())).maxCoeff();
  const double bound = static_cast<double>(k.n()) * gamma / (1.0 - t);
  if (d > t) return not_applicable(ctx.str() + " (||D||>t)", top, bound);
  BoundReport r = make_report(ctx.str(), top, bound + 1e-8 * linalg::sym_spectral_norm(k.entries()));
  return r;
}

struct Lemma2Report {
  BoundReport bound;
  double d_norm = 0.0;
  // ||K(K+NlI)^-1 - X(X+NlI)^-1|| for X in {L, L_gamma}, uncentered then centered.
  double err_l = 0.0;
  double err_lg = 0.0;
  double err_l_centered = 0.0;
  double err_lg_centered = 0.0;
  /// Intermediate inequalities of the proof.
  std::vector<BoundReport> steps;
};

/// Spectral error of the regularized projector under Nyström replacement,
/// against (gamma / lambda) / (1 - t), gated on the measured ||D|| <= t.
inline Lemma2Report lemma2_check(const GramMatrix& k, const SamplingPlan& plan, double gamma, double lambda,
                                 double t, DiagnosticOptions opt = {}) {
  const Index n = k.n();
  dense::check_size(n, opt);
  detail::require(t > 0.0 && t < 1.0, "lemma2_check: t must lie in (0,1)");
  detail::require(gamma > 0.0 && lambda > 0.0, "lemma2_check: gamma and lambda must be > 0");
  Lemma2Report out;
  std::ostringstream ctx;
  ctx << "lemma2 N=" << n << " M=" << plan.size() << " gamma=" << gamma << " lambda=" << lambda << " t=" << t;
  out.d_norm = d_matrix_norm(k, plan, gamma, opt);

  const Matrix& kk = k.entries();
  const Matrix l = dense::nystrom(k, plan, 0.0);
  const Matrix lg = dense::nystrom(k, plan, gamma);
  const Matrix kc = dense::centered(kk), lc = dense::centered(l), lgc = dense::centered(lg);
  const Matrix pk = dense::reg_projector(kk, lambda), pkc = dense::reg_projector(kc, lambda);
  out.err_l = linalg::sym_spectral_norm(pk - dense::reg_projector(l, lambda));
  out.err_lg = linalg::sym_spectral_norm(pk - dense::reg_projector(lg, lambda));
  out.err_l_centered = linalg::sym_spectral_norm(pkc - dense::reg_projector(lc, lambda));
  out.err_lg_centered = linalg::sym_spectral_norm(pkc - dense::reg_projector(lgc, lambda));
  const double lhs = std::max({out.err_l, out.err_lg, out.err_l_centered, out.err_lg_centered});
  const double rhs = (gamma / lambda) / (1.0 - t);

  const double nl = static_cast<double>(n) * lambda;
  const double ng_t = static_cast<double>(n) * gamma / (1.0 - t);
  const double gap_lg = linalg::sym_spectral_norm(kk - lg);
  const double gap_l = linalg::sym_spectral_norm(kk - l);
  const double gap_lgc = linalg::sym_spectral_norm(kc - lgc);
  const double tol = 1e-8 * linalg::sym_spectral_norm(kk);
  out.steps.push_back(make_report(ctx.str() + " step: err_lg <= ||K-Lg||/(N lambda)", out.err_lg, gap_lg / nl));
  out.steps.push_back(make_report(ctx.str() + " step: ||K-L|| <= ||K-Lg||", gap_l, gap_lg + tol));
  out.steps.push_back(
      make_report(ctx.str() + " step: centered err_lg <= ||Kc-Lgc||/(N lambda)", out.err_lg_centered, gap_lgc / nl));
  out.steps.push_back(make_report(ctx.str() + " step: Kc-Lc <= Kc-Lgc",
                                  std::max(0.0, -linalg::min_eigenvalue(lc - lgc)), tol));
  if (out.d_norm <= t)
    out.steps.push_back(make_report(ctx.str() + " step: ||Kc-Lgc|| <= N gamma/(1-t)", gap_lgc, ng_t + tol));

  if (out.d_norm > t) {
    out.bound = not_applicable(ctx.str() + " (||D||>t)", lhs, rhs);
  } else {
    out.bound = make_report(ctx.str(), lhs, rhs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Theorem-level checks
// ---------------------------------------------------------------------------

struct Theorem1Report {
  BoundReport bound;  // |rho - rho~| <= epsilon, gated on ||D_v|| <= t_v
  BoundReport weyl;   // |rho - rho~| <= ||T - T~||
  BoundReport chain;  // ||T - T~|| <= view-1 term + view-2 term
  double rho = 0.0;
  double rho_tilde = 0.0;
  double t_error = 0.0;
  double view1_term = 0.0;
  double view2_term = 0.0;
  double epsilon = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

/// Exact T against the dense Nyström T~ (gamma = 0 factors with the plans'
/// weights). epsilon = 2 max_v gamma_v / (lambda_v (1 - t_v)).
inline Theorem1Report theorem1_check(const GramMatrix& k1, const GramMatrix& k2, const SamplingPlan& plan1,
                                     const SamplingPlan& plan2, double lambda1, double lambda2, double gamma1,
                                     double gamma2, double t1, double t2, DiagnosticOptions opt = {}) {
  const Index n = k1.n();
  dense::check_size(n, opt);
  detail::require(k2.n() == n, "theorem1_check: kernel sizes differ");
  detail::require(t1 > 0.0 && t1 < 1.0 && t2 > 0.0 && t2 < 1.0, "theorem1_check: t must lie in (0,1)");
  Theorem1Report out;
  const Matrix pk1 = dense::reg_projector(dense::centered(k1.entries()), lambda1);
  const Matrix pk2 = dense::reg_projector(dense::centered(k2.entries()), lambda2);
  const Matrix pl1 = dense::reg_projector(dense::centered(dense::nystrom(k1, plan1, 0.0)), lambda1);
  const Matrix pl2 = dense::reg_projector(dense::centered(dense::nystrom(k2, plan2, 0.0)), lambda2);
  const Matrix t = pk1 * pk2;
  const Matrix t_tilde = pl1 * pl2;
  out.rho = linalg::spectral_norm(t);
  out.rho_tilde = linalg::spectral_norm(t_tilde);
  out.t_error = linalg::spectral_norm(t - t_tilde);
  out.view1_term = linalg::sym_spectral_norm(pl1 - pk1);
  out.view2_term = linalg::sym_spectral_norm(pl2 - pk2);
  out.epsilon = 2.0 * std::max(gamma1 / (lambda1 * (1.0 - t1)), gamma2 / (lambda2 * (1.0 - t2)));
  out.d1 = d_matrix_norm(k1, plan1, gamma1, opt);
  out.d2 = d_matrix_norm(k2, plan2, gamma2, opt);

  std::ostringstream ctx;
  ctx << "theorem1 N=" << n << " M1=" << plan1.size() << " M2=" << plan2.size() << " lambda=" << lambda1 << "/"
      << lambda2 << " gamma=" << gamma1 << "/" << gamma2;
  const double diff = std::abs(out.rho - out.rho_tilde);
  out.weyl = make_report(ctx.str() + " weyl", diff, out.t_error);
  out.chain = make_report(ctx.str() + " chain", out.t_error, out.view1_term + out.view2_term);
  if (out.d1 <= t1 && out.d2 <= t2)
    out.bound = make_report(ctx.str(), diff, out.epsilon);
  else
    out.bound = not_applicable(ctx.str() + " (||D||>t)", diff, out.epsilon);
  return out;
}

struct StabilityOptions {
  double c = 1.0;  // bound on kernel values; 1 for RBF
  /// Theorem-1 style epsilon, reported alongside the measured one when set.
  double epsilon_apriori = std::numeric_limits<double>::quiet_NaN();
  DiagnosticOptions dense;
};

struct StabilityReport {
  BoundReport coefficients_unit;  // ||alpha' - alpha~'|| <= (4 sqrt2 / r) ||T - T~||
  BoundReport coefficients;       // ||alpha - alpha~|| / sqrt N <= (1/2 + 4 sqrt2 / r) eps / (N lambda1)
  BoundReport projection;         // max |f(x) - f~(x)| <= (1/2 + 4 sqrt2 / r) c eps / lambda1
  bool applicable = false;
  double gap = 0.0;
  double t_error = 0.0;
  double view1_term = 0.0;
  double view2_term = 0.0;
  double epsilon = 0.0;  // 2 max(view1_term, view2_term)
  double epsilon_apriori = std::numeric_limits<double>::quiet_NaN();
  /// Sign applied to the approximate solution before comparison.
  double sign = 1.0;

  bool all_hold() const { return applicable && coefficients_unit.holds && coefficients.holds && projection.holds; }
};

namespace detail {

inline Matrix approx_kernel(const KccaModel& m, const GramMatrix& k, View view) {
  const auto& idx = view == View::First ? m.landmarks1 : m.landmarks2;
  const auto& w = view == View::First ? m.landmark_weights1 : m.landmark_weights2;
  if (idx.empty()) return k.entries();  // exact model
  return dense::nystrom(k, explicit_plan(k.n(), idx, w), 0.0);
}

}  // namespace detail

/// Layered stability check for the top direction of view 1. Both models must
/// carry training data; T~ is rebuilt from the approximate model's landmarks
/// (an empty landmark list means the exact kernel). Not applicable unless the
/// gap r = sigma1(T) - sigma2(T) is positive and ||T - T~|| <= r / 2.
inline StabilityReport stability_check(const KccaModel& exact, const KccaModel& approx, const Matrix& test_points,
                                       StabilityOptions opt = {}) {
  detail::require(exact.kernel1 && exact.kernel2 && exact.train1 && exact.train2,
                  "stability_check: exact model carries no training data");
  detail::require(approx.n() == exact.n(), "stability_check: models trained on different N");
  detail::require(exact.has_coefficients() && approx.has_coefficients(),
                  "stability_check: both models need coefficients");
  const Index n = exact.n();
  dense::check_size(n, opt.dense);
  const double lambda1 = exact.lambda1, lambda2 = exact.lambda2;
  const GramMatrix k1 = gram(*exact.kernel1, *exact.train1);
  const GramMatrix k2 = gram(*exact.kernel2, *exact.train2);

  const Matrix pk1 = dense::reg_projector(dense::centered(k1.entries()), lambda1);
  const Matrix pk2 = dense::reg_projector(dense::centered(k2.entries()), lambda2);
  const Matrix pl1 =
      dense::reg_projector(dense::centered(detail::approx_kernel(approx, k1, View::First)), lambda1);
  const Matrix pl2 =
      dense::reg_projector(dense::centered(detail::approx_kernel(approx, k2, View::Second)), lambda2);
  const Matrix t = pk1 * pk2;
  const Vector sv = linalg::singular_values(t);

  StabilityReport out;
  out.gap = sv.size() >= 2 ? sv(0) - sv(1) : sv(0);
  out.t_error = linalg::spectral_norm(t - pl1 * pl2);
  out.view1_term = linalg::sym_spectral_norm(pl1 - pk1);
  out.view2_term = linalg::sym_spectral_norm(pl2 - pk2);
  out.epsilon = 2.0 * std::max(out.view1_term, out.view2_term);
  out.epsilon_apriori = opt.epsilon_apriori;

  const Vector a_exact = exact.alpha_prime.col(0), b_exact = exact.beta_prime.col(0);
  const double overlap = 0.5 * (approx.alpha_prime.col(0).dot(a_exact) + approx.beta_prime.col(0).dot(b_exact));
  out.sign = overlap < 0.0 ? -1.0 : 1.0;
  const Vector a_unit = out.sign * approx.alpha_prime.col(0);
  const Vector a_coef = out.sign * approx.alpha.col(0);

  const double r = out.gap;
  const double factor = 0.5 + 4.0 * std::sqrt(2.0) / r;
  std::ostringstream ctx;
  ctx << "stability N=" << n << " r=" << r << " ||T-T~||=" << out.t_error;
  const double lhs1 = (a_exact - a_unit).norm();
  const double lhs2 = (exact.alpha.col(0) - a_coef).norm() / std::sqrt(static_cast<double>(n));
  double lhs3 = 0.0;
  if (test_points.rows() > 0) {
    const Vector f = project_all(exact, test_points, View::First).col(0);
    KccaModel aligned = approx;
    aligned.kernel1 = exact.kernel1;
    aligned.train1 = exact.train1;
    const Vector g = out.sign * project_all(aligned, test_points, View::First).col(0);
    lhs3 = (f - g).cwiseAbs().maxCoeff();
  }
  const double rhs1 = 4.0 * std::sqrt(2.0) / r * out.t_error;
  const double rhs2 = factor * out.epsilon / (static_cast<double>(n) * lambda1);
  const double rhs3 = factor * opt.c * out.epsilon / lambda1;

  out.applicable = r > 0.0 && out.t_error <= 0.5 * r;
  if (out.applicable) {
    out.coefficients_unit = make_report(ctx.str() + " step1", lhs1, rhs1);
    out.coefficients = make_report(ctx.str() + " step2", lhs2, rhs2);
    out.projection = make_report(ctx.str() + " step3", lhs3, rhs3);
  } else {
    const std::string why = r > 0.0 ? " (||T-T~||>r/2)" : " (no gap)";
    out.coefficients_unit = not_applicable(ctx.str() + " step1" + why, lhs1, rhs1);
    out.coefficients = not_applicable(ctx.str() + " step2" + why, lhs2, rhs2);
    out.projection = not_applicable(ctx.str() + " step3" + why, lhs3, rhs3);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ||T - T~|| at scale
// ---------------------------------------------------------------------------

/// ||T - Q1 That Q2^T|| for a family of nested bases Q (prefixes of the
/// final ones). T lives in span(U1) x span(U2), the retained eigenvectors of
/// the centered kernels, so the difference is represented exactly in the
/// orthonormal basis [U, W], W spanning the part of Q outside span(U).
class TErrorNorm {
 public:
  TErrorNorm(const ExactKcca& exact, const Matrix& q1, const Matrix& q2) {
    const Matrix u1 = kept_basis(exact, View::First, phi1_);
    const Matrix u2 = kept_basis(exact, View::Second, phi2_);
    core_ = phi1_.asDiagonal() * (u1.transpose() * u2) * phi2_.asDiagonal();
    coords1_ = coordinates(u1, q1);
    coords2_ = coordinates(u2, q2);
    k1_ = u1.cols();
    k2_ = u2.cols();
  }

  /// That must be r1 x r2 with r_v not exceeding the final basis sizes.
  double operator()(const Matrix& t_hat) const {
    const Index r1 = t_hat.rows(), r2 = t_hat.cols();
    detail::require(r1 <= coords1_.cols() && r2 <= coords2_.cols(), "TErrorNorm: That exceeds the basis");
    Matrix diff = Matrix::Zero(k1_ + r1, k2_ + r2);
    diff.topLeftCorner(k1_, k2_) = core_;
    if (r1 > 0 && r2 > 0) {
      const Matrix x1 = prefix(coords1_, k1_, r1);
      const Matrix x2 = prefix(coords2_, k2_, r2);
      diff -= x1 * t_hat * x2.transpose();
    }
    return linalg::spectral_norm(diff);
  }

 private:
  static Matrix kept_basis(const ExactKcca& ex, View view, Vector& phi) {
    const auto& eig = view == View::First ? ex.eig1 : ex.eig2;
    const double nl = static_cast<double>(ex.n()) * (view == View::First ? ex.model.lambda1 : ex.model.lambda2);
    std::vector<Index> idx;
    for (Index j = 0; j < eig.values.size(); ++j) {
      const double s = std::max(eig.values(j), 0.0);
      if (s / (s + nl) > ex.phi_floor) idx.push_back(j);
    }
    Matrix basis(ex.n(), static_cast<Index>(idx.size()));
    phi.resize(basis.cols());
    for (Index c = 0; c < basis.cols(); ++c) {
      const Index j = idx[static_cast<std::size_t>(c)];
      const double s = std::max(eig.values(j), 0.0);
      basis.col(c) = eig.vectors.col(j);
      phi(c) = s / (s + nl);
    }
    return basis;
  }

  /// Rows 0..k-1: U^T Q; rows k..k+r-1: the triangular factor of the
  /// residual of Q against U. Column-nested, so prefixes stay valid.
  static Matrix coordinates(const Matrix& u, const Matrix& q) {
    const Index k = u.cols(), r = q.cols();
    Matrix out = Matrix::Zero(k + r, r);
    if (r == 0) return out;
    Matrix x = u.transpose() * q;
    Matrix resid = q - u * x;
    const Matrix again = u.transpose() * resid;
    resid -= u * again;
    x += again;
    Eigen::HouseholderQR<Matrix> qr(resid);
    out.topRows(k) = x;
    out.bottomRows(r) = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    return out;
  }

  static Matrix prefix(const Matrix& coords, Index k, Index r) {
    Matrix x(k + r, r);
    x.topRows(k) = coords.topLeftCorner(k, r);
    x.bottomRows(r) = coords.block(k, 0, r, r);
    return x;
  }

  Vector phi1_, phi2_;
  Matrix core_;
  Matrix coords1_, coords2_;
  Index k1_ = 0, k2_ = 0;
};

}  // namespace nkcca
