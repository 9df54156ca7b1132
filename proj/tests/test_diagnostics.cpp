#include <nkcca/datasets.hpp>
#include <nkcca/diagnostics.hpp>
#include <nkcca/leverage.hpp>

#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace nkcca;
using nkcca::testing::gaussian_matrix;
using nkcca::testing::max_abs;
using nkcca::testing::random_gram;

namespace {

Matrix dense_standard_nystrom(const Matrix& k, const Matrix& s) {
  const Matrix w = s.transpose() * k * s;
  return k * s * Eigen::CompleteOrthogonalDecomposition<Matrix>(w).pseudoInverse() * s.transpose() * k;
}

/// Phi - Phi^{1/2} U^T S S^T U Phi^{1/2}, assembled term by term.
Matrix brute_force_d(const Matrix& k, const Matrix& s, double gamma) {
  const Index n = k.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es(k);
  Matrix root_phi = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const double w = std::max(es.eigenvalues()(i), 0.0);
    root_phi(i, i) = std::sqrt(w / (w + static_cast<double>(n) * gamma));
  }
  const Matrix u = es.eigenvectors();
  return root_phi * root_phi - root_phi * u.transpose() * s * s.transpose() * u * root_phi;
}

double spectral(const Matrix& a) { return Eigen::JacobiSVD<Matrix>(a).singularValues()(0); }

GramMatrix synthetic_kernel(Index n, std::uint64_t seed, double sigma, int view = 1) {
  const PairedDataset d = synthetic_circles(n, seed);
  return gram(KernelSpec::rbf(sigma), view == 1 ? d.x : d.y);
}

}  // namespace

TEST(BoundReport, HoldsWithRelativeSlack) {
  EXPECT_TRUE(bound_holds(1.0, 1.0));
  EXPECT_TRUE(bound_holds(1.0 + 1e-9, 1.0));
  EXPECT_FALSE(bound_holds(1.0 + 1e-6, 1.0));
  EXPECT_TRUE(bound_holds(0.0, 0.0));
  const BoundReport na = not_applicable("x", 0.0, 1.0);
  EXPECT_FALSE(na.applicable);
  EXPECT_FALSE(na.holds);
}

TEST(BoundReport, CsvEscapesSeparators) {
  std::ostringstream os;
  write_reports_csv(os, {make_report("a,b", 0.5, 1.0), not_applicable("c\nd", 2.0, 1.0)});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "context,lhs,rhs,holds,applicable");
  std::getline(is, line);
  EXPECT_EQ(line, "a;b,0.5,1,1,1");
  std::getline(is, line);
  EXPECT_EQ(line, "c;d,2,1,0,0");
}

TEST(DenseNystrom, MatchesPseudoinverseFormula) {
  const GramMatrix k = random_gram(14, 9, 3);
  const SamplingPlan plan = sample(uniform_distribution(14), 6, 11);
  const Matrix s = sampling_matrix(plan, 14);
  const Matrix expected = dense_standard_nystrom(k.entries(), s);
  EXPECT_LT(max_abs(dense::nystrom(k, plan, 0.0) - expected), 1e-9 * max_abs(expected));
  // Ridge form C (S^T K S + N gamma I)^{-1} C^T.
  const double gamma = 0.05;
  const Matrix c = k.entries() * s;
  const Matrix reg = s.transpose() * k.entries() * s + 14.0 * gamma * Matrix::Identity(6, 6);
  const Matrix lg = c * reg.ldlt().solve(c.transpose());
  EXPECT_LT(max_abs(dense::nystrom(k, plan, gamma) - lg), 1e-9 * max_abs(lg));
}

TEST(DMatrixNorm, FullPlanIsZero) {
  const GramMatrix k = random_gram(12, 12, 1);
  EXPECT_LT(d_matrix_norm(k, full_plan(12), 0.1), 1e-12);
}

TEST(DMatrixNorm, EmptyPlanIsTopShrinkage) {
  const GramMatrix k = random_gram(10, 4, 2);
  const double gamma = 0.3;
  const double top = Eigen::SelfAdjointEigenSolver<Matrix>(k.entries()).eigenvalues().maxCoeff();
  EXPECT_NEAR(d_matrix_norm(k, explicit_plan(10, {}, {}), gamma), top / (top + 10.0 * gamma), 1e-12);
}

TEST(DMatrixNorm, MatchesBruteForceAssembly) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const GramMatrix k = random_gram(10, 10, seed);
    const SamplingPlan plan = sample(uniform_distribution(10), 6, seed + 100);
    const double gamma = 0.05;
    const double expected = spectral(brute_force_d(k.entries(), sampling_matrix(plan, 10), gamma));
    EXPECT_NEAR(d_matrix_norm(k, plan, gamma), expected, 1e-10 * std::max(1.0, expected)) << "seed " << seed;
  }
}

TEST(PsdOrdering, ZeroGammaLeavesNoMiddleGap) {
  const GramMatrix k = random_gram(12, 12, 4);
  const SamplingPlan plan = sample(uniform_distribution(12), 6, 5);
  EXPECT_EQ(max_abs(dense::nystrom(k, plan, 0.0) - dense::nystrom(k, plan, 0.0)), 0.0);
  const BoundReport r = psd_ordering_check(k, plan, 0.0);
  EXPECT_TRUE(r.holds) << r.lhs << " > " << r.rhs;
}

TEST(PsdOrdering, FullSamplingReproducesKernel) {
  const GramMatrix k = random_gram(12, 12, 6);
  const Matrix l = dense::nystrom(k, full_plan(12), 0.0);
  EXPECT_LT(max_abs(k.entries() - l), 1e-9 * max_abs(k.entries()));
  EXPECT_TRUE(psd_ordering_check(k, full_plan(12), 0.1).holds);
}

TEST(PsdOrdering, RandomInstances) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const GramMatrix k = random_gram(12, 3 + static_cast<Index>(seed % 10), seed);
    const SamplingPlan plan = sample(uniform_distribution(12), 6, seed + 7);
    const BoundReport r = psd_ordering_check(k, plan, 0.1);
    EXPECT_TRUE(r.holds) << r.context << ": " << r.lhs << " > " << r.rhs;
  }
}

TEST(Lemma1Tail, HoldsWhenGated) {
  int gated = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const GramMatrix k = synthetic_kernel(30, seed, 2.0);
    const double gamma = 5e-2;
    const SamplingPlan plan = sample(make_distribution(exact_leverage(k, gamma), 0.0), 20, seed);
    const double t = std::min(0.999, std::max(0.05, d_matrix_norm(k, plan, gamma)));
    const BoundReport r = lemma1_tail_check(k, plan, gamma, t);
    if (!r.applicable) continue;
    ++gated;
    EXPECT_TRUE(r.holds) << r.context << ": " << r.lhs << " > " << r.rhs;
  }
  EXPECT_GE(gated, 10);
}

TEST(Lemma2, FullSamplingHasZeroError) {
  const GramMatrix k = synthetic_kernel(25, 3, 0.5);
  const Lemma2Report r = lemma2_check(k, full_plan(25), 1e-3, 1e-2, 0.5);
  EXPECT_LT(r.err_l, 1e-9);
  EXPECT_LT(r.err_l_centered, 1e-9);
  EXPECT_TRUE(r.bound.applicable);
  EXPECT_TRUE(r.bound.holds);
  // The ridge shrinkage keeps L_gamma away from K even with every column.
  EXPECT_GT(r.err_lg, 0.0);
}

TEST(Lemma2, ShrinkingGammaShrinksBothSides) {
  const GramMatrix k = synthetic_kernel(25, 4, 0.5);
  const double lambda = 1e-2;
  double previous = std::numeric_limits<double>::infinity();
  for (double gamma : {1e-3, 1e-5, 1e-7}) {
    const Lemma2Report r = lemma2_check(k, full_plan(25), gamma, lambda, 0.5);
    EXPECT_LE(r.err_lg, previous);
    EXPECT_LE(r.bound.lhs, r.bound.rhs);
    previous = r.err_lg;
  }
  EXPECT_LT(previous, 1e-4);
}

TEST(Lemma2, SyntheticHalfSamplingAcrossSeeds) {
  // Wide kernel and strong ridge keep d_eff below M so the gate can pass.
  const double lambda = 1e-1, gamma = lambda / 2.0;
  int gated = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const GramMatrix k = synthetic_kernel(30, seed, 2.0);
    const SamplingPlan plan = sample(make_distribution(exact_leverage(k, gamma), 0.0), 15, seed + 50);
    const double d = d_matrix_norm(k, plan, gamma);
    const double t = std::min(0.999, std::max(1e-6, d));
    const Lemma2Report r = lemma2_check(k, plan, gamma, lambda, t);
    if (!r.bound.applicable) {
      EXPECT_GT(d, t);
      continue;
    }
    ++gated;
    EXPECT_TRUE(r.bound.holds) << r.bound.context << ": " << r.bound.lhs << " > " << r.bound.rhs;
    for (const auto& step : r.steps) EXPECT_TRUE(step.holds) << step.context << ": " << step.lhs << " > " << step.rhs;
  }
  EXPECT_GE(gated, 10);
}

TEST(Lemma2, GateReportsNotApplicable) {
  const GramMatrix k = synthetic_kernel(20, 5, 0.3);
  const SamplingPlan plan = explicit_plan(20, {0}, {1.0});
  const Lemma2Report r = lemma2_check(k, plan, 1e-4, 1e-3, 0.01);
  EXPECT_GT(r.d_norm, 0.01);
  EXPECT_FALSE(r.bound.applicable);
  EXPECT_FALSE(r.bound.holds);
}

TEST(Theorem1, FullSamplingHasZeroError) {
  const PairedDataset d = synthetic_circles(30, 2);
  const GramMatrix k1 = gram(KernelSpec::rbf(0.5), d.x), k2 = gram(KernelSpec::rbf(0.5), d.y);
  const Theorem1Report r =
      theorem1_check(k1, k2, full_plan(30), full_plan(30), 1e-2, 1e-2, 1e-3, 1e-3, 0.5, 0.5);
  EXPECT_LT(std::abs(r.rho - r.rho_tilde), 1e-9);
  EXPECT_LT(r.t_error, 1e-9);
  EXPECT_TRUE(r.bound.holds);
  EXPECT_NEAR(r.epsilon, 2.0 * 1e-3 / (1e-2 * 0.5), 1e-15);
}

TEST(Theorem1, WeylAndChainOnRandomInstances) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const PairedDataset d = synthetic_circles(30, seed);
    const GramMatrix k1 = gram(KernelSpec::rbf(0.5), d.x), k2 = gram(KernelSpec::rbf(0.8), d.y);
    const SamplingPlan p1 = sample(uniform_distribution(30), 8, seed * 2);
    const SamplingPlan p2 = sample(uniform_distribution(30), 12, seed * 2 + 1);
    const Theorem1Report r = theorem1_check(k1, k2, p1, p2, 1e-2, 2e-2, 1e-3, 1e-3, 0.5, 0.5);
    EXPECT_TRUE(r.weyl.holds) << r.weyl.lhs << " > " << r.weyl.rhs;
    EXPECT_TRUE(r.chain.holds) << r.chain.lhs << " > " << r.chain.rhs;
    if (r.bound.applicable) {
      EXPECT_TRUE(r.bound.holds) << r.bound.lhs << " > " << r.bound.rhs;
    }
  }
}

TEST(Theorem1, SwappingViewsPreservesTError) {
  const PairedDataset d = synthetic_circles(25, 9);
  const GramMatrix k1 = gram(KernelSpec::rbf(0.5), d.x), k2 = gram(KernelSpec::rbf(1.0), d.y);
  const SamplingPlan p1 = sample(uniform_distribution(25), 7, 1), p2 = sample(uniform_distribution(25), 9, 2);
  const Theorem1Report a = theorem1_check(k1, k2, p1, p2, 1e-2, 3e-2, 1e-3, 2e-3, 0.4, 0.6);
  const Theorem1Report b = theorem1_check(k2, k1, p2, p1, 3e-2, 1e-2, 2e-3, 1e-3, 0.6, 0.4);
  EXPECT_NEAR(a.t_error, b.t_error, 1e-10);
  EXPECT_NEAR(a.rho, b.rho, 1e-10);
  EXPECT_NEAR(a.view1_term, b.view2_term, 1e-10);
  EXPECT_NEAR(a.d1, b.d2, 1e-10);
}

TEST(Diagnostics, DenseLimitIsEnforced) {
  const GramMatrix k = random_gram(12, 4, 1);
  DiagnosticOptions opt;
  opt.max_n = 10;
  EXPECT_THROW(psd_ordering_check(k, full_plan(12), 0.1, opt), ConfigError);
  EXPECT_THROW(d_matrix_norm(k, full_plan(12), 0.1, opt), ConfigError);
}

namespace {

struct StabilityFixture {
  PairedDataset data;
  std::shared_ptr<const Matrix> x, y;
  KernelSpec spec;
  GramMatrix k1, k2;
  ExactKcca exact;
};

StabilityFixture stability_fixture(Index n, double sigma, double lambda, Index dims = 1) {
  StabilityFixture f;
  f.data = synthetic_circles(n, 0);
  f.x = std::make_shared<const Matrix>(f.data.x);
  f.y = std::make_shared<const Matrix>(f.data.y);
  f.spec = KernelSpec::rbf(sigma);
  f.k1 = gram(f.spec, f.data.x);
  f.k2 = gram(f.spec, f.data.y);
  f.exact = exact_kcca_full(f.k1, f.k2, lambda, lambda, dims);
  attach_training(f.exact.model, f.spec, f.x, f.spec, f.y);
  return f;
}

}  // namespace

TEST(Stability, IdenticalModelsHaveZeroError) {
  const StabilityFixture f = stability_fixture(40, 1.0, 1e-2);
  const StabilityReport r = stability_check(f.exact.model, f.exact.model, f.data.x.topRows(5));
  ASSERT_TRUE(r.applicable);
  EXPECT_LT(r.t_error, 1e-12);
  EXPECT_LT(r.coefficients_unit.lhs, 1e-12);
  EXPECT_LT(r.coefficients.lhs, 1e-12);
  EXPECT_LT(r.projection.lhs, 1e-12);
  EXPECT_TRUE(r.all_hold());
  EXPECT_NEAR(r.gap, f.exact.gap(), 1e-10);
}

TEST(Stability, SignOfApproximationIsAligned) {
  const StabilityFixture f = stability_fixture(40, 1.0, 1e-2);
  KccaModel flipped = f.exact.model;
  flipped.alpha_prime *= -1.0;
  flipped.beta_prime *= -1.0;
  flipped.alpha *= -1.0;
  flipped.beta *= -1.0;
  const StabilityReport r = stability_check(f.exact.model, flipped, f.data.x.topRows(5));
  EXPECT_EQ(r.sign, -1.0);
  EXPECT_LT(r.coefficients_unit.lhs, 1e-12);
  EXPECT_LT(r.projection.lhs, 1e-12);
}

TEST(Stability, RidgeSamplingAcrossSeeds) {
  const Index n = 200, m = 150;
  const double lambda = 1e-3;
  const StabilityFixture f = stability_fixture(n, 1.0, lambda);
  const SamplingDistribution d1 = make_distribution(exact_leverage(f.k1, lambda), 0.0);
  const SamplingDistribution d2 = make_distribution(exact_leverage(f.k2, lambda), 0.0);
  const DataColumns o1(f.spec, f.x), o2(f.spec, f.y);
  const PairedDataset probe = synthetic_circles(50, 99);
  int applicable = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const SamplingPlan p1 = sample(d1, m, seed * 2), p2 = sample(d2, m, seed * 2 + 1);
    const RankPathEntry approx = nkcca_fresh(o1, o2, p1, p2, lambda, lambda, m);
    const StabilityReport r = stability_check(f.exact.model, approx.model, probe.x);
    if (!r.applicable) {
      EXPECT_FALSE(r.coefficients.applicable);
      EXPECT_FALSE(r.all_hold());
      continue;
    }
    ++applicable;
    EXPECT_TRUE(r.coefficients_unit.holds) << r.coefficients_unit.context;
    EXPECT_TRUE(r.coefficients.holds) << r.coefficients.context;
    EXPECT_TRUE(r.projection.holds) << r.projection.context;
  }
  EXPECT_GE(applicable, 15);
}

TEST(Stability, NotApplicableWhenPerturbationExceedsHalfGap) {
  const StabilityFixture f = stability_fixture(100, 0.5, 1e-3);
  const DataColumns o1(f.spec, f.x), o2(f.spec, f.y);
  const SamplingPlan p1 = sample(uniform_distribution(100), 5, 1), p2 = sample(uniform_distribution(100), 5, 2);
  const RankPathEntry approx = nkcca_fresh(o1, o2, p1, p2, 1e-3, 1e-3, 5);
  const StabilityReport r = stability_check(f.exact.model, approx.model, Matrix(0, 2));
  EXPECT_GT(r.t_error, 0.5 * r.gap);
  EXPECT_FALSE(r.applicable);
  EXPECT_FALSE(r.coefficients_unit.holds);
  EXPECT_FALSE(r.projection.applicable);
}

TEST(TErrorNormTest, MatchesDenseDifferenceOnPrefixes) {
  const Index n = 60;
  const PairedDataset d = synthetic_circles(n, 4);
  auto x = std::make_shared<const Matrix>(d.x), y = std::make_shared<const Matrix>(d.y);
  const KernelSpec spec = KernelSpec::rbf(0.7);
  const GramMatrix k1 = gram(spec, d.x), k2 = gram(spec, d.y);
  const double lambda = 1e-2;
  const ExactKcca exact = exact_kcca_full(k1, k2, lambda, lambda, 1);
  const SamplingPlan p1 = sample(uniform_distribution(n), 30, 7), p2 = sample(uniform_distribution(n), 30, 8);
  const DataColumns o1(spec, x), o2(spec, y);
  NkccaSolver<DataColumns, DataColumns> solver(o1, o2, lambda, lambda);
  std::vector<std::pair<Index, Matrix>> snapshots;
  for (Index j = 0; j < 30; ++j) {
    solver.add(View::First, p1.indices[static_cast<std::size_t>(j)], detail::unscaled_weight(p1, j));
    solver.add(View::Second, p2.indices[static_cast<std::size_t>(j)], detail::unscaled_weight(p2, j));
    if ((j + 1) % 10 == 0) snapshots.emplace_back(j + 1, solver.t_hat());
  }
  const TErrorNorm norm(exact, solver.qr(View::First).q(), solver.qr(View::Second).q());
  const Matrix t = exact.dense_t();
  for (const auto& [m, t_hat] : snapshots) {
    const Matrix l1 = dense::nystrom(k1, p1.prefix(m), 0.0), l2 = dense::nystrom(k2, p2.prefix(m), 0.0);
    const Matrix t_tilde = dense::t_matrix(dense::centered(l1), dense::centered(l2), lambda, lambda);
    EXPECT_NEAR(norm(t_hat), spectral(t - t_tilde), 1e-8) << "M " << m;
  }
}

TEST(Stability, WeightsOfApproximationDoNotMatter) {
  const StabilityFixture f = stability_fixture(60, 1.0, 1e-2);
  const DataColumns o1(f.spec, f.x), o2(f.spec, f.y);
  const SamplingPlan p1 = sample(uniform_distribution(60), 40, 3), p2 = sample(uniform_distribution(60), 40, 4);
  RankPathEntry approx = nkcca_fresh(o1, o2, p1, p2, 1e-2, 1e-2, 40);
  const StabilityReport a = stability_check(f.exact.model, approx.model, Matrix(0, 2));
  for (double& w : approx.model.landmark_weights1) w *= 3.0;
  const StabilityReport b = stability_check(f.exact.model, approx.model, Matrix(0, 2));
  EXPECT_NEAR(a.t_error, b.t_error, 1e-9);
  EXPECT_NEAR(a.view1_term, b.view1_term, 1e-9);
}

TEST(Diagnostics, RandomGaussianInputsProduceFiniteReports) {
  const Matrix pts = gaussian_matrix(20, 3, 5);
  const GramMatrix k = gram(KernelSpec::rbf(1.5), pts);
  const SamplingPlan plan = sample(uniform_distribution(20), 10, 1);
  const Lemma2Report r = lemma2_check(k, plan, 1e-3, 1e-2, 0.9);
  EXPECT_TRUE(std::isfinite(r.bound.lhs));
  EXPECT_TRUE(std::isfinite(r.d_norm));
}
