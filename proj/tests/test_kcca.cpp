#include <nkcca/datasets.hpp>
#include <nkcca/io.hpp>
#include <nkcca/kcca.hpp>

#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace nkcca;
using nkcca::testing::dense_center;
using nkcca::testing::max_abs;

namespace {

struct TwoViews {
  std::shared_ptr<const Matrix> x, y;
  GramMatrix k1, k2;
  KernelSpec s1, s2;
};

TwoViews two_views(Index n, std::uint64_t seed, double sigma1 = 1.0, double sigma2 = 1.0) {
  const PairedDataset d = synthetic_circles(n, seed);
  TwoViews v;
  v.x = std::make_shared<const Matrix>(d.x);
  v.y = std::make_shared<const Matrix>(d.y);
  v.s1 = KernelSpec::rbf(sigma1);
  v.s2 = KernelSpec::rbf(sigma2);
  v.k1 = gram(v.s1, d.x);
  v.k2 = gram(v.s2, d.y);
  return v;
}

/// A (A + N lambda I)^{-1} by a dense solve.
Matrix dense_projector(const Matrix& a, double lambda) {
  const Index n = a.rows();
  const Matrix reg = a + static_cast<double>(n) * lambda * Matrix::Identity(n, n);
  return reg.ldlt().solve(a).transpose();
}

Matrix dense_t(const Matrix& k1, const Matrix& k2, double l1, double l2) {
  return dense_projector(dense_center(k1), l1) * dense_projector(dense_center(k2), l2);
}

/// Standard Nystrom K S (S^T K S)^+ S^T K through a complete orthogonal decomposition.
Matrix dense_standard_nystrom(const Matrix& k, const std::vector<Index>& idx) {
  const Index n = k.rows();
  Matrix s = Matrix::Zero(n, static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) s(idx[j], static_cast<Index>(j)) = 1.0;
  const Matrix w = s.transpose() * k * s;
  return k * s * Eigen::CompleteOrthogonalDecomposition<Matrix>(w).pseudoInverse() * s.transpose() * k;
}

Vector top_singular_values(const Matrix& t, Index l) {
  return Eigen::JacobiSVD<Matrix>(t).singularValues().head(l);
}

}  // namespace

TEST(ExactKcca, SameKernelBothViews) {
  const TwoViews v = two_views(40, 3);
  const double lambda = 0.01;
  const KccaModel m = exact_kcca(v.k1, v.k1, lambda, lambda, 1);
  const Vector w = Eigen::SelfAdjointEigenSolver<Matrix>(center(v.k1).entries()).eigenvalues();
  const double top = w(w.size() - 1);
  ASSERT_GT(top - w(w.size() - 2), 1e-6);
  const double expected = std::pow(top / (top + 40 * lambda), 2);
  EXPECT_NEAR(m.rho(0), expected, 1e-10);
}

TEST(ExactKcca, LargeRegularizationDrivesCorrelationToZero) {
  const TwoViews v = two_views(30, 4);
  const KccaModel m = exact_kcca(v.k1, v.k2, 1e8, 1e8, 3);
  EXPECT_LT(m.rho.maxCoeff(), 1e-8);
}

TEST(ExactKcca, MatchesBlockEigenproblem) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix x = nkcca::testing::gaussian_matrix(6, 2, seed);
    const Matrix y = nkcca::testing::gaussian_matrix(6, 3, seed + 50);
    const GramMatrix k1 = gram(KernelSpec::rbf(1.0), x), k2 = gram(KernelSpec::rbf(1.5), y);
    const double l1 = 0.02, l2 = 0.05;
    const Matrix t = dense_t(k1.entries(), k2.entries(), l1, l2);
    Matrix block = Matrix::Zero(12, 12);
    block.topRightCorner(6, 6) = t;
    block.bottomLeftCorner(6, 6) = t.transpose();
    const Vector eig = Eigen::EigenSolver<Matrix>(block).eigenvalues().real();
    std::vector<double> sorted(eig.data(), eig.data() + eig.size());
    std::sort(sorted.rbegin(), sorted.rend());
    const KccaModel m = exact_kcca(k1, k2, l1, l2, 3);
    for (Index l = 0; l < 3; ++l) EXPECT_NEAR(m.rho(l), sorted[static_cast<std::size_t>(l)], 1e-10) << "seed " << seed;
    // The singular vectors solve the block system.
    Vector stacked(12);
    stacked << m.alpha_prime.col(0), m.beta_prime.col(0);
    EXPECT_LT((block * stacked - m.rho(0) * stacked).norm(), 1e-9);
  }
}

TEST(ExactKcca, ModelInvariants) {
  const TwoViews v = two_views(60, 5);
  const double l1 = 1e-3, l2 = 2e-3;
  const KccaModel m = exact_kcca(v.k1, v.k2, l1, l2, 4);
  ASSERT_EQ(m.rho.size(), 4);
  for (Index l = 0; l < 4; ++l) {
    EXPECT_NEAR(m.alpha_prime.col(l).norm(), 1.0, 1e-8);
    EXPECT_NEAR(m.beta_prime.col(l).norm(), 1.0, 1e-8);
    if (l > 0) {
      EXPECT_LE(m.rho(l), m.rho(l - 1));
    }
    EXPECT_GE(m.rho(l), 0.0);
    EXPECT_LE(m.rho(l), 1.0 + 1e-8);
  }
  EXPECT_NEAR(m.rho(0), top_singular_values(dense_t(v.k1.entries(), v.k2.entries(), l1, l2), 1)(0), 1e-9);
  const Matrix kb = center(v.k1).entries();
  const Matrix reg = kb + 60 * l1 * Matrix::Identity(60, 60);
  const Matrix alpha = std::sqrt(60.0) * reg.ldlt().solve(m.alpha_prime);
  EXPECT_LT(max_abs(alpha - m.alpha), 1e-8 * max_abs(alpha));
}

TEST(ExactKcca, SignConvention) {
  const TwoViews v = two_views(30, 6);
  const KccaModel m = exact_kcca(v.k1, v.k2, 1e-2, 1e-2, 2);
  for (Index l = 0; l < 2; ++l) {
    const double top = m.alpha_prime.col(l).cwiseAbs().maxCoeff();
    for (Index i = 0; i < 30; ++i)
      if (std::abs(m.alpha_prime(i, l)) > 1e-6 * top) {
        EXPECT_GT(m.alpha_prime(i, l), 0.0);
        break;
      }
  }
}

TEST(ExactKcca, RejectsBadArguments) {
  const TwoViews v = two_views(10, 7);
  EXPECT_THROW(exact_kcca(v.k1, v.k2, 0.0, 1.0, 1), ConfigError);
  EXPECT_THROW(exact_kcca(v.k1, v.k2, 1.0, 1.0, 11), ConfigError);
  EXPECT_THROW(exact_kcca(v.k1, v.k2, 1.0, 1.0, 0), ConfigError);
  ExactOptions small;
  small.max_dense_n = 5;
  EXPECT_THROW(exact_kcca(v.k1, v.k2, 1.0, 1.0, 1, small), ConfigError);
  EXPECT_THROW(exact_kcca(v.k1, two_views(11, 7).k2, 1.0, 1.0, 1), ConfigError);
}

TEST(Nkcca, FullSamplingReproducesExact) {
  for (Index n : {8, 15, 20}) {
    const TwoViews v = two_views(n, static_cast<std::uint64_t>(n));
    const double l1 = 1e-2, l2 = 5e-3;
    const KccaModel exact = exact_kcca(v.k1, v.k2, l1, l2, 4);
    NkccaOptions opt;
    opt.dims = 4;
    const auto path = nkcca_fit(DenseColumns(v.k1), DenseColumns(v.k2), full_plan(n), full_plan(n), l1, l2, {n}, opt);
    EXPECT_LT((path.back().model.rho - exact.rho).cwiseAbs().maxCoeff(), 1e-8) << "N " << n;
    // Coefficients through the factored inverse agree with the dense formula.
    const Matrix kb = center(v.k1).entries();
    const Matrix reg = kb + static_cast<double>(n) * l1 * Matrix::Identity(n, n);
    const Matrix alpha = std::sqrt(static_cast<double>(n)) * reg.ldlt().solve(path.back().model.alpha_prime);
    EXPECT_LT(max_abs(alpha - path.back().model.alpha), 1e-8 * max_abs(alpha));
  }
}

TEST(Nkcca, IncrementalMatchesRestart) {
  const TwoViews v = two_views(20, 8);
  const SamplingPlan p1 = sample(uniform_distribution(20), 4, 1), p2 = sample(uniform_distribution(20), 4, 2);
  const DenseColumns o1(v.k1), o2(v.k2);
  const auto path = nkcca_fit(o1, o2, p1, p2, 1e-2, 1e-2, {2, 4});
  ASSERT_EQ(path.size(), 2u);
  EXPECT_EQ(path[0].m1, 2);
  EXPECT_EQ(path[1].m1, 4);
  const RankPathEntry fresh = nkcca_fresh(o1, o2, p1, p2, 1e-2, 1e-2, 4);
  EXPECT_LT((path[1].model.rho - fresh.model.rho).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(linalg::max_principal_angle(path[1].model.alpha_prime, fresh.model.alpha_prime), 1e-6);
}

TEST(Nkcca, IncrementalMatchesIndependentDenseRoute) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TwoViews v = two_views(80, seed, 0.7, 0.9);
    const Index max_m = 40;
    const SamplingPlan p1 = sample(uniform_distribution(80), max_m, seed * 3);
    const SamplingPlan p2 = sample(uniform_distribution(80), max_m, seed * 3 + 1);
    NkccaOptions opt;
    opt.dims = 3;
    const DenseColumns o1(v.k1), o2(v.k2);
    const auto path = nkcca_fit(o1, o2, p1, p2, 1e-3, 1e-3, {10, 20, 30, 40}, opt);
    for (const auto& e : path) {
      const RankPathEntry dense = nkcca_dense(o1, o2, p1, p2, 1e-3, 1e-3, e.m1, opt);
      EXPECT_LT((e.model.rho - dense.model.rho).cwiseAbs().maxCoeff(), 1e-8) << "seed " << seed << " M " << e.m1;
      EXPECT_LT(linalg::max_principal_angle(e.model.alpha_prime, dense.model.alpha_prime), 1e-6);
      EXPECT_LT(linalg::max_principal_angle(e.model.beta_prime, dense.model.beta_prime), 1e-6);
    }
  }
}

TEST(Nkcca, SingleLandmarkMatchesDenseOracle) {
  const TwoViews v = two_views(25, 9);
  const double l1 = 1e-2, l2 = 2e-2;
  const SamplingPlan p1 = explicit_plan(25, {3}, {1.0}), p2 = explicit_plan(25, {17}, {1.0});
  const auto path = nkcca_fit(DenseColumns(v.k1), DenseColumns(v.k2), p1, p2, l1, l2, {1});
  const Matrix t = dense_t(dense_standard_nystrom(v.k1.entries(), {3}), dense_standard_nystrom(v.k2.entries(), {17}), l1, l2);
  EXPECT_NEAR(path[0].model.rho(0), top_singular_values(t, 1)(0), 1e-10);
  EXPECT_EQ(path[0].rank1, 1);
}

TEST(Nkcca, WeylConsistencyAgainstDenseOracle) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const TwoViews v = two_views(40, seed, 0.8, 0.8);
    const double lambda = 5e-3;
    const SamplingPlan p1 = sample(uniform_distribution(40), 12, seed);
    const SamplingPlan p2 = sample(uniform_distribution(40), 12, seed + 99);
    const auto path = nkcca_fit(DenseColumns(v.k1), DenseColumns(v.k2), p1, p2, lambda, lambda, {12});
    const KccaModel& m = path[0].model;
    const Matrix t = dense_t(v.k1.entries(), v.k2.entries(), lambda, lambda);
    const Matrix tt = dense_t(dense_standard_nystrom(v.k1.entries(), m.landmarks1),
                              dense_standard_nystrom(v.k2.entries(), m.landmarks2), lambda, lambda);
    const double rho = top_singular_values(t, 1)(0);
    EXPECT_NEAR(m.rho(0), top_singular_values(tt, 1)(0), 1e-8);
    EXPECT_LE(std::abs(rho - m.rho(0)), linalg::spectral_norm(t - tt) + 1e-8);
    EXPECT_GE(m.rho(0), 0.0);
    EXPECT_LE(m.rho(0), 1.0 + 1e-8);
  }
}

TEST(Nkcca, WeightScalingInvariance) {
  const TwoViews v = two_views(50, 10);
  const SamplingPlan p1 = sample(uniform_distribution(50), 15, 1), p2 = sample(uniform_distribution(50), 15, 2);
  std::vector<double> scaled = p1.weights;
  for (double& w : scaled) w *= 7.5;
  const SamplingPlan p1s = explicit_plan(50, p1.indices, scaled);
  NkccaOptions opt;
  opt.dims = 2;
  const auto a = nkcca_fit(DenseColumns(v.k1), DenseColumns(v.k2), p1, p2, 1e-2, 1e-2, {15}, opt);
  const auto b = nkcca_fit(DenseColumns(v.k1), DenseColumns(v.k2), p1s, p2, 1e-2, 1e-2, {15}, opt);
  EXPECT_LT((a[0].model.rho - b[0].model.rho).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(linalg::max_principal_angle(a[0].model.alpha_prime, b[0].model.alpha_prime), 1e-7);
}

TEST(Nkcca, DuplicatesAreSkipped) {
  const TwoViews v = two_views(20, 11);
  const SamplingPlan p = explicit_plan(20, {4, 4, 9, 4}, {1.0, 1.0, 1.0, 1.0});
  const auto path = nkcca_fit(DenseColumns(v.k1), DenseColumns(v.k2), p, p, 1e-2, 1e-2, {4});
  EXPECT_EQ(path[0].rank1, 2);
  EXPECT_EQ(path[0].model.landmarks1, (std::vector<Index>{4, 9}));
}

TEST(Nkcca, RejectsBadCheckpoints) {
  const TwoViews v = two_views(10, 12);
  const SamplingPlan p = sample(uniform_distribution(10), 5, 1);
  const DenseColumns o1(v.k1), o2(v.k2);
  EXPECT_THROW(nkcca_fit(o1, o2, p, p, 1e-2, 1e-2, {3, 2}), ConfigError);
  EXPECT_THROW(nkcca_fit(o1, o2, p, p, 1e-2, 1e-2, {6}), ConfigError);
  EXPECT_THROW(nkcca_fit(o1, o2, p, p, 0.0, 1e-2, {2}), ConfigError);
}

TEST(NkccaCoefficients, EmptyFactorScalesByRidge) {
  const CholState empty(9, 0.25);
  const Vector v = nkcca::testing::gaussian_matrix(9, 1, 3).col(0);
  EXPECT_LT((nkcca_coefficients(empty, v) - v / (3.0 * 0.25)).norm(), 1e-14);
}

TEST(NkccaCoefficients, DirectionOrthogonalToLandmarkColumns) {
  const Matrix k = nkcca::testing::random_psd(12, 12, 4);
  const DenseColumns oracle{GramMatrix(k)};
  CholState state(12, 0.1);
  for (Index i : {1, 5, 7}) state.step(oracle, i, 1.0);
  Vector v = nkcca::testing::gaussian_matrix(12, 1, 8).col(0);
  const Matrix a = state.a();
  v -= a * a.colPivHouseholderQr().solve(v);
  ASSERT_LT((a.transpose() * v).norm(), 1e-10 * v.norm());
  const double lambda = 0.1, n = 12;
  EXPECT_LT((nkcca_coefficients(state, v) - v / (std::sqrt(n) * lambda)).norm(), 1e-10 * v.norm());
}

TEST(Projection, TrainingPointsMatchCenteredGramUpToConstant) {
  const TwoViews v = two_views(30, 13);
  KccaModel m = exact_kcca(v.k1, v.k2, 1e-2, 1e-2, 2);
  attach_training(m, v.s1, v.x, v.s2, v.y);
  const Matrix proj = project_all(m, *v.x, View::First);
  const Matrix oracle = center(v.k1).entries() * m.alpha;
  for (Index l = 0; l < 2; ++l) {
    const Vector diff = proj.col(l) - oracle.col(l);
    EXPECT_LT((diff.array() - diff.mean()).abs().maxCoeff(), 1e-10 * oracle.col(l).cwiseAbs().maxCoeff());
  }
  const Vector single = project(m, v.x->row(4).transpose(), View::First);
  EXPECT_LT((single - proj.row(4).transpose()).norm(), 1e-12);
}

TEST(Projection, ZeroCoefficientsGiveZero) {
  const TwoViews v = two_views(10, 14);
  KccaModel m = exact_kcca(v.k1, v.k2, 1e-2, 1e-2, 1);
  attach_training(m, v.s1, v.x, v.s2, v.y);
  m.alpha.setZero();
  EXPECT_EQ(project_all(m, *v.x, View::First), Matrix::Zero(10, 1));
}

TEST(Projection, UnitProbeGivesCenteredAffinity) {
  const TwoViews v = two_views(10, 15);
  KccaModel m = exact_kcca(v.k1, v.k2, 1e-2, 1e-2, 1);
  attach_training(m, v.s1, v.x, v.s2, v.y);
  m.alpha = Matrix::Zero(10, 1);
  m.alpha(6, 0) = 1.0;
  Vector x(2);
  x << 0.3, -0.2;
  double mean = 0.0;
  for (Index i = 0; i < 10; ++i) mean += kernel_eval(v.s1, x, v.x->row(i).transpose()) / 10.0;
  const double expected = kernel_eval(v.s1, x, v.x->row(6).transpose()) - mean;
  EXPECT_NEAR(project(m, x, View::First)(0), expected, 1e-14);
}

TEST(Projection, Errors) {
  const TwoViews v = two_views(10, 16);
  KccaModel m = exact_kcca(v.k1, v.k2, 1e-2, 1e-2, 1);
  EXPECT_THROW(project_all(m, *v.x, View::First), ConfigError);
  attach_training(m, v.s1, v.x, v.s2, v.y);
  EXPECT_THROW(project_all(m, Matrix::Zero(3, 5), View::First), ConfigError);
}

TEST(TotalCorrelation, Examples) {
  const Matrix a = nkcca::testing::gaussian_matrix(50, 3, 1);
  EXPECT_NEAR(total_correlation(a, a), 3.0, 1e-12);
  EXPECT_NEAR(total_correlation(a.col(0), 2.0 * a.col(0)), 1.0, 1e-12);
  EXPECT_NEAR(total_correlation(a.col(0), -a.col(0)), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(total_correlation(a.col(0), Matrix::Constant(50, 1, 2.0)), 0.0);
  const Matrix b = nkcca::testing::gaussian_matrix(20000, 2, 2), c = nkcca::testing::gaussian_matrix(20000, 2, 3);
  EXPECT_LT(total_correlation(b, c), 2 * 4.0 / std::sqrt(20000.0));
  EXPECT_THROW(total_correlation(a.topRows(1), a.topRows(1)), ConfigError);
}

TEST(ModelRecord, RoundTrip) {
  const TwoViews v = two_views(25, 17);
  const SamplingPlan p = sample(uniform_distribution(25), 10, 4);
  NkccaOptions opt;
  opt.dims = 2;
  auto path = nkcca_fit(DataColumns(v.s1, v.x), DataColumns(v.s2, v.y), p, p, 1e-2, 1e-2, {10}, opt);
  const KccaModel& m = path[0].model;
  std::stringstream ss;
  write_model(ss, m);
  const KccaModel back = read_model(ss);
  EXPECT_EQ(back.dims, 2);
  EXPECT_EQ(back.landmarks1, m.landmarks1);
  EXPECT_LT(max_abs(back.alpha - m.alpha), 1e-15 * (1 + max_abs(m.alpha)) + 1e-300);
  EXPECT_EQ(back.rho, m.rho);
  ASSERT_TRUE(back.train1);
  const Matrix test = nkcca::testing::gaussian_matrix(5, 2, 9);
  EXPECT_EQ(project_all(back, test, View::Second), project_all(m, test, View::Second));
  std::stringstream bad("nkcca-model 9");
  EXPECT_THROW(read_model(bad), ConfigError);
}
