#pragma once

#include <nkcca/common.hpp>
#include <nkcca/kernels.hpp>
#include <nkcca/linalg.hpp>
#include <nkcca/random.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace nkcca {

/// Ridge leverage scores l_i = (K (K + N gamma I)^{-1})_ii and their sum.
struct LeverageScores {
  Vector scores;
  double gamma = 0.0;
  double d_eff = 0.0;
  bool exact = true;

  Index n() const { return scores.size(); }
};

/// Sampling probabilities with the assumed lower-bound factor beta.
struct SamplingDistribution {
  Vector p;
  double beta_floor = 1.0;

  Index n() const { return p.size(); }
};

namespace detail {

inline LeverageScores scores_from_eig(const linalg::SymEig& eig, double gamma, bool exact) {
  const Index n = eig.values.size();
  const double ridge = static_cast<double>(n) * gamma;
  const Vector phi = eig.values.unaryExpr([ridge](double w) {
    const double s = std::max(w, 0.0);
    return s / (s + ridge);
  });
  LeverageScores out;
  out.gamma = gamma;
  out.exact = exact;
  // Squared row norms of U Phi^{1/2}.
  out.scores = eig.vectors.array().square().matrix() * phi;
  out.scores = out.scores.cwiseMax(0.0).cwiseMin(1.0);
  out.d_eff = out.scores.sum();
  return out;
}

}  // namespace detail

inline LeverageScores exact_leverage(const GramMatrix& k, double gamma) {
  detail::require(gamma > 0.0 && std::isfinite(gamma), "exact_leverage: gamma must be > 0");
  return detail::scores_from_eig(linalg::sym_eig(k.entries()), gamma, true);
}

inline double effective_dimension(const GramMatrix& k, double gamma) {
  detail::require(gamma > 0.0 && std::isfinite(gamma), "effective_dimension: gamma must be > 0");
  const double ridge = static_cast<double>(k.n()) * gamma;
  const Vector w = linalg::sym_eigenvalues(k.entries());
  double total = 0.0;
  for (Index j = 0; j < w.size(); ++j) {
    const double s = std::max(w(j), 0.0);
    total += s / (s + ridge);
  }
  return total;
}

/// `count` distinct indices from [0, n), uniformly, by a partial Fisher-Yates
/// shuffle driven by a counter stream.
inline std::vector<Index> uniform_subset(Index n, Index count, std::uint64_t seed) {
  detail::require(count >= 0 && count <= n, "uniform_subset: count out of range");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  RandomStream rng(seed, 0x5ce7c4);
  for (Index i = 0; i < count; ++i) {
    const Index span = n - i;
    const Index j = i + std::min<Index>(span - 1, static_cast<Index>(rng.uniform() * span));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  perm.resize(static_cast<std::size_t>(count));
  return perm;
}

/// Leverage scores of the Nyström surrogate L = C W^+ C^T built from
/// `sketch_size` uniformly chosen columns:
///   l_i ~= (L (L + N gamma I)^{-1})_ii = z_i^T (Z^T Z + N gamma I)^{-1} z_i,
/// with Z = C W^{+1/2}. L is never formed. Since L <= K the estimates never
/// exceed the exact scores, and they coincide when every column is sketched.
template <class Oracle>
LeverageScores approx_leverage(const Oracle& oracle, double gamma, Index sketch_size,
                               std::uint64_t seed) {
  const Index n = oracle.n();
  detail::require(gamma > 0.0 && std::isfinite(gamma), "approx_leverage: gamma must be > 0");
  detail::require(sketch_size >= 1 && sketch_size <= n, "approx_leverage: sketch_size out of range");
  const std::vector<Index> idx = uniform_subset(n, sketch_size, seed);
  const Index m = sketch_size;
  Matrix c(n, m);
  for (Index j = 0; j < m; ++j) c.col(j) = oracle.column(idx[static_cast<std::size_t>(j)]);
  Matrix w(m, m);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < m; ++i) w(i, j) = c(idx[static_cast<std::size_t>(i)], j);
  w = 0.5 * (w + w.transpose()).eval();

  const linalg::SymEig eig = linalg::sym_eig(w);
  const double top = std::max(eig.values.maxCoeff(), 0.0);
  const double cut = 1e-12 * top;
  std::vector<Index> keep;
  for (Index j = 0; j < m; ++j)
    if (eig.values(j) > cut) keep.push_back(j);
  const Index r = static_cast<Index>(keep.size());

  LeverageScores out;
  out.gamma = gamma;
  out.exact = false;
  if (r == 0) {
    out.scores = Vector::Zero(n);
    out.d_eff = 0.0;
    return out;
  }
  Matrix basis(m, r);
  for (Index j = 0; j < r; ++j) {
    const Index src = keep[static_cast<std::size_t>(j)];
    basis.col(j) = eig.vectors.col(src) / std::sqrt(eig.values(src));
  }
  const Matrix z = c * basis;  // n x r
  Matrix inner = z.transpose() * z;
  inner.diagonal().array() += static_cast<double>(n) * gamma;
  const Eigen::LLT<Matrix> llt(inner);
  if (llt.info() != Eigen::Success) throw NumericalError("approx_leverage: factorization failed");
  const Matrix solved = llt.solve(z.transpose());  // r x n
  out.scores = (z.transpose().array() * solved.array()).colwise().sum().transpose();
  out.scores = out.scores.cwiseMax(0.0).cwiseMin(1.0);
  out.d_eff = out.scores.sum();
  return out;
}

/// p_i = (1 - mix) l_i / d_eff + mix / N, floored at 1e-12 / N and renormalized.
inline SamplingDistribution make_distribution(const LeverageScores& scores, double mix_uniform) {
  const Index n = scores.n();
  detail::require(n >= 1, "make_distribution: empty score vector");
  detail::require(mix_uniform >= 0.0 && mix_uniform <= 1.0, "make_distribution: mix_uniform must lie in [0,1]");
  const double total = scores.scores.sum();
  if (mix_uniform < 1.0)
    detail::require(total > 0.0, "make_distribution: all leverage scores are zero");
  const double inv_n = 1.0 / static_cast<double>(n);
  SamplingDistribution out;
  out.p.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double lev = mix_uniform < 1.0 ? scores.scores(i) / total : 0.0;
    out.p(i) = std::max((1.0 - mix_uniform) * lev + mix_uniform * inv_n, 1e-12 * inv_n);
  }
  out.p /= out.p.sum();
  out.beta_floor = mix_uniform >= 1.0 ? 1.0 : 1.0 - mix_uniform;
  return out;
}

inline SamplingDistribution uniform_distribution(Index n) {
  detail::require(n >= 1, "uniform_distribution: n must be >= 1");
  SamplingDistribution out;
  out.p = Vector::Constant(n, 1.0 / static_cast<double>(n));
  out.beta_floor = 1.0;
  return out;
}

}  // namespace nkcca
