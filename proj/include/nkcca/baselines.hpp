#pragma once

#include <nkcca/common.hpp>
#include <nkcca/kernels.hpp>
#include <nkcca/linalg.hpp>
#include <nkcca/random.hpp>

#include <cmath>
#include <numbers>
#include <string>

namespace nkcca {

/// Random Fourier features for the RBF kernel exp(-||x - y||^2 / (2 sigma^2)):
/// z(x) = sqrt(2 / D) cos(W x + b), rows of W ~ N(0, sigma^-2 I), b ~ U[0, 2 pi].
struct RffMap {
  Matrix frequencies;  // D x d
  Vector phases;       // D
  double scale = 0.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;

  Index features() const { return frequencies.rows(); }
  Index input_dim() const { return frequencies.cols(); }
};

inline RffMap make_rff(Index input_dim, Index features, double sigma, std::uint64_t seed) {
  detail::require(input_dim >= 1 && features >= 1, "make_rff: dimensions must be >= 1");
  detail::require(sigma > 0.0 && std::isfinite(sigma), "make_rff: sigma must be > 0");
  RffMap map;
  map.sigma = sigma;
  map.seed = seed;
  map.scale = std::sqrt(2.0 / static_cast<double>(features));
  map.frequencies.resize(features, input_dim);
  map.phases.resize(features);
  RandomStream rng(seed, 0x726666ULL);
  for (Index r = 0; r < features; ++r) {
    for (Index c = 0; c < input_dim; ++c) map.frequencies(r, c) = rng.normal(0.0, 1.0 / sigma);
    map.phases(r) = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return map;
}

/// N x D feature matrix.
inline Matrix rff_features(const RffMap& map, const Matrix& x) {
  detail::require(x.cols() == map.input_dim(), "rff_features: input dimension mismatch (" +
                                                   std::to_string(x.cols()) + " vs " +
                                                   std::to_string(map.input_dim()) + ")");
  Matrix z = x * map.frequencies.transpose();
  z.rowwise() += map.phases.transpose();
  return map.scale * z.array().cos().matrix();
}

/// Regularized linear CCA on centered features.
struct LinearCca {
  Vector rho;      // canonical correlations, descending
  Matrix w1;       // D1 x L projection directions
  Matrix w2;       // D2 x L
  Vector mean1;    // feature means of the training data
  Vector mean2;
  Index requested = 0;
  std::string warning;  // set when fewer than `requested` directions exist

  Index dims() const { return rho.size(); }
};

namespace detail {

/// (C + lambda I)^{-1/2} for symmetric PSD C.
inline Matrix inverse_sqrt_ridge(const Matrix& c, double lambda) {
  const linalg::SymEig eig = linalg::sym_eig(c);
  return linalg::sym_function(eig, [lambda](double w) { return 1.0 / std::sqrt(std::max(w, 0.0) + lambda); });
}

}  // namespace detail

/// Whitens each view with (Z^T Z / N + lambda I)^{-1/2}, takes the SVD of the
/// whitened cross-covariance and keeps the top L directions.
inline LinearCca linear_cca(const Matrix& z1, const Matrix& z2, double lambda1, double lambda2, Index dims) {
  const Index n = z1.rows();
  detail::require(z2.rows() == n, "linear_cca: views have different row counts");
  detail::require(n > 1, "linear_cca: need N > 1");
  detail::require(dims >= 1, "linear_cca: L must be >= 1");
  detail::require(lambda1 >= 0.0 && lambda2 >= 0.0, "linear_cca: lambda must be >= 0");
  LinearCca out;
  out.requested = dims;
  out.mean1 = z1.colwise().mean().transpose();
  out.mean2 = z2.colwise().mean().transpose();
  const Matrix c1 = z1.rowwise() - out.mean1.transpose();
  const Matrix c2 = z2.rowwise() - out.mean2.transpose();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Matrix cov11 = inv_n * (c1.transpose() * c1);
  const Matrix cov22 = inv_n * (c2.transpose() * c2);
  const Matrix cov12 = inv_n * (c1.transpose() * c2);
  const Matrix white1 = detail::inverse_sqrt_ridge(0.5 * (cov11 + cov11.transpose()), lambda1);
  const Matrix white2 = detail::inverse_sqrt_ridge(0.5 * (cov22 + cov22.transpose()), lambda2);
  const linalg::Svd svd = linalg::thin_svd(white1 * cov12 * white2);

  const double top = svd.s.size() > 0 ? svd.s(0) : 0.0;
  Index avail = 0;
  while (avail < svd.s.size() && svd.s(avail) > 1e-12 * std::max(top, 1e-300)) ++avail;
  const Index k = std::min(dims, avail);
  if (k < dims)
    out.warning = "linear_cca: only " + std::to_string(k) + " of " + std::to_string(dims) +
                  " directions have nonzero correlation";
  out.rho = svd.s.head(k);
  out.w1 = white1 * svd.u.leftCols(k);
  out.w2 = white2 * svd.v.leftCols(k);
  return out;
}

/// Projections of new feature rows for one view (1 = first, 2 = second).
inline Matrix linear_project(const LinearCca& cca, const Matrix& z, int view) {
  const Matrix& w = view == 1 ? cca.w1 : cca.w2;
  const Vector& mean = view == 1 ? cca.mean1 : cca.mean2;
  detail::require(z.cols() == w.rows(), "linear_project: feature dimension mismatch");
  return (z.rowwise() - mean.transpose()) * w;
}

/// RFF maps per view plus the linear CCA fitted on their features.
struct RccaModel {
  RffMap map1;
  RffMap map2;
  LinearCca cca;
};

inline RccaModel fit_rcca(const Matrix& x, const Matrix& y, double sigma1, double sigma2, Index features,
                          double lambda1, double lambda2, Index dims, std::uint64_t seed) {
  RccaModel m;
  m.map1 = make_rff(x.cols(), features, sigma1, seed);
  m.map2 = make_rff(y.cols(), features, sigma2, seed ^ 0x9e3779b97f4a7c15ULL);
  m.cca = linear_cca(rff_features(m.map1, x), rff_features(m.map2, y), lambda1, lambda2, dims);
  return m;
}

inline Matrix rcca_project(const RccaModel& m, const Matrix& points, int view) {
  return linear_project(m.cca, rff_features(view == 1 ? m.map1 : m.map2, points), view);
}

}  // namespace nkcca
