#pragma once

#include <nkcca/common.hpp>
#include <nkcca/leverage.hpp>
#include <nkcca/random.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace nkcca {

/// Column draws with replacement. Draw j carries weight 1/sqrt(M p_{i_j}),
/// recomputed whenever the plan grows.
struct SamplingPlan {
  std::vector<Index> indices;
  std::vector<double> weights;
  std::shared_ptr<const SamplingDistribution> distribution;
  std::uint64_t seed = 0;
  std::string strategy = "custom";

  Index size() const { return static_cast<Index>(indices.size()); }

  /// p_{i_j} of draw j.
  double probability(Index j) const {
    return distribution->p(indices[static_cast<std::size_t>(j)]);
  }

  /// The first `m` draws, reweighted for M = m.
  SamplingPlan prefix(Index m) const;
};

namespace detail {

inline std::vector<double> cumulative(const Vector& p) {
  std::vector<double> cdf(static_cast<std::size_t>(p.size()));
  double acc = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  return cdf;
}

inline Index draw_index(const std::vector<double>& cdf, double u) {
  const double target = u * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  if (it == cdf.end()) --it;
  return static_cast<Index>(it - cdf.begin());
}

inline void reweight(SamplingPlan& plan) {
  const double m = static_cast<double>(plan.size());
  plan.weights.resize(plan.indices.size());
  for (Index j = 0; j < plan.size(); ++j) {
    const double p = plan.probability(j);
    plan.weights[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(m * p);
  }
}

inline void append_draws(SamplingPlan& plan, Index extra, std::uint64_t seed) {
  const std::vector<double> cdf = cumulative(plan.distribution->p);
  const auto start = static_cast<std::uint64_t>(plan.indices.size());
  for (Index j = 0; j < extra; ++j) {
    const double u = counter_uniform(seed, 0x73616d706c65ULL, start + static_cast<std::uint64_t>(j));
    plan.indices.push_back(draw_index(cdf, u));
  }
}

}  // namespace detail

/// M i.i.d. draws from `dist`. Draw j depends only on (seed, j), so a plan can
/// be grown with `extend` and still agree with a one-shot draw of the same size.
inline SamplingPlan sample(const SamplingDistribution& dist, Index m, std::uint64_t seed,
                           std::string strategy = "custom") {
  detail::require(m >= 1, "sample: M must be >= 1");
  detail::require(dist.n() >= 1, "sample: empty distribution");
  SamplingPlan plan;
  plan.distribution = std::make_shared<SamplingDistribution>(dist);
  plan.seed = seed;
  plan.strategy = std::move(strategy);
  detail::append_draws(plan, m, seed);
  detail::reweight(plan);
  return plan;
}

/// Appends `extra` draws from counters M..M+extra-1 of `seed_stream` and
/// recomputes every weight for the new M. Existing indices are unchanged.
inline SamplingPlan extend(const SamplingPlan& plan, const SamplingDistribution& dist, Index extra,
                           std::uint64_t seed_stream) {
  detail::require(extra >= 1, "extend: extra must be >= 1");
  detail::require(dist.n() >= 1, "extend: empty distribution");
  SamplingPlan out = plan;
  if (!out.distribution || out.distribution->p.size() != dist.p.size() ||
      out.distribution->p != dist.p)
    out.distribution = std::make_shared<SamplingDistribution>(dist);
  detail::append_draws(out, extra, seed_stream);
  detail::reweight(out);
  return out;
}

inline SamplingPlan SamplingPlan::prefix(Index m) const {
  detail::require(m >= 1 && m <= size(), "SamplingPlan::prefix: length out of range");
  SamplingPlan out = *this;
  out.indices.resize(static_cast<std::size_t>(m));
  detail::reweight(out);
  return out;
}

/// Plan that takes every column once with unit weight (standard Nyström form).
inline SamplingPlan full_plan(Index n) {
  SamplingPlan plan;
  plan.distribution = std::make_shared<SamplingDistribution>(uniform_distribution(n));
  plan.strategy = "full";
  plan.indices.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) plan.indices[static_cast<std::size_t>(i)] = i;
  plan.weights.assign(static_cast<std::size_t>(n), 1.0);
  return plan;
}

/// Plan with explicit indices and weights (weights are not tied to M).
inline SamplingPlan explicit_plan(Index n, std::vector<Index> indices, std::vector<double> weights) {
  detail::require(indices.size() == weights.size(), "explicit_plan: size mismatch");
  SamplingPlan plan;
  plan.distribution = std::make_shared<SamplingDistribution>(uniform_distribution(n));
  plan.strategy = "explicit";
  for (Index i : indices) detail::require(i >= 0 && i < n, "explicit_plan: index out of range");
  for (double w : weights) detail::require(w > 0.0 && std::isfinite(w), "explicit_plan: weights must be positive");
  plan.indices = std::move(indices);
  plan.weights = std::move(weights);
  return plan;
}

/// Dense N x M sampling matrix with S(i_j, j) = w_j.
inline Matrix sampling_matrix(const SamplingPlan& plan, Index n) {
  Matrix s = Matrix::Zero(n, plan.size());
  for (Index j = 0; j < plan.size(); ++j)
    s(plan.indices[static_cast<std::size_t>(j)], j) = plan.weights[static_cast<std::size_t>(j)];
  return s;
}

/// Text record:
///   nkcca-plan 1
///   seed <u64>
///   strategy <name>
///   n <N>
///   m <M>
///   indices <i_1> ... <i_M>
///   weights <w_1> ... <w_M>
inline void write_plan(std::ostream& os, const SamplingPlan& plan) {
  os << "nkcca-plan 1\n";
  os << "seed " << plan.seed << "\n";
  os << "strategy " << plan.strategy << "\n";
  os << "n " << (plan.distribution ? plan.distribution->n() : 0) << "\n";
  os << "m " << plan.size() << "\n";
  os << "indices";
  for (Index i : plan.indices) os << ' ' << i;
  os << "\nweights" << std::setprecision(17);
  for (double w : plan.weights) os << ' ' << w;
  os << "\n";
}

inline SamplingPlan read_plan(std::istream& is) {
  std::string tag;
  int version = 0;
  is >> tag >> version;
  detail::require(tag == "nkcca-plan" && version == 1, "read_plan: not an nkcca-plan v1 record");
  SamplingPlan plan;
  Index n = 0, m = 0;
  std::string key;
  is >> key >> plan.seed;
  detail::require(key == "seed", "read_plan: expected 'seed'");
  is >> key >> plan.strategy;
  detail::require(key == "strategy", "read_plan: expected 'strategy'");
  is >> key >> n;
  detail::require(key == "n" && n >= 1, "read_plan: expected 'n'");
  is >> key >> m;
  detail::require(key == "m" && m >= 0, "read_plan: expected 'm'");
  is >> key;
  detail::require(key == "indices", "read_plan: expected 'indices'");
  plan.indices.resize(static_cast<std::size_t>(m));
  for (auto& i : plan.indices) is >> i;
  is >> key;
  detail::require(key == "weights", "read_plan: expected 'weights'");
  plan.weights.resize(static_cast<std::size_t>(m));
  for (auto& w : plan.weights) is >> w;
  detail::require(static_cast<bool>(is), "read_plan: truncated record");
  // Probabilities implied by the weights: p = 1 / (M w^2) on the sampled support.
  Vector p = Vector::Zero(n);
  for (Index j = 0; j < m; ++j) {
    const Index i = plan.indices[static_cast<std::size_t>(j)];
    detail::require(i >= 0 && i < n, "read_plan: index out of range");
    const double w = plan.weights[static_cast<std::size_t>(j)];
    p(i) = 1.0 / (static_cast<double>(m) * w * w);
  }
  auto dist = std::make_shared<SamplingDistribution>();
  dist->p = p;
  plan.distribution = std::move(dist);
  return plan;
}

}  // namespace nkcca
