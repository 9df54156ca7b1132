#pragma once

#include <nkcca/common.hpp>
#include <nkcca/random.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace nkcca {

enum class Split { Train = 0, Tune = 1, Test = 2 };

struct PairedDataset {
  Matrix x;
  Matrix y;
  std::vector<Split> split;  // one tag per row; empty means all training
  std::uint64_t seed = 0;
  /// Latent (z, u, v) per row for generated data.
  std::optional<Matrix> latent;

  Index n() const { return x.rows(); }

  std::vector<Index> rows(Split which) const {
    std::vector<Index> out;
    for (Index i = 0; i < n(); ++i)
      if (split.empty() ? which == Split::Train : split[static_cast<std::size_t>(i)] == which) out.push_back(i);
    return out;
  }
  Matrix x_of(Split which) const { return x(rows(which), Eigen::all); }
  Matrix y_of(Split which) const { return y(rows(which), Eigen::all); }
};

/// Two noisy rings sharing a latent radius variable:
///   z ~ U[0,1], u = z + 0.06 + e_x, v = z + 3 + e_y,
///   e_x ~ N(0, 0.02), e_y ~ N(0, 0.03) (variances),
///   x = r_x [cos t_x, sin t_x] with r_x = sqrt(-4 log(u / 1.5)),
///   y = r_y [cos t_y, sin t_y] with r_y = sqrt(-4 log(v / 4.1)), angles ~ U[0, 2 pi].
/// A row whose log argument falls outside (0, 1] is redrawn.
inline PairedDataset synthetic_circles(Index n, std::uint64_t seed) {
  detail::require(n >= 1, "synthetic_circles: N must be >= 1");
  constexpr int max_attempts = 1000;
  const double sd_x = std::sqrt(0.02);
  const double sd_y = std::sqrt(0.03);
  const double two_pi = 2.0 * std::numbers::pi;
  PairedDataset d;
  d.seed = seed;
  d.x.resize(n, 2);
  d.y.resize(n, 2);
  Matrix latent(n, 3);
  RandomStream rng(seed, 0x636972636c6573ULL);
  for (Index i = 0; i < n; ++i) {
    int attempt = 0;
    double z = 0.0, u = 0.0, v = 0.0;
    for (;; ++attempt) {
      if (attempt >= max_attempts) throw NumericalError("synthetic_circles: resampling limit reached");
      z = rng.uniform();
      u = z + 0.06 + rng.normal(0.0, sd_x);
      v = z + 3.0 + rng.normal(0.0, sd_y);
      const double ru = u / 1.5, rv = v / 4.1;
      if (ru > 0.0 && ru <= 1.0 && rv > 0.0 && rv <= 1.0) break;
    }
    const double rx = std::sqrt(-4.0 * std::log(u / 1.5));
    const double ry = std::sqrt(-4.0 * std::log(v / 4.1));
    const double tx = rng.uniform(0.0, two_pi);
    const double ty = rng.uniform(0.0, two_pi);
    d.x(i, 0) = rx * std::cos(tx);
    d.x(i, 1) = rx * std::sin(tx);
    d.y(i, 0) = ry * std::cos(ty);
    d.y(i, 1) = ry * std::sin(ty);
    latent.row(i) << z, u, v;
  }
  d.latent = std::move(latent);
  return d;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// `train:tune:test` as row counts or as fractions.
struct SplitSpec {
  std::array<double, 3> parts{1.0, 0.0, 0.0};
  bool fractions = true;

  static SplitSpec parse(const std::string& text) {
    SplitSpec spec;
    std::stringstream ss(text);
    std::string item;
    std::vector<std::string> items;
    while (std::getline(ss, item, ':')) items.push_back(item);
    detail::require(items.size() == 3, "split spec must have the form train:tune:test");
    bool any_fraction = false;
    for (std::size_t k = 0; k < 3; ++k) {
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(items[k], &used);
      } catch (const std::exception&) {
        throw ConfigError("split spec: '" + items[k] + "' is not a number");
      }
      detail::require(used == items[k].size() && value >= 0.0 && std::isfinite(value),
                      "split spec: invalid part '" + items[k] + "'");
      spec.parts[k] = value;
      if (items[k].find_first_of(".eE") != std::string::npos) any_fraction = true;
    }
    const double total = spec.parts[0] + spec.parts[1] + spec.parts[2];
    detail::require(total > 0.0, "split spec: parts sum to zero");
    spec.fractions = any_fraction;
    return spec;
  }

  /// Row counts for n rows; fractional remainders go to the training part.
  std::array<Index, 3> counts(Index n) const {
    std::array<Index, 3> c{};
    if (fractions) {
      const double total = parts[0] + parts[1] + parts[2];
      c[1] = static_cast<Index>(std::floor(parts[1] / total * static_cast<double>(n)));
      c[2] = static_cast<Index>(std::floor(parts[2] / total * static_cast<double>(n)));
      c[0] = n - c[1] - c[2];
    } else {
      for (std::size_t k = 0; k < 3; ++k) c[k] = static_cast<Index>(std::llround(parts[k]));
      detail::require(c[0] + c[1] + c[2] == n, "split spec: counts must add up to the row count (" +
                                                   std::to_string(n) + ")");
    }
    return c;
  }
};

/// Shuffles rows with `seed` and tags consecutive blocks train, tune, test.
inline void assign_splits(PairedDataset& d, const SplitSpec& spec, std::uint64_t seed) {
  const Index n = d.n();
  const auto c = spec.counts(n);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  RandomStream rng(seed, 0x73706c6974ULL);
  for (Index i = n - 1; i > 0; --i) {
    const Index j = std::min<Index>(i, static_cast<Index>(rng.uniform() * static_cast<double>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  d.split.assign(static_cast<std::size_t>(n), Split::Train);
  for (Index k = 0; k < n; ++k) {
    const Split tag = k < c[0] ? Split::Train : (k < c[0] + c[1] ? Split::Tune : Split::Test);
    d.split[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = tag;
  }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Comma-separated numeric matrix. A first row that does not parse as numbers
/// is treated as a header.
inline Matrix read_csv(const std::string& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "read_csv: cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    std::vector<double> values;
    bool numeric = true;
    for (const auto& c : cells) {
      const auto v = detail::parse_number(c);
      if (!v) {
        numeric = false;
        break;
      }
      values.push_back(*v);
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw ConfigError("read_csv: " + path + ":" + std::to_string(line_no) + ": non-numeric cell");
    }
    for (double v : values)
      if (!std::isfinite(v))
        throw ConfigError("read_csv: " + path + ":" + std::to_string(line_no) + ": non-finite value");
    if (rows.empty()) width = values.size();
    if (values.size() != width)
      throw ConfigError("read_csv: " + path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(width) + " columns");
    rows.push_back(std::move(values));
  }
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

inline void write_csv(const std::string& path, const Matrix& m, const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  detail::require(static_cast<bool>(out), "write_csv: cannot open '" + path + "'");
  out << std::setprecision(17);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  if (!header.empty()) out << "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << "\n";
  }
}

inline PairedDataset load_paired_csv(const std::string& path_x, const std::string& path_y,
                                     const SplitSpec& split, std::uint64_t seed) {
  PairedDataset d;
  d.x = read_csv(path_x);
  d.y = read_csv(path_y);
  detail::require(d.x.rows() == d.y.rows(), "load_paired_csv: row counts differ (" + std::to_string(d.x.rows()) +
                                                " vs " + std::to_string(d.y.rows()) + ")");
  detail::require(d.x.rows() >= 1, "load_paired_csv: no data rows");
  d.seed = seed;
  assign_splits(d, split, seed);
  return d;
}

}  // namespace nkcca
