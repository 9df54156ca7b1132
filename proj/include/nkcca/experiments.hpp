#pragma once

// Experiment runners behind the command-line tool: configuration parsing,
// data preparation, hyperparameter selection, error-vs-rank curves, timing of
// the incremental rank path, method comparison and bound checks.

#include <nkcca/baselines.hpp>
#include <nkcca/datasets.hpp>
#include <nkcca/diagnostics.hpp>
#include <nkcca/kcca.hpp>
#include <nkcca/leverage.hpp>
#include <nkcca/random.hpp>
#include <nkcca/sampling.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace nkcca {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config '" + key + "': '" + s + "' is not a number");
}

inline long long parse_integer(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config '" + key + "': '" + s + "' is not an integer");
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_real(key, item));
  return out;
}

/// Items separated by commas; an item `start:stop:step` (or `start:stop`,
/// step 1) expands to the inclusive arithmetic range.
inline std::vector<long long> parse_integer_list(const std::string& key, const std::string& text) {
  std::vector<long long> out;
  for (const auto& item : split_list(text)) {
    if (item.find(':') == std::string::npos) {
      out.push_back(parse_integer(key, item));
      continue;
    }
    std::vector<std::string> parts;
    std::stringstream ss(item);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(trim(p));
    require(parts.size() == 2 || parts.size() == 3, "config '" + key + "': range must be start:stop[:step]");
    const long long start = parse_integer(key, parts[0]);
    const long long stop = parse_integer(key, parts[1]);
    const long long step = parts.size() == 3 ? parse_integer(key, parts[2]) : 1;
    require(step > 0, "config '" + key + "': range step must be > 0");
    require(stop >= start, "config '" + key + "': range stop must be >= start");
    for (long long v = start; v <= stop; v += step) out.push_back(v);
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace detail

struct ExperimentConfig {
  // Data: "synthetic" (generated, split train/tune/test by counts) or "csv".
  std::string dataset = "synthetic";
  Index n_train = 3000;
  Index n_tune = 500;
  Index n_test = 1000;
  std::uint64_t data_seed = 0;
  std::string x_path;
  std::string y_path;
  std::string split = "0.6:0.2:0.2";
  // Model grids; more than one value triggers selection on the tuning split.
  std::vector<double> sigma1{0.5};
  std::vector<double> sigma2{0.5};
  std::vector<double> lambda1{1e-3};
  std::vector<double> lambda2{1e-3};
  // Sampling. "exact" adds the exact KCCA reference where a command uses it.
  std::vector<std::string> strategies{"uniform", "ridge"};
  std::vector<double> gamma_multipliers{1.0};
  std::string leverage = "exact";  // or "approx"
  Index sketch_size = 0;           // approximate leverage sketch; 0 picks min(N, 2 max rank)
  std::vector<Index> checkpoints{100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
  Index dims = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> rcca_lambda{1e-4, 1e-3, 1e-2};
  double t = 0.5;  // ||D|| gate for check-bounds
  std::string output_dir = "results";
  Index threads = 1;
  Index dense_limit = 5000;

  static std::vector<std::string> keys() {
    return {"dataset",     "n_train",     "n_tune",      "n_test",      "data_seed",    "x_path",
            "y_path",      "split",       "sigma1",      "sigma2",      "lambda1",      "lambda2",
            "strategies",  "gamma_multipliers", "leverage", "sketch_size", "checkpoints", "dims",
            "seeds",       "rcca_lambda", "t",           "output_dir",  "threads",      "dense_limit"};
  }

  void set(const std::string& key, const std::string& raw) {
    using namespace detail;
    const std::string value = trim(raw);
    auto positive_index = [&](Index& field) {
      const long long v = parse_integer(key, value);
      require(v >= 0, "config '" + key + "' must be >= 0");
      field = static_cast<Index>(v);
    };
    if (key == "dataset") {
      require(value == "synthetic" || value == "csv", "config 'dataset' must be synthetic or csv");
      dataset = value;
    } else if (key == "n_train") {
      positive_index(n_train);
    } else if (key == "n_tune") {
      positive_index(n_tune);
    } else if (key == "n_test") {
      positive_index(n_test);
    } else if (key == "data_seed") {
      data_seed = static_cast<std::uint64_t>(parse_integer(key, value));
    } else if (key == "x_path") {
      x_path = value;
    } else if (key == "y_path") {
      y_path = value;
    } else if (key == "split") {
      SplitSpec::parse(value);
      split = value;
    } else if (key == "sigma1") {
      sigma1 = parse_real_list(key, value);
    } else if (key == "sigma2") {
      sigma2 = parse_real_list(key, value);
    } else if (key == "lambda1") {
      lambda1 = parse_real_list(key, value);
    } else if (key == "lambda2") {
      lambda2 = parse_real_list(key, value);
    } else if (key == "strategies") {
      strategies = split_list(value);
    } else if (key == "gamma_multipliers") {
      gamma_multipliers = parse_real_list(key, value);
    } else if (key == "leverage") {
      require(value == "exact" || value == "approx", "config 'leverage' must be exact or approx");
      leverage = value;
    } else if (key == "sketch_size") {
      positive_index(sketch_size);
    } else if (key == "checkpoints") {
      checkpoints.clear();
      for (long long v : parse_integer_list(key, value)) checkpoints.push_back(static_cast<Index>(v));
    } else if (key == "dims") {
      positive_index(dims);
    } else if (key == "seeds") {
      seeds.clear();
      for (long long v : parse_integer_list(key, value)) {
        require(v >= 0, "config 'seeds' must be >= 0");
        seeds.push_back(static_cast<std::uint64_t>(v));
      }
    } else if (key == "rcca_lambda") {
      rcca_lambda = parse_real_list(key, value);
    } else if (key == "t") {
      t = parse_real(key, value);
    } else if (key == "output_dir") {
      output_dir = value;
    } else if (key == "threads") {
      positive_index(threads);
    } else if (key == "dense_limit") {
      positive_index(dense_limit);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  void validate() const {
    using detail::require;
    auto positive = [](const std::vector<double>& v, const std::string& name) {
      require(!v.empty(), "config '" + name + "' must not be empty");
      for (double x : v) require(x > 0.0, "config '" + name + "' values must be > 0");
    };
    positive(sigma1, "sigma1");
    positive(sigma2, "sigma2");
    positive(lambda1, "lambda1");
    positive(lambda2, "lambda2");
    positive(gamma_multipliers, "gamma_multipliers");
    positive(rcca_lambda, "rcca_lambda");
    require(!strategies.empty(), "config 'strategies' must not be empty");
    for (const auto& s : strategies)
      require(s == "uniform" || s == "ridge" || s == "exact",
              "config 'strategies': unknown strategy '" + s + "' (uniform, ridge, exact)");
    require(!checkpoints.empty(), "config 'checkpoints' must not be empty");
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
      require(checkpoints[i] >= 1, "config 'checkpoints' must be >= 1");
      if (i > 0) require(checkpoints[i] > checkpoints[i - 1], "config 'checkpoints' must increase");
    }
    require(!seeds.empty(), "config 'seeds' must not be empty");
    require(dims >= 1, "config 'dims' must be >= 1");
    require(t > 0.0 && t < 1.0, "config 't' must lie in (0,1)");
    require(threads >= 1, "config 'threads' must be >= 1");
    if (dataset == "synthetic") {
      require(n_train >= 2, "config 'n_train' must be >= 2");
    } else {
      require(!x_path.empty() && !y_path.empty(), "config: csv dataset needs x_path and y_path");
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "dataset = " << dataset << "\n"
       << "n_train = " << n_train << "\n"
       << "n_tune = " << n_tune << "\n"
       << "n_test = " << n_test << "\n"
       << "data_seed = " << data_seed << "\n"
       << "x_path = " << x_path << "\n"
       << "y_path = " << y_path << "\n"
       << "split = " << split << "\n"
       << "sigma1 = " << detail::join(sigma1) << "\n"
       << "sigma2 = " << detail::join(sigma2) << "\n"
       << "lambda1 = " << detail::join(lambda1) << "\n"
       << "lambda2 = " << detail::join(lambda2) << "\n"
       << "strategies = " << detail::join(strategies) << "\n"
       << "gamma_multipliers = " << detail::join(gamma_multipliers) << "\n"
       << "leverage = " << leverage << "\n"
       << "sketch_size = " << sketch_size << "\n"
       << "checkpoints = " << detail::join(checkpoints) << "\n"
       << "dims = " << dims << "\n"
       << "seeds = " << detail::join(seeds) << "\n"
       << "rcca_lambda = " << detail::join(rcca_lambda) << "\n"
       << "t = " << t << "\n"
       << "output_dir = " << output_dir << "\n"
       << "threads = " << threads << "\n"
       << "dense_limit = " << dense_limit << "\n";
    return os.str();
  }

  bool has_strategy(const std::string& s) const {
    return std::find(strategies.begin(), strategies.end(), s) != strategies.end();
  }
};

/// Flat `key = value` lines; `#` starts a comment.
inline void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  apply_config_text(cfg, text);
  return cfg;
}

inline void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  apply_config_text(cfg, buffer.str(), path);
}

// ---------------------------------------------------------------------------
// Data, hyperparameters, sampling schemes
// ---------------------------------------------------------------------------

struct ExperimentData {
  std::shared_ptr<const Matrix> x_train;
  std::shared_ptr<const Matrix> y_train;
  Matrix x_tune, y_tune, x_test, y_test;

  Index n() const { return x_train->rows(); }
};

inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
  ExperimentData out;
  if (cfg.dataset == "synthetic") {
    const Index total = cfg.n_train + cfg.n_tune + cfg.n_test;
    const PairedDataset d = synthetic_circles(total, cfg.data_seed);
    out.x_train = std::make_shared<const Matrix>(d.x.topRows(cfg.n_train));
    out.y_train = std::make_shared<const Matrix>(d.y.topRows(cfg.n_train));
    out.x_tune = d.x.middleRows(cfg.n_train, cfg.n_tune);
    out.y_tune = d.y.middleRows(cfg.n_train, cfg.n_tune);
    out.x_test = d.x.bottomRows(cfg.n_test);
    out.y_test = d.y.bottomRows(cfg.n_test);
  } else {
    const PairedDataset d = load_paired_csv(cfg.x_path, cfg.y_path, SplitSpec::parse(cfg.split), cfg.data_seed);
    out.x_train = std::make_shared<const Matrix>(d.x_of(Split::Train));
    out.y_train = std::make_shared<const Matrix>(d.y_of(Split::Train));
    out.x_tune = d.x_of(Split::Tune);
    out.y_tune = d.y_of(Split::Tune);
    out.x_test = d.x_of(Split::Test);
    out.y_test = d.y_of(Split::Test);
  }
  detail::require(out.n() >= 2, "experiment: training split needs at least two rows");
  return out;
}

struct Hyperparameters {
  double sigma1 = 1.0;
  double sigma2 = 1.0;
  double lambda1 = 1e-3;
  double lambda2 = 1e-3;
};

struct SelectionRow {
  Hyperparameters h;
  double tune_correlation = 0.0;
};

struct Selection {
  Hyperparameters best;
  double score = std::numeric_limits<double>::quiet_NaN();
  std::vector<SelectionRow> grid;
};

inline ExactKcca fit_exact(const ExperimentData& data, const Hyperparameters& h, Index dims, Index dense_limit) {
  ExactOptions opt;
  opt.max_dense_n = dense_limit;
  ExactKcca ex = exact_kcca_full(gram(KernelSpec::rbf(h.sigma1), *data.x_train),
                                 gram(KernelSpec::rbf(h.sigma2), *data.y_train), h.lambda1, h.lambda2, dims, opt);
  attach_training(ex.model, KernelSpec::rbf(h.sigma1), data.x_train, KernelSpec::rbf(h.sigma2), data.y_train);
  return ex;
}

inline double held_out_correlation(const KccaModel& m, const Matrix& x, const Matrix& y) {
  return total_correlation(project_all(m, x, View::First), project_all(m, y, View::Second));
}

/// Grid search over (sigma1, sigma2, lambda1, lambda2) maximizing the total
/// tuning-split correlation of exact KCCA with L = dims.
inline Selection select_hyperparameters(const ExperimentConfig& cfg, const ExperimentData& data) {
  Selection out;
  const std::size_t size = cfg.sigma1.size() * cfg.sigma2.size() * cfg.lambda1.size() * cfg.lambda2.size();
  if (size == 1) {
    out.best = {cfg.sigma1[0], cfg.sigma2[0], cfg.lambda1[0], cfg.lambda2[0]};
    return out;
  }
  detail::require(data.x_tune.rows() >= 2, "hyperparameter search needs a tuning split with >= 2 rows");
  detail::require(data.n() <= cfg.dense_limit, "hyperparameter search uses exact KCCA; N exceeds dense_limit");
  std::map<double, GramMatrix> k1, k2;
  for (double s : cfg.sigma1) k1.emplace(s, gram(KernelSpec::rbf(s), *data.x_train));
  for (double s : cfg.sigma2) k2.emplace(s, gram(KernelSpec::rbf(s), *data.y_train));
  out.score = -1.0;
  for (double s1 : cfg.sigma1)
    for (double s2 : cfg.sigma2)
      for (double l1 : cfg.lambda1)
        for (double l2 : cfg.lambda2) {
          ExactOptions opt;
          opt.max_dense_n = cfg.dense_limit;
          KccaModel m = exact_kcca(k1.at(s1), k2.at(s2), l1, l2, cfg.dims, opt);
          attach_training(m, KernelSpec::rbf(s1), data.x_train, KernelSpec::rbf(s2), data.y_train);
          const double score = held_out_correlation(m, data.x_tune, data.y_tune);
          out.grid.push_back({{s1, s2, l1, l2}, score});
          if (score > out.score) {
            out.score = score;
            out.best = {s1, s2, l1, l2};
          }
        }
  return out;
}

/// One sampling configuration: a strategy and, for ridge sampling, the ratio
/// gamma / lambda used for the leverage scores.
struct SamplingScheme {
  std::string strategy;
  double gamma_multiplier = 1.0;
  SamplingDistribution dist1;
  SamplingDistribution dist2;

  std::string label() const {
    if (strategy != "ridge") return strategy;
    std::ostringstream os;
    os << "ridge(gamma=" << gamma_multiplier << "lambda)";
    return os.str();
  }
};

inline std::vector<SamplingScheme> sampling_schemes(const ExperimentConfig& cfg, const ExperimentData& data,
                                                    const Hyperparameters& h) {
  std::vector<SamplingScheme> out;
  const Index n = data.n();
  const Index max_rank = cfg.checkpoints.back();
  for (const auto& s : cfg.strategies) {
    if (s == "uniform") {
      out.push_back({"uniform", 1.0, uniform_distribution(n), uniform_distribution(n)});
    } else if (s == "ridge") {
      for (double mult : cfg.gamma_multipliers) {
        SamplingScheme scheme{"ridge", mult, {}, {}};
        auto scores = [&](const Matrix& x, double sigma, double lambda, std::uint64_t stream) {
          const double gamma = mult * lambda;
          const KernelSpec spec = KernelSpec::rbf(sigma);
          if (cfg.leverage == "exact") {
            detail::require(n <= cfg.dense_limit, "exact leverage scores need N <= dense_limit");
            return exact_leverage(gram(spec, x), gamma);
          }
          const Index sketch = cfg.sketch_size > 0 ? std::min(cfg.sketch_size, n) : std::min(n, 2 * max_rank);
          DataColumns oracle(spec, std::make_shared<const Matrix>(x));
          return approx_leverage(oracle, gamma, sketch, splitmix64(cfg.data_seed ^ stream));
        };
        scheme.dist1 = make_distribution(scores(*data.x_train, h.sigma1, h.lambda1, 0x6c657631ULL), 0.0);
        scheme.dist2 = make_distribution(scores(*data.y_train, h.sigma2, h.lambda2, 0x6c657632ULL), 0.0);
        out.push_back(std::move(scheme));
      }
    }
  }
  return out;
}

/// Per-view sampling seeds derived from an experiment seed.
inline std::uint64_t view_seed(std::uint64_t seed, int view) {
  return splitmix64(seed * 2 + static_cast<std::uint64_t>(view));
}

inline std::pair<SamplingPlan, SamplingPlan> draw_plans(const SamplingScheme& scheme, Index draws, std::uint64_t seed) {
  return {sample(scheme.dist1, draws, view_seed(seed, 1), scheme.strategy),
          sample(scheme.dist2, draws, view_seed(seed, 2), scheme.strategy)};
}

/// Runs `task(i)` for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, Index threads, const std::function<void(std::size_t)>& task) {
  const auto workers = static_cast<std::size_t>(std::max<Index>(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline double aligned_coefficient_error(const KccaModel& exact, const KccaModel& approx) {
  const double overlap = approx.alpha_prime.col(0).dot(exact.alpha_prime.col(0)) +
                         approx.beta_prime.col(0).dot(exact.beta_prime.col(0));
  const double sign = overlap < 0.0 ? -1.0 : 1.0;
  return (exact.alpha.col(0) - sign * approx.alpha.col(0)).norm() / std::sqrt(static_cast<double>(exact.n()));
}

inline double subspace_angle(const KccaModel& a, const KccaModel& b) {
  return std::max(linalg::max_principal_angle(a.alpha_prime, b.alpha_prime),
                  linalg::max_principal_angle(a.beta_prime, b.beta_prime));
}

// ---------------------------------------------------------------------------
// Error versus rank
// ---------------------------------------------------------------------------

struct ErrorCurveRow {
  std::string seed;  // numeric seed or "mean"
  std::string strategy;
  Index rank = 0;
  double rank1 = 0;  // accepted landmarks (averaged on mean rows)
  double rank2 = 0;
  double rho_error = 0.0;    // |rho - rho~| of the top direction
  double t_error = 0.0;      // ||T - T~||
  double alpha_error = 0.0;  // ||alpha - alpha~|| / sqrt(N), sign aligned
  double bound = 0.0;        // (1/2 + 4 sqrt2 / r) ||T - T~|| / (N lambda1)
};

struct ErrorCurveResult {
  Hyperparameters hyper;
  double rho = 0.0;
  double gap = 0.0;
  std::vector<ErrorCurveRow> rows;  // per seed, then mean rows

  std::vector<ErrorCurveRow> mean_rows(const std::string& strategy) const {
    std::vector<ErrorCurveRow> out;
    for (const auto& r : rows)
      if (r.seed == "mean" && r.strategy == strategy) out.push_back(r);
    return out;
  }
};

namespace detail {

template <class Row, class Accum>
std::vector<Row> mean_rows(const std::vector<Row>& rows, std::size_t seeds, Accum accumulate) {
  std::vector<Row> out;
  std::map<std::pair<std::string, Index>, std::size_t> slot;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.strategy, r.rank);
    auto it = slot.find(key);
    if (it == slot.end()) {
      Row m{};
      m.seed = "mean";
      m.strategy = r.strategy;
      m.rank = r.rank;
      slot.emplace(key, out.size());
      out.push_back(m);
      it = slot.find(key);
    }
    accumulate(out[it->second], r, 1.0 / static_cast<double>(seeds));
  }
  return out;
}

}  // namespace detail

inline ErrorCurveResult run_error_curve(const ExperimentConfig& cfg) {
  cfg.validate();
  const ExperimentData data = prepare_data(cfg);
  const Index n = data.n();
  detail::require(n <= cfg.dense_limit, "error-curve needs the exact reference; N exceeds dense_limit");
  detail::require(cfg.checkpoints.back() <= n * 64, "error-curve: checkpoints are implausibly large");
  ErrorCurveResult out;
  out.hyper = select_hyperparameters(cfg, data).best;
  const Hyperparameters& h = out.hyper;
  const ExactKcca exact = fit_exact(data, h, 1, cfg.dense_limit);
  out.rho = exact.model.rho(0);
  out.gap = exact.gap();
  const auto schemes = sampling_schemes(cfg, data, h);
  detail::require(!schemes.empty(), "error-curve needs a uniform or ridge strategy");
  const DataColumns o1(KernelSpec::rbf(h.sigma1), data.x_train);
  const DataColumns o2(KernelSpec::rbf(h.sigma2), data.y_train);
  const double factor = 0.5 + 4.0 * std::sqrt(2.0) / out.gap;

  std::vector<std::vector<ErrorCurveRow>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    for (const auto& scheme : schemes) {
      const auto [p1, p2] = draw_plans(scheme, cfg.checkpoints.back(), seed);
      NkccaOptions opt;
      opt.dims = 1;
      NkccaSolver<DataColumns, DataColumns> solver(o1, o2, h.lambda1, h.lambda2, opt);
      std::vector<Matrix> t_hats;
      std::vector<ErrorCurveRow> rows;
      Index consumed = 0;
      for (Index target : cfg.checkpoints) {
        for (; consumed < target; ++consumed) {
          solver.add(View::First, p1.indices[static_cast<std::size_t>(consumed)], detail::unscaled_weight(p1, consumed));
          solver.add(View::Second, p2.indices[static_cast<std::size_t>(consumed)], detail::unscaled_weight(p2, consumed));
        }
        const RankPathEntry e = solver.solve(1);
        t_hats.push_back(solver.t_hat());
        ErrorCurveRow row;
        row.seed = std::to_string(seed);
        row.strategy = scheme.label();
        row.rank = target;
        row.rank1 = static_cast<double>(e.rank1);
        row.rank2 = static_cast<double>(e.rank2);
        row.rho_error = std::abs(exact.model.rho(0) - e.model.rho(0));
        row.alpha_error = aligned_coefficient_error(exact.model, e.model);
        rows.push_back(row);
      }
      const TErrorNorm t_norm(exact, Matrix(solver.qr(View::First).q()), Matrix(solver.qr(View::Second).q()));
      for (std::size_t c = 0; c < rows.size(); ++c) {
        rows[c].t_error = t_norm(t_hats[c]);
        rows[c].bound = factor * rows[c].t_error / (static_cast<double>(n) * h.lambda1);
        per_seed[s].push_back(rows[c]);
      }
    }
  });
  for (auto& v : per_seed) out.rows.insert(out.rows.end(), v.begin(), v.end());
  auto means = detail::mean_rows(out.rows, cfg.seeds.size(), [](ErrorCurveRow& m, const ErrorCurveRow& r, double w) {
    m.rank1 += w * r.rank1;
    m.rank2 += w * r.rank2;
    m.rho_error += w * r.rho_error;
    m.t_error += w * r.t_error;
    m.alpha_error += w * r.alpha_error;
    m.bound += w * r.bound;
  });
  out.rows.insert(out.rows.end(), means.begin(), means.end());
  return out;
}

inline void write_error_curve_csv(std::ostream& os, const ErrorCurveResult& r) {
  os << std::setprecision(10);
  os << "seed,strategy,rank,rank1,rank2,rho_error,t_error,alpha_error,bound\n";
  for (const auto& row : r.rows)
    os << row.seed << ',' << row.strategy << ',' << row.rank << ',' << row.rank1 << ',' << row.rank2 << ','
       << row.rho_error << ',' << row.t_error << ',' << row.alpha_error << ',' << row.bound << '\n';
}

// ---------------------------------------------------------------------------
// Speedup of the incremental rank path
// ---------------------------------------------------------------------------

struct SpeedupRow {
  std::string seed;
  std::string strategy;
  Index rank = 0;
  double incremental_time = 0.0;   // cumulative wall time of the rank path
  double restart_time = 0.0;       // from-scratch fit at this rank
  double restart_cumulative = 0.0;
  double speedup = 0.0;            // restart_cumulative / incremental_time
  double rho_difference = 0.0;     // incremental vs restart
  double subspace_angle = 0.0;
};

struct SpeedupTrend {
  double final_speedup = 0.0;
  bool final_above_one = false;
  bool nondecreasing_last_half = false;
  bool incremental_faster = false;  // cumulative incremental < summed restarts
};

struct SpeedupResult {
  Hyperparameters hyper;
  std::vector<SpeedupRow> rows;

  std::vector<SpeedupRow> mean_rows(const std::string& strategy) const {
    std::vector<SpeedupRow> out;
    for (const auto& r : rows)
      if (r.seed == "mean" && r.strategy == strategy) out.push_back(r);
    return out;
  }
};

inline SpeedupTrend speedup_trend(const std::vector<SpeedupRow>& rows) {
  SpeedupTrend t;
  if (rows.empty()) return t;
  t.final_speedup = rows.back().speedup;
  t.final_above_one = t.final_speedup > 1.0;
  t.incremental_faster = rows.back().incremental_time < rows.back().restart_cumulative;
  t.nondecreasing_last_half = true;
  for (std::size_t i = rows.size() / 2; i + 1 < rows.size(); ++i)
    if (rows[i + 1].speedup < rows[i].speedup) t.nondecreasing_last_half = false;
  return t;
}

/// Timing is measured on one thread regardless of `threads`.
inline SpeedupResult run_speedup(const ExperimentConfig& cfg) {
  cfg.validate();
  const ExperimentData data = prepare_data(cfg);
  SpeedupResult out;
  out.hyper = select_hyperparameters(cfg, data).best;
  const Hyperparameters& h = out.hyper;
  const auto schemes = sampling_schemes(cfg, data, h);
  detail::require(!schemes.empty(), "speedup needs a uniform or ridge strategy");
  const DataColumns o1(KernelSpec::rbf(h.sigma1), data.x_train);
  const DataColumns o2(KernelSpec::rbf(h.sigma2), data.y_train);
  NkccaOptions opt;
  opt.dims = cfg.dims;
  for (std::uint64_t seed : cfg.seeds)
    for (const auto& scheme : schemes) {
      const auto [p1, p2] = draw_plans(scheme, cfg.checkpoints.back(), seed);
      const auto path = nkcca_fit(o1, o2, p1, p2, h.lambda1, h.lambda2, cfg.checkpoints, opt);
      double cumulative = 0.0;
      for (std::size_t c = 0; c < path.size(); ++c) {
        const RankPathEntry fresh =
            nkcca_fresh(o1, o2, p1, p2, h.lambda1, h.lambda2, cfg.checkpoints[c], opt);
        cumulative += fresh.wall_time_restart;
        SpeedupRow row;
        row.seed = std::to_string(seed);
        row.strategy = scheme.label();
        row.rank = cfg.checkpoints[c];
        row.incremental_time = path[c].wall_time_incremental;
        row.restart_time = fresh.wall_time_restart;
        row.restart_cumulative = cumulative;
        row.speedup = cumulative / path[c].wall_time_incremental;
        row.rho_difference = (path[c].model.rho - fresh.model.rho).cwiseAbs().maxCoeff();
        row.subspace_angle = subspace_angle(path[c].model, fresh.model);
        out.rows.push_back(row);
      }
    }
  auto means = detail::mean_rows(out.rows, cfg.seeds.size(), [](SpeedupRow& m, const SpeedupRow& r, double w) {
    m.incremental_time += w * r.incremental_time;
    m.restart_time += w * r.restart_time;
    m.restart_cumulative += w * r.restart_cumulative;
    m.rho_difference = std::max(m.rho_difference, r.rho_difference);
    m.subspace_angle = std::max(m.subspace_angle, r.subspace_angle);
  });
  for (auto& m : means) m.speedup = m.restart_cumulative / m.incremental_time;
  out.rows.insert(out.rows.end(), means.begin(), means.end());
  return out;
}

inline void write_speedup_csv(std::ostream& os, const SpeedupResult& r) {
  os << std::setprecision(10);
  os << "seed,strategy,rank,incremental_time,restart_time,restart_cumulative,speedup,rho_difference,"
        "subspace_angle\n";
  for (const auto& row : r.rows)
    os << row.seed << ',' << row.strategy << ',' << row.rank << ',' << row.incremental_time << ','
       << row.restart_time << ',' << row.restart_cumulative << ',' << row.speedup << ',' << row.rho_difference
       << ',' << row.subspace_angle << '\n';
}

// ---------------------------------------------------------------------------
// Method comparison on held-out data
// ---------------------------------------------------------------------------

struct ComparisonRow {
  std::string seed;
  std::string strategy;  // method: rcca, nkcca-<scheme>, exact
  Index rank = 0;
  double test_correlation = 0.0;
  double parameter = std::numeric_limits<double>::quiet_NaN();  // selected RCCA lambda
};

struct ComparisonResult {
  Hyperparameters hyper;
  std::vector<ComparisonRow> rows;

  std::vector<ComparisonRow> mean_rows(const std::string& method) const {
    std::vector<ComparisonRow> out;
    for (const auto& r : rows)
      if (r.seed == "mean" && r.strategy == method) out.push_back(r);
    return out;
  }
};

inline ComparisonResult run_comparison(const ExperimentConfig& cfg) {
  cfg.validate();
  const ExperimentData data = prepare_data(cfg);
  detail::require(data.x_test.rows() >= 2, "compare needs a test split with >= 2 rows");
  ComparisonResult out;
  out.hyper = select_hyperparameters(cfg, data).best;
  const Hyperparameters& h = out.hyper;
  const auto schemes = sampling_schemes(cfg, data, h);
  const DataColumns o1(KernelSpec::rbf(h.sigma1), data.x_train);
  const DataColumns o2(KernelSpec::rbf(h.sigma2), data.y_train);

  // RCCA regularization per rank, chosen on the tuning split with the first seed.
  std::vector<double> rcca_lambda(cfg.checkpoints.size(), cfg.rcca_lambda.front());
  if (cfg.rcca_lambda.size() > 1) {
    detail::require(data.x_tune.rows() >= 2, "RCCA lambda search needs a tuning split");
    for (std::size_t c = 0; c < cfg.checkpoints.size(); ++c) {
      double best = -1.0;
      for (double lam : cfg.rcca_lambda) {
        const RccaModel m = fit_rcca(*data.x_train, *data.y_train, h.sigma1, h.sigma2, cfg.checkpoints[c], lam, lam,
                                     cfg.dims, cfg.seeds.front());
        if (m.cca.dims() < 1) continue;
        const double score =
            total_correlation(rcca_project(m, data.x_tune, 1), rcca_project(m, data.y_tune, 2));
        if (score > best) {
          best = score;
          rcca_lambda[c] = lam;
        }
      }
    }
  }

  std::vector<std::vector<ComparisonRow>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    for (std::size_t c = 0; c < cfg.checkpoints.size(); ++c) {
      const double lam = rcca_lambda[c];
      const RccaModel m =
          fit_rcca(*data.x_train, *data.y_train, h.sigma1, h.sigma2, cfg.checkpoints[c], lam, lam, cfg.dims, seed);
      ComparisonRow row;
      row.seed = std::to_string(seed);
      row.strategy = "rcca";
      row.rank = cfg.checkpoints[c];
      row.parameter = lam;
      if (m.cca.dims() >= 1)
        row.test_correlation = total_correlation(rcca_project(m, data.x_test, 1), rcca_project(m, data.y_test, 2));
      per_seed[s].push_back(row);
    }
    NkccaOptions opt;
    opt.dims = cfg.dims;
    for (const auto& scheme : schemes) {
      const auto [p1, p2] = draw_plans(scheme, cfg.checkpoints.back(), seed);
      const auto path = nkcca_fit(o1, o2, p1, p2, h.lambda1, h.lambda2, cfg.checkpoints, opt);
      for (std::size_t c = 0; c < path.size(); ++c) {
        ComparisonRow row;
        row.seed = std::to_string(seed);
        row.strategy = "nkcca-" + scheme.label();
        row.rank = cfg.checkpoints[c];
        row.test_correlation = held_out_correlation(path[c].model, data.x_test, data.y_test);
        per_seed[s].push_back(row);
      }
    }
  });
  for (auto& v : per_seed) out.rows.insert(out.rows.end(), v.begin(), v.end());
  auto means = detail::mean_rows(out.rows, cfg.seeds.size(), [](ComparisonRow& m, const ComparisonRow& r, double w) {
    m.test_correlation += w * r.test_correlation;
    m.parameter = r.parameter;
  });
  out.rows.insert(out.rows.end(), means.begin(), means.end());
  if (cfg.has_strategy("exact")) {
    detail::require(data.n() <= cfg.dense_limit, "exact reference: N exceeds dense_limit");
    const ExactKcca ex = fit_exact(data, h, cfg.dims, cfg.dense_limit);
    ComparisonRow row;
    row.seed = "mean";
    row.strategy = "exact";
    row.rank = data.n();
    row.test_correlation = held_out_correlation(ex.model, data.x_test, data.y_test);
    out.rows.push_back(row);
  }
  return out;
}

inline void write_comparison_csv(std::ostream& os, const ComparisonResult& r) {
  os << std::setprecision(10);
  os << "seed,method,rank,test_correlation,rcca_lambda\n";
  for (const auto& row : r.rows) {
    os << row.seed << ',' << row.strategy << ',' << row.rank << ',' << row.test_correlation << ',';
    if (!std::isnan(row.parameter)) os << row.parameter;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Bound checks on small instances
// ---------------------------------------------------------------------------

/// For each seed, scheme and rank: PSD ordering and spectral-error checks on
/// both views, the approximation chain and the layered stability check.
inline std::vector<BoundReport> run_bounds(const ExperimentConfig& cfg) {
  cfg.validate();
  const ExperimentData data = prepare_data(cfg);
  const Index n = data.n();
  DiagnosticOptions dopt;
  dopt.max_n = std::min<Index>(cfg.dense_limit, 2000);
  detail::require(n <= dopt.max_n, "check-bounds is dense; use n_train <= 2000");
  const Hyperparameters h = select_hyperparameters(cfg, data).best;
  const ExactKcca exact = fit_exact(data, h, 1, cfg.dense_limit);
  const GramMatrix k1 = gram(KernelSpec::rbf(h.sigma1), *data.x_train);
  const GramMatrix k2 = gram(KernelSpec::rbf(h.sigma2), *data.y_train);
  const DataColumns o1(KernelSpec::rbf(h.sigma1), data.x_train);
  const DataColumns o2(KernelSpec::rbf(h.sigma2), data.y_train);
  const auto schemes = sampling_schemes(cfg, data, h);
  const Matrix test = data.x_test.rows() > 0 ? data.x_test : *data.x_train;

  std::vector<std::vector<BoundReport>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    auto& out = per_seed[s];
    for (const auto& scheme : schemes) {
      const auto [p1, p2] = draw_plans(scheme, cfg.checkpoints.back(), seed);
      for (Index m : cfg.checkpoints) {
        const SamplingPlan q1 = p1.prefix(m), q2 = p2.prefix(m);
        const double g1 = scheme.gamma_multiplier * h.lambda1, g2 = scheme.gamma_multiplier * h.lambda2;
        const std::string tag = " seed=" + std::to_string(seed) + " " + scheme.label();
        auto tagged = [&](BoundReport r) {
          r.context += tag;
          out.push_back(std::move(r));
        };
        tagged(psd_ordering_check(k1, q1, g1, dopt));
        tagged(psd_ordering_check(k2, q2, g2, dopt));
        for (const auto& [k, q, g, l] : {std::tuple{&k1, &q1, g1, h.lambda1}, std::tuple{&k2, &q2, g2, h.lambda2}}) {
          Lemma2Report l2 = lemma2_check(*k, *q, g, l, cfg.t, dopt);
          tagged(l2.bound);
          for (auto& step : l2.steps) tagged(step);
        }
        const Theorem1Report t1 = theorem1_check(k1, k2, q1, q2, h.lambda1, h.lambda2, g1, g2, cfg.t, cfg.t, dopt);
        tagged(t1.weyl);
        tagged(t1.chain);
        tagged(t1.bound);
        NkccaOptions opt;
        opt.dims = 1;
        const RankPathEntry approx = nkcca_fresh(o1, o2, p1, p2, h.lambda1, h.lambda2, m, opt);
        StabilityOptions sopt;
        sopt.dense = dopt;
        sopt.epsilon_apriori = t1.epsilon;
        const StabilityReport st = stability_check(exact.model, approx.model, test, sopt);
        tagged(st.coefficients_unit);
        tagged(st.coefficients);
        tagged(st.projection);
      }
    }
  });
  std::vector<BoundReport> out;
  for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
  return out;
}

/// Column documentation written next to each run's CSV files.
inline void write_run_readme(const std::filesystem::path& dir, const std::string& command,
                             const ExperimentConfig& cfg) {
  std::ofstream os(dir / "README.txt");
  detail::require(static_cast<bool>(os), "cannot write run README in '" + dir.string() + "'");
  os << "Output of `nkcca " << command << "`.\n\n";
  if (command == "error-curve") {
    os << "error_curve.csv: one row per (seed, strategy, rank); rows with seed=mean average over seeds.\n"
          "  rank         landmark draws per view\n"
          "  rank1/rank2  accepted (distinct, independent) landmarks\n"
          "  rho_error    |rho - rho~| for the top canonical correlation\n"
          "  t_error      spectral norm of T - T~\n"
          "  alpha_error  ||alpha - alpha~|| / sqrt(N), view 1, sign aligned\n"
          "  bound        (1/2 + 4 sqrt(2) / r) t_error / (N lambda1), r the singular value gap of T\n";
  } else if (command == "speedup") {
    os << "speedup.csv: one row per (seed, strategy, rank); seed=mean rows average times over seeds.\n"
          "  incremental_time    cumulative seconds of the incremental rank path up to this rank\n"
          "  restart_time        seconds of a from-scratch fit at this rank\n"
          "  restart_cumulative  sum of restart_time up to this rank\n"
          "  speedup             restart_cumulative / incremental_time\n"
          "  rho_difference      max |rho~ incremental - rho~ restart| (max over seeds on mean rows)\n"
          "  subspace_angle      largest principal angle between the two solutions' singular subspaces\n";
  } else if (command == "compare") {
    os << "comparison.csv: total held-out correlation (sum over L dimensions of |Pearson|).\n"
          "  method       rcca, nkcca-<strategy>, or exact (seed-independent)\n"
          "  rank         random features (rcca) or landmark draws per view (nkcca)\n"
          "  rcca_lambda  RCCA regularization selected on the tuning split\n";
  } else if (command == "check-bounds") {
    os << "bounds.csv: one row per check.\n"
          "  context     check name and parameters\n"
          "  lhs, rhs    measured quantity and bound\n"
          "  holds       1 when lhs <= rhs + 1e-8 max(1, rhs) and the check applies\n"
          "  applicable  0 when the check's precondition failed (never counted as a pass)\n";
  }
  os << "\nConfiguration:\n" << cfg.to_text();
}

}  // namespace nkcca
