// nkcca: command-line front end for fitting and experiment runs.
//
//   nkcca <command> [--config FILE] [--<key> VALUE ...]
//
// Every configuration key is also a flag; flags override the config file.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <nkcca/experiments.hpp>
#include <nkcca/io.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>

namespace fs = std::filesystem;
using namespace nkcca;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  return os;
}

fs::path prepare_output(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  open_output(dir / "config.txt") << cfg.to_text();
  return dir;
}

std::string first_sampling_strategy(const ExperimentConfig& cfg) {
  for (const auto& s : cfg.strategies)
    if (s != "exact") return s;
  return "exact";
}

void print_selection(const Selection& sel) {
  const auto& h = sel.best;
  std::cout << "sigma1=" << h.sigma1 << " sigma2=" << h.sigma2 << " lambda1=" << h.lambda1
            << " lambda2=" << h.lambda2;
  if (!std::isnan(sel.score)) std::cout << " tune_correlation=" << sel.score;
  std::cout << "\n";
}

void write_selection(const fs::path& dir, const Selection& sel) {
  if (sel.grid.empty()) return;
  auto os = open_output(dir / "selection.csv");
  os << std::setprecision(10) << "sigma1,sigma2,lambda1,lambda2,tune_correlation\n";
  for (const auto& row : sel.grid)
    os << row.h.sigma1 << ',' << row.h.sigma2 << ',' << row.h.lambda1 << ',' << row.h.lambda2 << ','
       << row.tune_correlation << '\n';
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  if (cfg.dataset != "synthetic") throw ConfigError("gen-data only generates the synthetic dataset");
  const fs::path dir = prepare_output(cfg);
  const PairedDataset d = synthetic_circles(cfg.n_train + cfg.n_tune + cfg.n_test, cfg.data_seed);
  write_csv((dir / "x.csv").string(), d.x, {"x1", "x2"});
  write_csv((dir / "y.csv").string(), d.y, {"y1", "y2"});
  std::cout << "wrote " << d.x.rows() << " pairs to " << dir.string()
            << " (rows: train " << cfg.n_train << ", tune " << cfg.n_tune << ", test " << cfg.n_test << ")\n";
  return 0;
}

int cmd_exact(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ExperimentData data = prepare_data(cfg);
  const Selection sel = select_hyperparameters(cfg, data);
  write_selection(dir, sel);
  print_selection(sel);
  const ExactKcca ex = fit_exact(data, sel.best, cfg.dims, cfg.dense_limit);
  save_model((dir / "model.txt").string(), ex.model);
  auto os = open_output(dir / "summary.csv");
  os << std::setprecision(12) << "dimension,rho\n";
  for (Index l = 0; l < ex.model.rho.size(); ++l) os << l + 1 << ',' << ex.model.rho(l) << '\n';
  std::cout << "rho=" << ex.model.rho.transpose() << "  gap=" << ex.gap() << "\n";
  if (data.x_test.rows() >= 2)
    std::cout << "test_correlation=" << held_out_correlation(ex.model, data.x_test, data.y_test) << "\n";
  return 0;
}

int cmd_nkcca(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ExperimentData data = prepare_data(cfg);
  const Selection sel = select_hyperparameters(cfg, data);
  write_selection(dir, sel);
  print_selection(sel);
  const Hyperparameters& h = sel.best;
  ExperimentConfig single = cfg;
  single.strategies = {first_sampling_strategy(cfg)};
  if (single.strategies.front() == "exact") throw ConfigError("nkcca needs a uniform or ridge strategy");
  single.gamma_multipliers = {cfg.gamma_multipliers.front()};
  const SamplingScheme scheme = sampling_schemes(single, data, h).front();
  const std::uint64_t seed = cfg.seeds.front();
  const auto [p1, p2] = draw_plans(scheme, cfg.checkpoints.back(), seed);
  {
    auto os = open_output(dir / "plan1.txt");
    write_plan(os, p1);
    auto os2 = open_output(dir / "plan2.txt");
    write_plan(os2, p2);
  }
  const DataColumns o1(KernelSpec::rbf(h.sigma1), data.x_train);
  const DataColumns o2(KernelSpec::rbf(h.sigma2), data.y_train);
  NkccaOptions opt;
  opt.dims = cfg.dims;
  const auto path = nkcca_fit(o1, o2, p1, p2, h.lambda1, h.lambda2, cfg.checkpoints, opt);
  auto os = open_output(dir / "rank_path.csv");
  os << std::setprecision(12) << "rank,rank1,rank2,dimension,rho,test_correlation,elapsed\n";
  const bool has_test = data.x_test.rows() >= 2;
  for (const auto& e : path) {
    const double test = has_test ? held_out_correlation(e.model, data.x_test, data.y_test)
                                 : std::numeric_limits<double>::quiet_NaN();
    for (Index l = 0; l < e.model.rho.size(); ++l) {
      os << e.m1 << ',' << e.rank1 << ',' << e.rank2 << ',' << l + 1 << ',' << e.model.rho(l) << ',';
      if (has_test) os << test;
      os << ',' << e.wall_time_incremental << '\n';
    }
    std::cout << "rank " << e.m1 << ": rho=" << e.model.rho.transpose();
    if (has_test) std::cout << " test_correlation=" << test;
    std::cout << "\n";
  }
  save_model((dir / "model.txt").string(), path.back().model);
  return 0;
}

int cmd_rcca(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ExperimentData data = prepare_data(cfg);
  const Selection sel = select_hyperparameters(cfg, data);
  print_selection(sel);
  const Hyperparameters& h = sel.best;
  const bool has_test = data.x_test.rows() >= 2;
  auto os = open_output(dir / "rcca.csv");
  os << std::setprecision(12) << "features,lambda,dimension,rho,test_correlation\n";
  for (Index features : cfg.checkpoints)
    for (double lam : cfg.rcca_lambda) {
      const RccaModel m = fit_rcca(*data.x_train, *data.y_train, h.sigma1, h.sigma2, features, lam, lam, cfg.dims,
                                   cfg.seeds.front());
      if (!m.cca.warning.empty()) std::cerr << "warning: " << m.cca.warning << "\n";
      const double test = has_test && m.cca.dims() >= 1
                              ? total_correlation(rcca_project(m, data.x_test, 1), rcca_project(m, data.y_test, 2))
                              : std::numeric_limits<double>::quiet_NaN();
      for (Index l = 0; l < m.cca.dims(); ++l) {
        os << features << ',' << lam << ',' << l + 1 << ',' << m.cca.rho(l) << ',';
        if (!std::isnan(test)) os << test;
        os << '\n';
      }
      std::cout << "features " << features << " lambda " << lam << ": test_correlation=" << test << "\n";
    }
  return 0;
}

int cmd_error_curve(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ErrorCurveResult r = run_error_curve(cfg);
  auto os = open_output(dir / "error_curve.csv");
  write_error_curve_csv(os, r);
  write_run_readme(dir, "error-curve", cfg);
  std::cout << "rho=" << r.rho << " gap=" << r.gap << "; " << r.rows.size() << " rows in "
            << (dir / "error_curve.csv").string() << "\n";
  return 0;
}

int cmd_speedup(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const SpeedupResult r = run_speedup(cfg);
  auto os = open_output(dir / "speedup.csv");
  write_speedup_csv(os, r);
  write_run_readme(dir, "speedup", cfg);
  std::set<std::string> labels;
  for (const auto& row : r.rows) labels.insert(row.strategy);
  for (const auto& label : labels) {
    const SpeedupTrend t = speedup_trend(r.mean_rows(label));
    std::cout << label << ": final speedup " << t.final_speedup
              << (t.nondecreasing_last_half ? ", nondecreasing" : ", not monotone") << " over the last half\n";
  }
  return 0;
}

int cmd_compare(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ComparisonResult r = run_comparison(cfg);
  auto os = open_output(dir / "comparison.csv");
  write_comparison_csv(os, r);
  write_run_readme(dir, "compare", cfg);
  for (const auto& row : r.rows)
    if (row.seed == "mean" && row.rank == cfg.checkpoints.back())
      std::cout << row.strategy << " rank " << row.rank << ": " << row.test_correlation << "\n";
  return 0;
}

int cmd_check_bounds(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const auto reports = run_bounds(cfg);
  auto os = open_output(dir / "bounds.csv");
  write_reports_csv(os, reports);
  write_run_readme(dir, "check-bounds", cfg);
  std::size_t applicable = 0, held = 0;
  for (const auto& r : reports) {
    applicable += r.applicable;
    held += r.applicable && r.holds;
  }
  std::cout << reports.size() << " checks, " << applicable << " applicable, " << held << " hold\n";
  return held == applicable ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel CCA with Nystrom approximations"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key = value configuration file");
  std::map<std::string, std::string> overrides;
  for (const auto& key : ExperimentConfig::keys())
    app.add_option_function<std::string>(
        "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; }, "config key '" + key + "'");

  const std::map<std::string, std::pair<std::string, int (*)(const ExperimentConfig&)>> commands{
      {"gen-data", {"Write the synthetic dataset as CSV", cmd_gen_data}},
      {"exact", {"Fit exact KCCA on the training split", cmd_exact}},
      {"nkcca", {"Fit the NKCCA rank path for one seed", cmd_nkcca}},
      {"rcca", {"Fit random-feature CCA", cmd_rcca}},
      {"error-curve", {"Approximation error against rank", cmd_error_curve}},
      {"speedup", {"Incremental path timing against restarts", cmd_speedup}},
      {"compare", {"Held-out correlation of RCCA and NKCCA", cmd_compare}},
      {"check-bounds", {"Empirical bound checks on small instances", cmd_check_bounds}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const auto& [key, value] : overrides) cfg.set(key, value);
    cfg.validate();
    for (const auto& [name, entry] : commands)
      if (app.got_subcommand(name)) return entry.second(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
