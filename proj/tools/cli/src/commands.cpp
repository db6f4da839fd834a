#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "mixclass/efficiency.hpp"
#include "mixclass/simlab.hpp"
#include "mixclass_cli/cli.hpp"

namespace mixclass::cli {

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f << text << '\n';
}

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

std::size_t infer_categories(const CsvDataset& csv) {
  int top = 1;
  for (int v : csv.data.v_star) top = std::max(top, v);
  if (csv.true_v) {
    for (int v : *csv.true_v) top = std::max(top, v);
  }
  return static_cast<std::size_t>(top) + 1;
}

// Gating covariates enter the logit on a common scale.
void standardize_columns(RowMatrix& w, const std::vector<std::string>& names) {
  const auto n = w.rows();
  if (n < 2) return;
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    const double mean = w.col(c).mean();
    const double sd = std::sqrt((w.col(c).array() - mean).square().sum() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw DataError("gating covariate '" + names[static_cast<std::size_t>(c)] + "' is constant");
    w.col(c) = (w.col(c).array() - mean) / sd;
  }
}

void print_interval_table(std::ostream& out, const std::string& arm, const PosteriorSample& sample, double level) {
  out << "arm " << arm << (sample.converged ? "" : "  [rhat flag]") << '\n';
  out << std::left << std::setw(16) << "parameter" << std::right << std::setw(12) << "mean" << std::setw(12)
      << "lower" << std::setw(12) << "upper" << std::setw(10) << "ess" << std::setw(8) << "rhat" << '\n';
  const auto table = summarize(sample, level);
  out << std::fixed;
  for (const auto& s : table) {
    out << std::left << std::setw(16) << s.name << std::right << std::setprecision(4) << std::setw(12) << s.mean
        << std::setw(12) << s.lower << std::setw(12) << s.upper << std::setprecision(0) << std::setw(10) << s.ess
        << std::setprecision(3) << std::setw(8) << s.rhat << '\n';
  }
  out << std::defaultfloat << std::setprecision(6);
}

int fit_em(const FitConfig& cfg, const ModelSpec& spec, const Dataset& data, const fs::path& dir,
           std::ostream& out) {
  EmFit fit;
  bool converged = true;
  try {
    fit = em_fit(spec, data, cfg.em);
  } catch (const EmNonConvergence& e) {
    fit = e.best();
    converged = false;
  }
  converged = converged && fit.converged;
  write_text(dir / "em_fit.json", em_fit_json(fit, spec));
  out << "engine em  loglik " << std::setprecision(10) << fit.loglik << "  iterations " << fit.n_iter
      << (converged ? "" : "  [not converged]") << '\n';
  out << std::setprecision(6) << "alpha0 " << fit.theta_hat.alpha0 << "\nalpha1 " << fit.theta_hat.alpha1 << '\n';
  for (Eigen::Index c = 0; c < fit.theta_hat.beta.size(); ++c) {
    out << "beta_" << (c + 1) << ' ' << fit.theta_hat.beta[c] << '\n';
  }
  return converged ? kExitOk : kExitConvergence;
}

}  // namespace

int run_fit(const FitConfig& cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  auto csv = read_dataset_csv(cfg.data);
  const std::size_t k = cfg.categories.value_or(infer_categories(csv));

  ModelSpec spec;
  spec.family = ResponseFamily(cfg.family);
  spec.categories = k;
  spec.covariates = csv.x_columns.size();
  spec.gating = cfg.gating;
  if (cfg.gating == GatingMode::LogitModel) {
    spec.gating_covariates = csv.w_columns.size();
  } else if (!csv.w_columns.empty()) {
    err << "note: ignoring " << csv.w_columns.size() << " w_* column(s); they enter only logit gating\n";
    csv.data.w.resize(static_cast<Eigen::Index>(csv.data.size()), 0);
  }
  spec.validate();

  const PriorSpec priors = parse_prior_spec(cfg.priors.dump(), spec, cfg.matrices);
  priors.validate(spec, cfg.sign_constraint);

  std::vector<Arm> arms;
  for (const auto& a : cfg.arms) arms.push_back(parse_arm(a));
  const bool wants_true = std::find(arms.begin(), arms.end(), Arm::True) != arms.end();
  const bool wants_known = std::find(arms.begin(), arms.end(), Arm::KnownQ) != arms.end();
  if (wants_true && !csv.true_v) throw ConfigError("arms: the true arm needs a 'v' column in the data");
  std::optional<ReclassificationMatrix> known_q;
  if (wants_known) {
    if (!cfg.known_q) throw ConfigError("known_q: the known_q arm needs a reclassification matrix");
    try {
      known_q = ReclassificationMatrix(*cfg.known_q);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("known_q: ") + e.what());
    }
    if (known_q->size() != k) throw ConfigError("known_q: expected a " + std::to_string(k) + "x" + std::to_string(k) + " matrix");
  }

  csv.data.validate(spec.family, k, cfg.engine == "mcmc");
  if (csv.true_v) {
    for (std::size_t i = 0; i < csv.true_v->size(); ++i) {
      const int v = (*csv.true_v)[i];
      if (v < 0 || static_cast<std::size_t>(v) >= k) {
        throw DataError("v value " + std::to_string(v) + " outside {0.." + std::to_string(k - 1) + "}", i + 2);
      }
    }
  }
  if (cfg.gating == GatingMode::LogitModel) standardize_columns(csv.data.w, csv.w_columns);

  const auto dir = prepare_out_dir(cfg.out_dir);
  write_text(dir / "effective_config.json", cfg.to_json(priors, k).dump(2));

  if (cfg.engine == "em") return fit_em(cfg, spec, csv.data, dir, out);

  const auto fits = fit_competitors(spec, csv.data, priors, cfg.mcmc, arms, csv.true_v, known_q);
  std::map<std::string, PosteriorSample> named;
  bool converged = true;
  for (const auto& [arm, sample] : fits) {
    const std::string name(to_string(arm));
    write_draws_csv(dir / ("draws_" + name + ".csv"), sample);
    converged = converged && sample.converged;
    named.emplace(name, sample);
  }
  write_text(dir / "summary.json", summary_json(named, cfg.level));
  for (const auto& a : cfg.arms) {
    print_interval_table(out, a, named.at(a), cfg.level);
    out << '\n';
  }
  return converged ? kExitOk : kExitConvergence;
}

int run_efficiency(const EfficiencyRunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto dir = prepare_out_dir(cfg.out_dir);
  write_text(dir / "effective_config.json", cfg.to_json().dump(2));
  SurfaceOptions opts;
  opts.sigma = cfg.sigma;
  opts.threads = cfg.threads;
  opts.dedup_symmetric = cfg.dedup;
  opts.quadrature = cfg.quadrature;
  const auto grid = misclassification_grid(cfg.grid, cfg.include_boundary);
  const auto cells = rasd_surface(cfg.effect_sizes, cfg.pi1, grid, opts);
  const auto path = dir / "rasd_surface.csv";
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  write_surface_csv(f, cells);

  std::size_t failed = 0, infinite = 0;
  double max_rasd2 = 0.0;
  for (const auto& c : cells) {
    if (!c.error.empty()) {
      ++failed;
    } else if (std::isinf(c.rasd2)) {
      ++infinite;
    } else {
      max_rasd2 = std::max(max_rasd2, c.rasd2);
    }
  }
  out << "cells " << cells.size() << "  failed " << failed << "  boundary " << infinite << "  max finite rasd2 "
      << max_rasd2 << '\n'
      << "wrote " << path.string() << '\n';
  return kExitOk;
}

int run_study_command(const StudyRunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const fs::path file = cfg.scenario_file.empty() ? default_scenario_path() : fs::path(cfg.scenario_file);
  const auto scenarios = load_scenarios(file);
  Scenario sc = scenarios.find(cfg.scenario);
  if (cfg.seed) sc.seed = *cfg.seed;

  StudyOptions opts;
  opts.arms = cfg.arms;
  opts.sample_sizes = cfg.sample_sizes;
  opts.replications = cfg.reps;
  opts.mcmc = cfg.mcmc;
  opts.level = cfg.level;
  opts.threads = cfg.threads;
  opts.params = cfg.params;
  for (const auto& a : opts.arms) validate_arm(sc, a);

  const auto dir = prepare_out_dir(cfg.out_dir);
  auto effective = cfg.to_json();
  effective["scenario_file"] = file.string();
  write_text(dir / "effective_config.json", effective.dump(2));

  const auto table = dir / ("study_" + sc.name + ".csv");
  std::size_t done = 0;
  opts.on_row = [&](const StudyRow&) { ++done; };
  const auto rows = run_study(sc, opts, table);
  const auto summary = summarize_study(sc, rows);
  const auto summary_path = dir / ("study_" + sc.name + "_summary.csv");
  write_study_summary_csv(summary_path, summary);

  out << "scenario " << sc.name << "  new rows " << done << "  total rows " << rows.size() << '\n';
  out << std::left << std::setw(22) << "arm" << std::right << std::setw(8) << "n" << std::setw(13) << "param"
      << std::setw(6) << "reps" << std::setw(6) << "fail" << std::setw(12) << "mean" << std::setw(12) << "mean|err|"
      << std::setw(10) << "coverage" << std::setw(10) << "width" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& s : summary) {
    out << std::left << std::setw(22) << s.arm << std::right << std::setw(8) << s.n << std::setw(13) << s.param
        << std::setw(6) << s.reps << std::setw(6) << s.failures << std::setw(12) << s.mean_estimate << std::setw(12)
        << s.mean_abs_error << std::setw(10) << s.coverage << std::setw(10) << s.mean_width << '\n';
  }
  out << std::defaultfloat << std::setprecision(6);
  out << "wrote " << table.string() << " and " << summary_path.string() << '\n';
  return kExitOk;
}

}  // namespace mixclass::cli
