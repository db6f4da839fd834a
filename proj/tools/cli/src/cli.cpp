#include "mixclass_cli/cli.hpp"

#include <ostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "config.hpp"

namespace mixclass::cli {

namespace {

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out_dir;
  double level = 0.95;
  std::vector<std::string> arms;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* level_opt = nullptr;
};

Json load_config(const std::string& path) { return path.empty() ? Json::object() : read_config_file(path); }

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Regression with a misclassified categorical covariate", "mixclass"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "Fit the model to a CSV dataset by MCMC or EM");
  CommonFlags ff;
  std::string data, engine, family, gating;
  std::size_t categories = 0;
  fit->add_option("--config", ff.config, "JSON run configuration; flags override its values");
  auto* data_opt = fit->add_option("--data", data, "CSV with columns y, v_star and optional v, x_*, w_*");
  auto* engine_opt = fit->add_option("--engine", engine, "mcmc or em")->check(CLI::IsMember({"mcmc", "em"}));
  auto* arm_opt = fit->add_option("--arm", ff.arms, "naive, true, known_q or mixture (repeatable)");
  auto* family_opt = fit->add_option("--family", family, "normal, student_t, poisson, zip or gamma");
  auto* cat_opt = fit->add_option("--categories", categories, "number of categories (default: from the data)");
  auto* gating_opt = fit->add_option("--gating", gating, "constant or logit")->check(CLI::IsMember({"constant", "logit"}));
  ff.seed_opt = fit->add_option("--seed", ff.seed, "random seed");
  ff.threads_opt = fit->add_option("--threads", ff.threads, "worker threads")->check(CLI::PositiveNumber);
  ff.out_opt = fit->add_option("--out-dir", ff.out_dir, "output directory");
  ff.level_opt = fit->add_option("--level", ff.level, "credible level of the reported intervals");

  // efficiency
  auto* eff = app.add_subcommand("efficiency", "Write the asymptotic-efficiency surface over a misclassification grid");
  CommonFlags ef;
  std::vector<double> effects;
  double pi1 = 0.5, sigma = 1.0;
  int grid = 9;
  eff->add_option("--config", ef.config, "JSON run configuration; flags override its values");
  auto* effect_opt = eff->add_option("--effect", effects, "effect size alpha1 / sigma (repeatable)");
  auto* pi1_opt = eff->add_option("--pi1", pi1, "P(V = 1)");
  auto* grid_opt = eff->add_option("--grid", grid, "interior grid points per axis");
  auto* sigma_opt = eff->add_option("--sigma", sigma, "residual standard deviation");
  auto* boundary_flag = eff->add_flag("--include-boundary", "add the grid endpoints 0 and 1");
  auto* dedup_flag = eff->add_flag("--dedup", "keep only cells with p01 <= p10");
  ef.threads_opt = eff->add_option("--threads", ef.threads, "worker threads")->check(CLI::PositiveNumber);
  ef.out_opt = eff->add_option("--out-dir", ef.out_dir, "output directory");

  // study
  auto* study = app.add_subcommand("study", "Run or resume a simulation study for a named scenario");
  CommonFlags sf;
  std::string scenario, scenario_file;
  std::vector<std::size_t> sizes;
  std::vector<std::string> params;
  int reps = 0;
  auto* scen_opt = study->add_option("scenario", scenario, "scenario name");
  auto* file_opt = study->add_option("--scenarios", scenario_file, "scenario file (default: $MIXCLASS_SCENARIOS or the shipped file)");
  study->add_option("--config", sf.config, "JSON run configuration; flags override its values");
  auto* study_arm_opt = study->add_option("--arm", sf.arms, "arm (repeatable; default: the scenario's arms)");
  auto* n_opt = study->add_option("--n", sizes, "sample size (repeatable; default: the scenario's sizes)");
  auto* reps_opt = study->add_option("--reps", reps, "replications per sample size")->check(CLI::PositiveNumber);
  auto* param_opt = study->add_option("--param", params, "parameter to tabulate (repeatable)");
  sf.seed_opt = study->add_option("--seed", sf.seed, "scenario seed override");
  sf.threads_opt = study->add_option("--threads", sf.threads, "worker threads")->check(CLI::PositiveNumber);
  sf.out_opt = study->add_option("--out-dir", sf.out_dir, "output directory");
  sf.level_opt = study->add_option("--level", sf.level, "credible level of the intervals");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (fit->parsed()) {
      auto cfg = FitConfig::from_json(load_config(ff.config));
      if (given(data_opt)) cfg.data = data;
      if (given(engine_opt)) cfg.engine = engine;
      if (given(arm_opt)) cfg.arms = ff.arms;
      if (given(family_opt)) cfg.family = parse_family(family);
      if (given(cat_opt)) cfg.categories = categories;
      if (given(gating_opt)) cfg.gating = gating == "logit" ? GatingMode::LogitModel : GatingMode::ConstantMatrix;
      if (given(ff.seed_opt)) cfg.apply_seed(ff.seed);
      if (given(ff.threads_opt)) cfg.apply_threads(ff.threads);
      if (given(ff.out_opt)) cfg.out_dir = ff.out_dir;
      if (given(ff.level_opt)) cfg.level = ff.level;
      return run_fit(cfg, out, err);
    }
    if (eff->parsed()) {
      auto cfg = EfficiencyRunConfig::from_json(load_config(ef.config));
      if (given(effect_opt)) cfg.effect_sizes = effects;
      if (given(pi1_opt)) cfg.pi1 = pi1;
      if (given(grid_opt)) cfg.grid = grid;
      if (given(sigma_opt)) cfg.sigma = sigma;
      if (given(boundary_flag)) cfg.include_boundary = true;
      if (given(dedup_flag)) cfg.dedup = true;
      if (given(ef.threads_opt)) cfg.threads = ef.threads;
      if (given(ef.out_opt)) cfg.out_dir = ef.out_dir;
      return run_efficiency(cfg, out);
    }
    auto cfg = StudyRunConfig::from_json(load_config(sf.config));
    if (given(scen_opt)) cfg.scenario = scenario;
    if (given(file_opt)) cfg.scenario_file = scenario_file;
    if (given(study_arm_opt)) cfg.arms = sf.arms;
    if (given(n_opt)) cfg.sample_sizes = sizes;
    if (given(reps_opt)) cfg.reps = reps;
    if (given(param_opt)) cfg.params = params;
    if (given(sf.seed_opt)) cfg.seed = sf.seed;
    if (given(sf.threads_opt)) cfg.threads = sf.threads;
    if (given(sf.out_opt)) cfg.out_dir = sf.out_dir;
    if (given(sf.level_opt)) cfg.level = sf.level;
    return run_study_command(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DomainError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace mixclass::cli
