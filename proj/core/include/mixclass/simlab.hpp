#pragma once

// Simulation scenarios and the replication driver. Scenarios are data: they
// are loaded from a versioned JSON file (data/scenarios.json by default).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixclass/io.hpp"
#include "mixclass/mcmc.hpp"
#include "mixclass/model.hpp"

namespace mixclass {

inline constexpr int kScenarioSchemaVersion = 1;

struct PriorVariant {
  std::string name;
  PriorSpec priors;
};

struct Scenario {
  std::string name;
  std::string description;
  ResponseFamily fit_family;
  FamilyKind generator = FamilyKind::Normal;
  Eigen::VectorXd pi;
  ClassificationMatrix p;
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  Eigen::VectorXd beta;  // coefficients of iid N(0,1) covariates; usually empty
  Nuisance phi;          // generator truth
  std::vector<std::size_t> sample_sizes;
  int n_replications = 50;
  std::uint64_t seed = 1;
  std::optional<ReclassificationMatrix> known_q;  // otherwise derived from (P, pi)
  SignConstraint sign_constraint = SignConstraint::PositiveSlope;
  PriorSpec priors;
  std::vector<PriorVariant> prior_variants;
  std::vector<std::string> arms;
  McmcConfig mcmc;

  std::size_t categories() const { return static_cast<std::size_t>(pi.size()); }
  ModelSpec model_spec() const;
  // Matrix used by the known-Q arm.
  ReclassificationMatrix reference_q() const;
  ReclassificationMatrix true_q() const;
  // Response variance implied by the generator at a fixed category (normal,
  // Student t); NaN for the other generators.
  double implied_variance() const;
  const PriorSpec& priors_for(std::string_view variant) const;
  void validate() const;
};

struct ScenarioFile {
  std::vector<Scenario> scenarios;
  NamedMatrices matrices;  // row-normalized

  std::vector<std::string> names() const;
  // Throws ConfigError listing the available names.
  const Scenario& find(std::string_view name) const;
};

ScenarioFile parse_scenarios(std::string_view json);
ScenarioFile load_scenarios(const std::filesystem::path& path);

// MIXCLASS_SCENARIOS when set, else the shipped file.
std::filesystem::path default_scenario_path();

struct GeneratedData {
  Dataset data;
  std::vector<int> v;  // true categories
};

GeneratedData generate(const Scenario& sc, std::size_t n, std::uint64_t rep_seed);

std::uint64_t replication_seed(const Scenario& sc, std::size_t n, int rep);

// Value of `param` in the generating model, when the fitted model contains it.
std::optional<double> true_value(const Scenario& sc, std::string_view param);

struct StudyRow {
  std::string scenario;
  std::size_t n = 0;
  int rep = 0;
  std::string arm;
  std::string param;
  double estimate = 0.0;  // posterior mean
  double lo = 0.0;
  double hi = 0.0;
  std::optional<bool> covered;
  double ess = 0.0;
  double rhat = 0.0;
  double seconds = 0.0;
  std::string status;  // ok, rhat_flag or error:<kind>
};

struct StudyOptions {
  std::vector<std::string> arms;           // empty = the scenario's arms
  std::vector<std::size_t> sample_sizes;   // empty = the scenario's sizes
  std::optional<int> replications;
  std::optional<McmcConfig> mcmc;          // replaces the scenario's sampler settings
  double level = 0.95;
  std::size_t threads = 1;
  std::vector<std::string> params;         // empty = coefficients and nuisance
  std::function<void(const StudyRow&)> on_row;
};

// Arms are naive, true, known_q, mixture (base priors) or mixture:<variant>.
void validate_arm(const Scenario& sc, std::string_view arm);

// Runs every (n, replication, arm) cell not already present in `table_csv`,
// appending rows as cells finish. Returns all rows of the scenario in the file.
std::vector<StudyRow> run_study(const Scenario& sc, const StudyOptions& options,
                                const std::filesystem::path& table_csv);

std::vector<StudyRow> read_study_csv(const std::filesystem::path& path);

struct StudySummaryRow {
  std::string arm;
  std::size_t n = 0;
  std::string param;
  int reps = 0;
  int failures = 0;
  double mean_estimate = 0.0;
  double mean_abs_error = 0.0;  // NaN without a true value
  double coverage = 0.0;        // NaN without a true value
  double mean_width = 0.0;
};

std::vector<StudySummaryRow> summarize_study(const Scenario& sc, const std::vector<StudyRow>& rows);
void write_study_summary_csv(const std::filesystem::path& path, const std::vector<StudySummaryRow>& rows);

}  // namespace mixclass
