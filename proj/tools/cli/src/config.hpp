#pragma once

// Run configurations of the three commands. Each is read from an optional JSON
// file, then overridden by flags, then written back as effective_config.json;
// feeding that file to --config reproduces the run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixclass/efficiency.hpp"
#include "mixclass/em.hpp"
#include "mixclass/io.hpp"
#include "mixclass/mcmc.hpp"

namespace mixclass::cli {

using Json = nlohmann::ordered_json;

Json read_config_file(const std::filesystem::path& path);

struct FitConfig {
  std::string data;
  std::string engine = "mcmc";
  std::vector<std::string> arms{"mixture"};
  FamilyKind family = FamilyKind::Normal;
  std::optional<std::size_t> categories;  // from the data when absent
  GatingMode gating = GatingMode::ConstantMatrix;
  SignConstraint sign_constraint = SignConstraint::PositiveSlope;
  Json priors = Json::object();  // resolved once the data fixes the model shape
  NamedMatrices matrices;
  McmcConfig mcmc;
  EmConfig em;
  std::optional<Eigen::MatrixXd> known_q;
  double level = 0.95;
  std::string out_dir = ".";
  std::size_t threads = 1;

  static FitConfig from_json(const Json& j);
  Json to_json(const PriorSpec& resolved_priors, std::size_t resolved_categories) const;
  void apply_seed(std::uint64_t seed);
  void apply_threads(std::size_t n);
  // Checks that need no data.
  void validate() const;
};

struct EfficiencyRunConfig {
  std::vector<double> effect_sizes{1.0};
  double pi1 = 0.5;
  int grid = 9;
  bool include_boundary = false;
  bool dedup = false;
  double sigma = 1.0;
  QuadratureConfig quadrature;
  std::string out_dir = ".";
  std::size_t threads = 1;

  static EfficiencyRunConfig from_json(const Json& j);
  Json to_json() const;
  void validate() const;
};

struct StudyRunConfig {
  std::string scenario;
  std::string scenario_file;  // empty = MIXCLASS_SCENARIOS or the shipped file
  std::vector<std::string> arms;
  std::vector<std::size_t> sample_sizes;
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  std::optional<McmcConfig> mcmc;
  std::vector<std::string> params;
  double level = 0.95;
  std::string out_dir = ".";
  std::size_t threads = 1;

  static StudyRunConfig from_json(const Json& j);
  Json to_json() const;
  void validate() const;
};

}  // namespace mixclass::cli
