#pragma once

// File formats. Datasets are CSV with a header naming the columns
//   y, v_star, x_<label>..., w_<label>..., and optionally v (true category).
// Any other column is an error. Configuration fragments are JSON text; field
// paths appear in every error message.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixclass/em.hpp"
#include "mixclass/mcmc.hpp"
#include "mixclass/model.hpp"

namespace mixclass {

inline constexpr int kSummarySchemaVersion = 1;

struct CsvDataset {
  Dataset data;
  std::optional<std::vector<int>> true_v;
  std::vector<std::string> x_columns;
  std::vector<std::string> w_columns;
};

// Throws DataError carrying the 1-based line number (the header is line 1).
CsvDataset parse_dataset_csv(std::istream& in);
CsvDataset read_dataset_csv(const std::filesystem::path& path);

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data,
                       const std::vector<int>* true_v = nullptr);

// One row per kept draw: chain, draw, then one column per parameter.
void write_draws_csv(const std::filesystem::path& path, const PosteriorSample& sample);

// {"schema_version", "level", "arms": {name: {converged, parameters: [...]}}}
std::string summary_json(const std::map<std::string, PosteriorSample>& arms, double level);
std::string em_fit_json(const EmFit& fit, const ModelSpec& spec);

// Named matrices may be referenced from q_rows as {"scale": s, "matrix": "<name>"}.
using NamedMatrices = std::map<std::string, Eigen::MatrixXd>;

PriorSpec parse_prior_spec(std::string_view json, const ModelSpec& spec,
                           const NamedMatrices& named = {}, PriorSpec base = {});
std::string prior_spec_json(const PriorSpec& priors);

McmcConfig parse_mcmc_config(std::string_view json, McmcConfig base = {});
std::string mcmc_config_json(const McmcConfig& cfg);

EmConfig parse_em_config(std::string_view json, EmConfig base = {});
std::string em_config_json(const EmConfig& cfg);

std::string theta_json(const Theta& theta);

}  // namespace mixclass
