#pragma once

// Posterior sampling by data augmentation: the latent true category is drawn
// per row, after which the complete-data conditionals are conjugate for the
// normal regression and the probability rows, and random-walk Metropolis is
// used for everything else.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mixclass/diagnostics.hpp"
#include "mixclass/model.hpp"

namespace mixclass {

struct NormalPrior {
  double mean = 0.0;
  double variance = 100.0;
};

// Density proportional to x^(shape-1) exp(-rate x).
struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;
};

struct DirichletPrior {
  Eigen::VectorXd concentration;

  static DirichletPrior uniform(std::size_t k);
  // Two-category row whose first entry is Beta(a, b).
  static DirichletPrior beta(double a, double b);
};

// A Gamma slope prior applies to alpha1 in the direction of the sign
// constraint (to -alpha1 under NegativeSlope).
using SlopePrior = std::variant<NormalPrior, GammaPrior>;

struct PriorSpec {
  NormalPrior alpha0;
  SlopePrior alpha1 = NormalPrior{};
  NormalPrior beta;                     // every accurate covariate
  GammaPrior precision{0.001, 0.001};   // 1 / sigma^2, Normal and StudentT
  std::optional<double> fixed_sigma;    // point mass replaces the precision prior
  GammaPrior df{2.0, 0.1};              // StudentT
  GammaPrior shape{1.0, 0.1};           // Gamma family
  DirichletPrior zero_weight = DirichletPrior::beta(1.0, 1.0);  // ZIP
  std::optional<DirichletPrior> pi_star;                         // default uniform
  std::vector<DirichletPrior> q_rows;                            // empty = uniform rows
  NormalPrior gating{0.0, 10.0};        // every logit-gating coefficient

  DirichletPrior pi_star_prior(std::size_t k) const;
  DirichletPrior q_row_prior(std::size_t row, std::size_t k) const;
  void validate(const ModelSpec& spec, SignConstraint sign) const;
};

struct McmcConfig {
  int n_chains = 3;
  int burn_in = 15000;
  int thin = 10;
  int n_kept = 5000;
  std::uint64_t seed = 20160801;
  SignConstraint sign_constraint = SignConstraint::PositiveSlope;
  std::size_t threads = 1;
  double target_acceptance = 0.44;
  int adapt_batch = 50;
  // Hold the gating fixed (known reclassification) and skip its updates.
  std::optional<GatingSpec> fixed_gating;
  // Start every chain here instead of the automatic start.
  std::optional<Theta> init;
  // Automatic start for free gating: EM estimate (true) or naive fit with a
  // near-identity matrix (false).
  bool init_from_em = true;

  void validate() const;
};

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double ess = 0.0;
  double rhat = 1.0;
};

struct PosteriorSample {
  std::vector<std::string> names;
  std::vector<Chains> draws;  // draws[parameter][chain][kept draw]
  std::vector<bool> monitored;
  std::vector<double> ess;
  std::vector<double> rhat;
  std::vector<ParameterSummary> summaries;  // level 0.95
  std::map<std::string, double> acceptance;  // post-burn-in Metropolis rates
  bool converged = true;
  double seconds = 0.0;

  std::size_t n_chains() const;
  std::size_t n_kept() const;
  std::size_t index_of(std::string_view name) const;
  std::vector<double> pooled(std::string_view name) const;
  const ParameterSummary& summary(std::string_view name) const;
};

inline constexpr double kRhatThreshold = 1.1;

PosteriorSample mcmc_fit(const ModelSpec& spec, const Dataset& data, const PriorSpec& priors,
                         const McmcConfig& cfg);

// Per-parameter mean, sd, equal-tailed interval at `level`, ess and rhat.
std::vector<ParameterSummary> summarize(const PosteriorSample& sample, double level);

// Parameter names in draw order: alpha0, alpha1, beta_1.., the family's
// nuisance (sigma; sigma, df; shape; zero_weight), pi_star_k, then q_k_j for a
// constant gating or nu_k_j, gamma_k_j_c for a logit gating.
std::vector<std::string> parameter_names(const ModelSpec& spec);

enum class Arm { Naive, True, KnownQ, Mixture };

std::string_view to_string(Arm arm);
Arm parse_arm(std::string_view name);

// Fits the requested arms under shared priors. The naive arm treats V* as V;
// the true arm uses `true_v`; the known-Q arm fixes the gating at `known_q`.
std::map<Arm, PosteriorSample> fit_competitors(const ModelSpec& spec, const Dataset& data,
                                               const PriorSpec& priors, const McmcConfig& cfg,
                                               const std::vector<Arm>& arms,
                                               const std::optional<std::vector<int>>& true_v,
                                               const std::optional<ReclassificationMatrix>& known_q);

namespace detail {

// Draws from Dirichlet(alpha) and Gamma(shape, rate), exposed for testing the
// conjugate updates. Small shapes are handled in log space.
Eigen::VectorXd draw_dirichlet(const Eigen::VectorXd& alpha, std::mt19937_64& rng);
double draw_gamma(double shape, double rate, std::mt19937_64& rng);

// Full conditional of the normal regression coefficients given the latent
// design Z (Z'Z, Z'y), the precision tau and independent normal priors.
struct NormalConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};
NormalConditional normal_coefficient_conditional(const Eigen::MatrixXd& ztz,
                                                 const Eigen::VectorXd& zty, double tau,
                                                 const Eigen::VectorXd& prior_mean,
                                                 const Eigen::VectorXd& prior_precision);

// Sampling probabilities of the latent category of one row: proportional to
// q_{v*, j}(w) f(y | V = j, x).
Eigen::VectorXd latent_probabilities(const ModelSpec& spec, const Theta& theta, const Dataset& data,
                                     std::size_t row);

}  // namespace detail

}  // namespace mixclass
