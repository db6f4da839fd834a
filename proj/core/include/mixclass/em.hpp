#pragma once

// Maximum-likelihood fitting of the misclassification mixture by EM.
//
// E-step: r_ij ∝ q_{v*_i j}(w_i) f(y_i | V = j, x_i).
// M-step: damped Newton on the weighted complete-data regression (exact in one
// step for the normal family), nuisance update, reclassification rows as
// stratum-wise weight averages (or one multinomial-logit Newton step).
// pi* has the closed-form MLE n_k / n.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixclass/model.hpp"

namespace mixclass {

struct EmConfig {
  int max_iter = 2000;
  double loglik_tol = 1e-9;  // relative change
  int n_restarts = 10;
  SignConstraint sign_constraint = SignConstraint::PositiveSlope;
  std::uint64_t seed = 20160801;
  std::size_t threads = 1;
  // Hold the reclassification matrix fixed (known-Q estimation).
  std::optional<GatingSpec> fixed_gating;

  void validate() const;
};

struct EmFit {
  Theta theta_hat;
  double loglik = 0.0;
  int n_iter = 0;
  bool converged = false;
  std::vector<double> restart_logliks;  // NaN for restarts that threw
  std::vector<double> trace;            // log-likelihood per iteration, selected restart
  double max_decrease = 0.0;            // largest per-iteration drop over all restarts
};

class EmNonConvergence : public ConvergenceError {
 public:
  EmNonConvergence(const std::string& what, EmFit best)
      : ConvergenceError(what, best.loglik), best_(std::move(best)) {}
  const EmFit& best() const { return best_; }

 private:
  EmFit best_;
};

EmFit em_fit(const ModelSpec& spec, const Dataset& data, const EmConfig& cfg = {});

// Single EM run from a given start. `fixed_alpha1` holds alpha1 at its start
// value (used by the profile likelihood). No restarts, no label flip.
EmFit em_from(const ModelSpec& spec, const Dataset& data, const Theta& start,
              const EmConfig& cfg, bool fixed_alpha1 = false, bool fixed_alpha0 = false);

struct ProfilePoint {
  double value = 0.0;
  double loglik = 0.0;
  bool ok = true;
  std::string error;
};

// For each grid value of `param` ("alpha0" or "alpha1") re-maximizes every
// other parameter, warm-started from `fitted`.
std::vector<ProfilePoint> profile_loglik(const ModelSpec& spec, const Dataset& data,
                                         const EmFit& fitted, const std::string& param,
                                         const std::vector<double>& grid,
                                         const EmConfig& cfg = {});

// Relabels V -> K-1-V: alpha0 += alpha1 (K-1), alpha1 = -alpha1, gating columns
// reversed. Leaves the likelihood unchanged.
Theta reverse_labels(const Theta& theta);

}  // namespace mixclass
