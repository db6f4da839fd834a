#pragma once

// Weighted complete-data regression shared by the EM M-step, naive fits and
// sampler initialization. Row i contributes to component j with weight
// R(i, j); the component linear predictor is alpha0 + alpha1 j + x_i' beta.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "mixclass/model.hpp"

namespace mixclass {

struct EtaDerivatives {
  double d1;  // d log f / d eta
  double d2;  // d^2 log f / d eta^2 (expected value for StudentT)
};

EtaDerivatives eta_derivatives(const ResponseFamily& family, const Nuisance& phi, double y,
                               double eta);

// Coefficients packed as (alpha0, alpha1, beta...).
Eigen::VectorXd pack_coefficients(const Theta& theta);
void unpack_coefficients(const Eigen::VectorXd& c, Theta& theta);

// sum_ij R(i,j) log f(y_i | V = j, x_i)
double weighted_loglik(const ResponseFamily& family, const Theta& theta, const Dataset& data,
                       const Eigen::MatrixXd& weights);

struct NewtonOptions {
  int max_steps = 1;
  double step_tol = 1e-10;
  std::vector<bool> fixed;  // per packed coefficient; empty = all free
};

// Damped Newton ascent on the weighted log-likelihood in the regression
// coefficients. Never decreases the objective. Returns the final Hessian of the
// free block (negative definite at an interior maximum).
Eigen::MatrixXd update_coefficients(const ResponseFamily& family, Theta& theta,
                                    const Dataset& data, const Eigen::MatrixXd& weights,
                                    const NewtonOptions& options);

// Maximizes the weighted log-likelihood over the family's nuisance parameters
// (closed form for the normal variance, Brent search otherwise).
void update_nuisance(const ResponseFamily& family, Theta& theta, const Dataset& data,
                     const Eigen::MatrixXd& weights);

struct GlmFit {
  Theta theta;
  Eigen::VectorXd std_errors;  // for the packed coefficients; 0 when fixed
  double loglik = 0.0;
};

// Ordinary GLM maximum likelihood treating `categories` as the true covariate.
// With a single category alpha1 is held at 0.
GlmFit fit_glm(const ResponseFamily& family, const Dataset& data,
               const std::vector<int>& categories, std::size_t n_categories);

// One-hot weight matrix for the given category assignment.
Eigen::MatrixXd indicator_weights(const std::vector<int>& categories, std::size_t n_categories);

}  // namespace mixclass
