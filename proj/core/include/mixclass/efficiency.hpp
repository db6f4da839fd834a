#pragma once

// Asymptotic efficiency of the effect estimator for a binary misclassified
// covariate without accurate covariates.
//
// Parameters are ordered (alpha0, alpha1, [sigma], pi*_1, q00, q10); sigma is
// present only for the normal family. For an observation (y, v*),
//   l* = log[q_{v*0} f(y | alpha0) + (1 - q_{v*0}) f(y | alpha0 + alpha1)]
//        + v* log pi*_1 + (1 - v*) log(1 - pi*_1).
// Three covariance regimes are compared for alpha1: V observed (avar0), Q known
// (avar1) and Q unknown (avar2).

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixclass/model.hpp"
#include "mixclass/quadrature.hpp"

namespace mixclass {

struct FisherMatrix {
  Eigen::MatrixXd entries;
  std::vector<std::string> names;

  Eigen::Index index_of(const std::string& name) const;
};

std::vector<std::string> efficiency_parameter_names(const ResponseFamily& family);

// Gradient of the single-observation log-likelihood l*. Throws BoundaryError
// when sigma <= 0 or a reclassification probability is 0 or 1.
Eigen::VectorXd score(const ResponseFamily& family, const Theta& theta, double y, int v_star);

// I*(theta) = sum_{v*} pi*_{v*} E[s s' | V* = v*], each entry integrated against
// the V*-conditional mixture density of Y.
FisherMatrix expected_fisher(const ResponseFamily& family, const Theta& theta,
                             const QuadratureConfig& cfg = {});

// Information for (alpha0, alpha1, [sigma]) when (Y, V) is observed, with
// P(V = 1) = pi_1 recovered from (pi*, Q).
FisherMatrix complete_data_fisher(const ResponseFamily& family, const Theta& theta,
                                  const QuadratureConfig& cfg = {});

struct EfficiencyReport {
  double avar0 = 0.0;
  double avar1 = 0.0;
  double avar2 = 0.0;
  double rasd1 = 0.0;
  double rasd2 = 0.0;
  std::string target = "alpha1";
};

EfficiencyReport asymptotic_covariances(const ResponseFamily& family, const Theta& theta,
                                        const QuadratureConfig& cfg = {});

// Binary-covariate theta from the classification side: P(V = 1) = pi1 and
// misclassification probabilities p01 = P(V* = 1 | V = 0), p10 = P(V* = 0 | V = 1).
Theta binary_theta_from_classification(double alpha0, double alpha1, double sigma, double pi1,
                                       double p01, double p10);

// `points` equally spaced interior values i / (points + 1); with include_boundary
// the endpoints 0 and 1 are added.
std::vector<double> misclassification_grid(int points, bool include_boundary = false);

struct SurfaceCell {
  double p01 = 0.0;
  double p10 = 0.0;
  double effect_size = 0.0;
  double rasd1 = 0.0;  // NaN when the cell failed
  double rasd2 = 0.0;  // NaN when the cell failed, +inf on the boundary
  std::string error;
};

struct SurfaceOptions {
  double sigma = 1.0;
  std::size_t threads = 1;
  bool dedup_symmetric = false;  // keep only p01 <= p10
  QuadratureConfig quadrature{};
};

// Cells ordered by effect size, then p01, then p10, regardless of thread count.
std::vector<SurfaceCell> rasd_surface(const std::vector<double>& effect_sizes, double pi1,
                                      const std::vector<double>& grid,
                                      const SurfaceOptions& options = {});

// CSV with header p01,p10,effect_size,rasd1,rasd2; failed values are empty.
void write_surface_csv(std::ostream& out, const std::vector<SurfaceCell>& cells);

}  // namespace mixclass
