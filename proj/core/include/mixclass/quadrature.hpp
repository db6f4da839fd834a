#pragma once

// One-dimensional adaptive Gauss-Kronrod (7/15) integration and expectations
// over response distributions via the quantile transform
//   E[g(Y)] = int_0^1 g(F^{-1}(u)) du.

#include <functional>

#include "mixclass/error.hpp"

namespace mixclass {

struct QuadratureConfig {
  double abs_tol = 1e-10;
  double rel_tol = 1e-8;
  int max_subdivisions = 200;

  void validate() const;
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // accumulated |Kronrod - Gauss| over the final partition
  int subdivisions = 0;
};

using Integrand = std::function<double(double)>;

// Globally adaptive bisection of the subinterval with the largest error until
// error <= max(abs_tol, rel_tol * |value|). Throws ConvergenceError carrying the
// best estimate when the subdivision budget runs out.
QuadratureResult integrate(const Integrand& f, double a, double b,
                           const QuadratureConfig& cfg = {});

// Single 15-point Kronrod / 7-point Gauss pair on [a, b].
QuadratureResult gauss_kronrod15(const Integrand& f, double a, double b);

struct ContinuousDistribution {
  std::function<double(double)> cdf;
  std::function<double(double)> quantile;
};

ContinuousDistribution normal_distribution(double mean, double sd);
ContinuousDistribution student_t_distribution(double location, double scale, double df);
ContinuousDistribution gamma_distribution(double shape, double mean);

inline constexpr double kQuantileClip = 1e-12;

// int_{eps}^{1-eps} g(quantile(u)) du
double integrate_expectation(const Integrand& g, const ContinuousDistribution& dist,
                             const QuadratureConfig& cfg = {}, double eps = kQuantileClip);

struct DiscreteDistribution {
  std::function<double(long)> pmf;  // support {0, 1, 2, ...}
  double mean = 0.0;                // summation always runs past the mean
};

DiscreteDistribution poisson_distribution(double mean);
// Zero-inflated Poisson with extra-zero weight w and overall mean `mean`.
DiscreteDistribution zip_distribution(double mean, double zero_weight);

// sum_y g(y) pmf(y), truncated once the remaining tail mass drops below tail_tol.
double sum_expectation(const std::function<double(long)>& g, const DiscreteDistribution& dist,
                       double tail_tol = 1e-12);

}  // namespace mixclass
