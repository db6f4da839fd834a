#pragma once

// Reference computations written independently of the library, used to check
// its results. They favour directness over speed.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace oracle {

inline double normal_log_density(double y, double mean, double sd) {
  return std::log(boost::math::pdf(boost::math::normal_distribution<double>(mean, sd), y));
}

inline double poisson_log_pmf(double y, double mean) {
  return std::log(boost::math::pdf(boost::math::poisson_distribution<double>(mean), y));
}

inline double student_t_log_density(double y, double location, double scale, double df) {
  const boost::math::students_t_distribution<double> t(df);
  return std::log(boost::math::pdf(t, (y - location) / scale)) - std::log(scale);
}

// Gamma with the given shape and mean.
inline double gamma_log_density(double y, double shape, double mean) {
  return std::log(boost::math::pdf(boost::math::gamma_distribution<double>(shape, mean / shape), y));
}

// Likelihood of a normal mixture dataset by enumerating every joint latent
// assignment (K^n terms): sum over v of prod_i pi*_{v*_i} q_{v*_i v_i} f(y_i | v_i).
inline double enumerated_normal_mixture_loglik(const std::vector<double>& y, const std::vector<int>& v_star,
                                               double alpha0, double alpha1, double sigma,
                                               const Eigen::VectorXd& pi_star, const Eigen::MatrixXd& q) {
  const std::size_t n = y.size();
  const auto k = static_cast<std::size_t>(q.rows());
  std::vector<std::size_t> v(n, 0);
  double total = 0.0;
  while (true) {
    double term = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mean = alpha0 + alpha1 * static_cast<double>(v[i]);
      term *= pi_star[v_star[i]] * q(v_star[i], static_cast<Eigen::Index>(v[i])) *
              std::exp(normal_log_density(y[i], mean, sigma));
    }
    total += term;
    std::size_t pos = 0;
    while (pos < n && ++v[pos] == k) v[pos++] = 0;
    if (pos == n) break;
  }
  return std::log(total);
}

// Mean and standard error of a sample.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
  return {m, sd / std::sqrt(static_cast<double>(x.size()))};
}

// Stationary AR(1) series with unit innovation variance.
inline std::vector<double> ar1(std::size_t n, double rho, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> x(n);
  x[0] = z(rng) / std::sqrt(1.0 - rho * rho);
  for (std::size_t t = 1; t < n; ++t) x[t] = rho * x[t - 1] + z(rng);
  return x;
}

}  // namespace oracle
