#include "mixclass/quadrature.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "mixclass/error.hpp"

namespace mixclass {

namespace {

// Abscissae and weights of the 15-point Kronrod rule and its embedded 7-point
// Gauss rule on [-1, 1] (QUADPACK qk15).
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

double eval(const Integrand& f, double t) {
  const double v = f(t);
  if (!std::isfinite(v)) throw NumericError("integrand is not finite at t=" + std::to_string(t));
  return v;
}

}  // namespace

void QuadratureConfig::validate() const {
  if (!(abs_tol > 0.0) || !(rel_tol > 0.0)) throw ConfigError("quadrature tolerances must be > 0");
  if (max_subdivisions < 1) throw ConfigError("max_subdivisions must be >= 1");
}

QuadratureResult gauss_kronrod15(const Integrand& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = eval(f, center);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int i = 0; i < 7; ++i) {
    const double dx = half * kXgk[static_cast<std::size_t>(i)];
    const double s = eval(f, center - dx) + eval(f, center + dx);
    kronrod += kWgk[static_cast<std::size_t>(i)] * s;
    if (i % 2 == 1) gauss += kWg[static_cast<std::size_t>(i / 2)] * s;
  }
  return {kronrod * half, std::abs((kronrod - gauss) * half), 0};
}

QuadratureResult integrate(const Integrand& f, double a, double b, const QuadratureConfig& cfg) {
  cfg.validate();
  if (!(std::isfinite(a) && std::isfinite(b)) || !(a < b)) {
    throw ConfigError("integration bounds must be finite with a < b");
  }
  std::priority_queue<Segment> heap;
  const auto first = gauss_kronrod15(f, a, b);
  heap.push({a, b, first.value, first.error});
  double value = first.value;
  double error = first.error;
  int splits = 0;
  while (error > std::max(cfg.abs_tol, cfg.rel_tol * std::abs(value))) {
    if (splits >= cfg.max_subdivisions) {
      throw ConvergenceError("quadrature subdivision budget exhausted", value, error);
    }
    const Segment worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      throw ConvergenceError("quadrature interval cannot be bisected further", value, error);
    }
    const auto left = gauss_kronrod15(f, worst.a, mid);
    const auto right = gauss_kronrod15(f, mid, worst.b);
    heap.push({worst.a, mid, left.value, left.error});
    heap.push({mid, worst.b, right.value, right.error});
    ++splits;
    // Re-sum from the partition to avoid drift from incremental updates.
    auto copy = heap;
    value = 0.0;
    error = 0.0;
    while (!copy.empty()) {
      value += copy.top().value;
      error += copy.top().error;
      copy.pop();
    }
  }
  return {value, error, splits};
}

ContinuousDistribution normal_distribution(double mean, double sd) {
  if (!(sd > 0.0)) throw ConfigError("normal sd must be > 0");
  boost::math::normal_distribution<double> d(mean, sd);
  return {[d](double t) { return boost::math::cdf(d, t); },
          [d](double u) { return boost::math::quantile(d, u); }};
}

ContinuousDistribution student_t_distribution(double location, double scale, double df) {
  if (!(scale > 0.0) || !(df > 0.0)) throw ConfigError("student t scale and df must be > 0");
  boost::math::students_t_distribution<double> d(df);
  return {[=](double t) { return boost::math::cdf(d, (t - location) / scale); },
          [=](double u) { return location + scale * boost::math::quantile(d, u); }};
}

ContinuousDistribution gamma_distribution(double shape, double mean) {
  if (!(shape > 0.0) || !(mean > 0.0)) throw ConfigError("gamma shape and mean must be > 0");
  boost::math::gamma_distribution<double> d(shape, mean / shape);
  return {[d](double t) { return t <= 0.0 ? 0.0 : boost::math::cdf(d, t); },
          [d](double u) { return boost::math::quantile(d, u); }};
}

double integrate_expectation(const Integrand& g, const ContinuousDistribution& dist,
                             const QuadratureConfig& cfg, double eps) {
  if (!dist.quantile) throw ConfigError("distribution has no quantile function");
  const auto& q = dist.quantile;
  return integrate([&](double u) { return g(q(u)); }, eps, 1.0 - eps, cfg).value;
}

DiscreteDistribution poisson_distribution(double mean) {
  if (!(mean > 0.0)) throw ConfigError("poisson mean must be > 0");
  const double log_mean = std::log(mean);
  return {[=](long y) {
            const double yd = static_cast<double>(y);
            return std::exp(yd * log_mean - mean - std::lgamma(yd + 1.0));
          },
          mean};
}

DiscreteDistribution zip_distribution(double mean, double zero_weight) {
  if (!(mean > 0.0)) throw ConfigError("zip mean must be > 0");
  if (!(zero_weight >= 0.0 && zero_weight < 1.0)) throw ConfigError("zip weight outside [0,1)");
  const double lambda = mean / (1.0 - zero_weight);
  const double log_lambda = std::log(lambda);
  return {[=](long y) {
            const double yd = static_cast<double>(y);
            const double pois = std::exp(yd * log_lambda - lambda - std::lgamma(yd + 1.0));
            return (y == 0 ? zero_weight : 0.0) + (1.0 - zero_weight) * pois;
          },
          lambda};
}

double sum_expectation(const std::function<double(long)>& g, const DiscreteDistribution& dist,
                       double tail_tol) {
  double total = 0.0;
  double mass = 0.0;
  for (long y = 0;; ++y) {
    const double p = dist.pmf(y);
    if (p > 0.0) {
      total += g(y) * p;
      mass += p;
    }
    if (static_cast<double>(y) > dist.mean && (1.0 - mass < tail_tol || p < 1e-300)) break;
    if (y > 10'000'000) throw ConvergenceError("pmf summation did not terminate", total);
  }
  return total;
}

}  // namespace mixclass
