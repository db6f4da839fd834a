#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mixclass/quadrature.hpp"
#include "oracles.hpp"

using namespace mixclass;

TEST_CASE("fixed integrals") {
  CHECK(integrate([](double) { return 1.0; }, 0.0, 1.0).value == 1.0);
  CHECK(integrate([](double t) { return t * t; }, 0.0, 1.0).value == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const auto s = integrate([](double t) { const double v = std::sin(10.0 * std::numbers::pi * t); return v * v; }, 0.0, 1.0);
  CHECK(std::abs(s.value - 0.5) < 1e-8);
  // GK15 is exact for polynomials up to degree 22.
  const auto single = gauss_kronrod15([](double t) { return std::pow(t, 20); }, 0.0, 1.0);
  CHECK(single.value == doctest::Approx(1.0 / 21.0).epsilon(1e-14));
}

TEST_CASE("adaptive refinement handles an endpoint singularity") {
  const auto r = integrate([](double t) { return 1.0 / std::sqrt(t); }, 0.0, 1.0, {1e-10, 1e-10, 500});
  CHECK(r.value == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(r.subdivisions > 1);
}

TEST_CASE("an exhausted subdivision budget reports the best estimate") {
  QuadratureConfig tight{1e-15, 1e-15, 2};
  try {
    integrate([](double t) { return std::sin(200.0 * t); }, 0.0, 10.0, tight);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(std::isfinite(e.best_estimate()));
    CHECK(e.error_estimate() > 0.0);
  }
}

TEST_CASE("expectations under continuous distributions") {
  const auto n = normal_distribution(1.7, 2.3);
  CHECK(std::abs(integrate_expectation([](double t) { return t; }, n) - 1.7) < 1e-8);
  CHECK(std::abs(integrate_expectation([](double t) { return (t - 1.7) * (t - 1.7); }, n) - 2.3 * 2.3) < 1e-8);
  const auto z = normal_distribution(0.0, 1.0);
  // Upper tail beyond 1.96, from erfc in 30-digit arithmetic.
  CHECK(std::abs(integrate_expectation([](double t) { return t > 1.96 ? 1.0 : 0.0; }, z) - 0.0249978951482204) < 1e-6);

  const auto t = student_t_distribution(0.5, 1.5, 6.0);
  CHECK(std::abs(integrate_expectation([](double y) { return (y - 0.5) * (y - 0.5); }, t) - 1.5 * 1.5 * 6.0 / 4.0) <
        1e-6);
  const auto g = gamma_distribution(2.5, 3.0);
  CHECK(std::abs(integrate_expectation([](double y) { return y; }, g) - 3.0) < 1e-8);
  CHECK(std::abs(integrate_expectation([](double y) { return y * y; }, g) - (9.0 + 9.0 / 2.5)) < 1e-6);
  // Quantile functions invert the CDF.
  for (double u : {1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6}) {
    CHECK(t.cdf(t.quantile(u)) == doctest::Approx(u).epsilon(1e-9));
    CHECK(g.cdf(g.quantile(u)) == doctest::Approx(u).epsilon(1e-9));
  }
}

TEST_CASE("expectations under discrete distributions") {
  const auto p = poisson_distribution(9.025);
  CHECK(sum_expectation([](long y) { return static_cast<double>(y); }, p) == doctest::Approx(9.025).epsilon(1e-10));
  CHECK(sum_expectation([](long y) { return static_cast<double>(y) * static_cast<double>(y); }, p) ==
        doctest::Approx(9.025 + 9.025 * 9.025).epsilon(1e-10));
  const auto z = zip_distribution(3.0, 0.1);
  CHECK(sum_expectation([](long y) { return static_cast<double>(y); }, z) == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(z.pmf(0) == doctest::Approx(0.1 + 0.9 * std::exp(-3.0 / 0.9)).epsilon(1e-12));
  CHECK(z.pmf(4) == doctest::Approx(0.9 * std::exp(oracle::poisson_log_pmf(4.0, 3.0 / 0.9))).epsilon(1e-12));
}

TEST_CASE("invalid configuration") {
  CHECK_THROWS_AS(QuadratureConfig({0.0, 1e-8, 10}).validate(), ConfigError);
  CHECK_THROWS_AS(QuadratureConfig({1e-8, 1e-8, 0}).validate(), ConfigError);
}
