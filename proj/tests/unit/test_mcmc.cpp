#include <random>

#include "doctest.h"
#include "mixclass/mcmc.hpp"
#include "oracles.hpp"

using namespace mixclass;

namespace {

McmcConfig quick_config(std::uint64_t seed = 11) {
  McmcConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 2000;
  cfg.thin = 2;
  cfg.n_kept = 2000;
  cfg.seed = seed;
  return cfg;
}

Dataset empty_data() {
  Dataset d;
  d.y.resize(0);
  d.x.resize(0, 0);
  d.w.resize(0, 0);
  return d;
}

Dataset normal_data(std::size_t n, double a0, double a1, double sigma, double flip, std::uint64_t seed,
                    std::vector<int>* true_v = nullptr) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5), err(flip);
  std::normal_distribution<double> z(0.0, 1.0);
  Dataset d;
  d.y.resize(static_cast<Eigen::Index>(n));
  d.x.resize(static_cast<Eigen::Index>(n), 0);
  d.w.resize(static_cast<Eigen::Index>(n), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int v = coin(rng) ? 1 : 0;
    if (true_v) true_v->push_back(v);
    d.v_star.push_back(err(rng) ? 1 - v : v);
    d.y[static_cast<Eigen::Index>(i)] = a0 + a1 * v + sigma * z(rng);
  }
  return d;
}

ModelSpec spec_of(FamilyKind kind, std::size_t k = 2) {
  ModelSpec s;
  s.family = ResponseFamily(kind);
  s.categories = k;
  return s;
}

// Posterior mean agrees with `target` to within `z` Monte Carlo standard errors.
void check_mean(const PosteriorSample& s, std::string_view name, double target, double z = 5.0) {
  const auto& sum = s.summary(name);
  const double mcse = sum.sd / std::sqrt(sum.ess);
  INFO(name, " mean ", sum.mean, " target ", target, " mcse ", mcse);
  CHECK(std::abs(sum.mean - target) <= z * mcse);
}

}  // namespace

TEST_CASE("dirichlet and gamma draws have the right moments") {
  std::mt19937_64 rng(1);
  const Eigen::Vector3d alpha(0.5, 2.0, 3.5);
  const double a0 = alpha.sum();
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  const int n = 200000;
  for (int r = 0; r < n; ++r) {
    const Eigen::VectorXd d = detail::draw_dirichlet(alpha, rng);
    CHECK_MESSAGE(std::abs(d.sum() - 1.0) < 1e-12, "draw off the simplex");
    sum += d;
    sq += d.cwiseProduct(d);
  }
  for (int j = 0; j < 3; ++j) {
    const double mean = alpha[j] / a0;
    const double var = mean * (1.0 - mean) / (a0 + 1.0);
    CHECK(std::abs(sum[j] / n - mean) < 4.0 * std::sqrt(var / n));
    CHECK(sq[j] / n - std::pow(sum[j] / n, 2) == doctest::Approx(var).epsilon(0.02));
  }

  for (const auto& [shape, rate] : {std::pair{0.05, 2.0}, std::pair{0.7, 1.0}, std::pair{4.0, 0.5}}) {
    double s = 0.0;
    for (int r = 0; r < n; ++r) {
      const double g = detail::draw_gamma(shape, rate, rng);
      CHECK_MESSAGE(g >= 0.0, "negative gamma draw");
      s += g;
    }
    const double mean = shape / rate, var = shape / (rate * rate);
    CHECK(std::abs(s / n - mean) < 4.0 * std::sqrt(var / n));
  }
}

TEST_CASE("normal coefficient conditional matches the conjugate formula") {
  Eigen::MatrixXd z(5, 2);
  z << 1, 0, 1, 1, 1, 1, 1, 0, 1, 1;
  const Eigen::VectorXd y = (Eigen::VectorXd(5) << 0.3, 1.9, 2.2, -0.1, 1.4).finished();
  const double tau = 2.5;
  const Eigen::Vector2d m0(0.5, -1.0), p0(0.01, 0.2);
  const auto cond = detail::normal_coefficient_conditional(z.transpose() * z, z.transpose() * y, tau, m0, p0);
  // Precision-weighted combination of the likelihood and the prior.
  const Eigen::Matrix2d prec = tau * z.transpose() * z + Eigen::Matrix2d(p0.asDiagonal());
  const Eigen::Matrix2d cov = prec.inverse();
  const Eigen::Vector2d mean = cov * (tau * z.transpose() * y + p0.cwiseProduct(m0));
  CHECK((cond.covariance - cov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cond.mean - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("latent probabilities follow Bayes' rule") {
  Theta t;
  t.alpha0 = 1.0;
  t.alpha1 = 0.8;
  t.beta = Eigen::VectorXd::Constant(1, 0.4);
  t.phi.sigma = 1.3;
  t.phi.df = 5.0;
  t.pi_star = Eigen::Vector3d(0.2, 0.3, 0.5);
  Eigen::Matrix3d q;
  q << 0.7, 0.2, 0.1, 0.15, 0.6, 0.25, 0.05, 0.15, 0.8;
  t.gating = GatingSpec(ReclassificationMatrix(q));
  Dataset d;
  d.y = Eigen::Vector2d(2.9, 0.4);
  d.v_star = {1, 2};
  d.x.resize(2, 1);
  d.x << 0.5, -1.0;
  d.w.resize(2, 0);
  for (auto kind : {FamilyKind::Normal, FamilyKind::StudentT}) {
    auto spec = spec_of(kind, 3);
    spec.covariates = 1;
    for (std::size_t i = 0; i < 2; ++i) {
      Eigen::Vector3d expect;
      for (int j = 0; j < 3; ++j) {
        const double mean = t.alpha0 + t.alpha1 * j + t.beta[0] * d.x(static_cast<Eigen::Index>(i), 0);
        const double y = d.y[static_cast<Eigen::Index>(i)];
        const double f = kind == FamilyKind::Normal ? oracle::normal_log_density(y, mean, t.phi.sigma)
                                                    : oracle::student_t_log_density(y, mean, t.phi.sigma, t.phi.df);
        expect[j] = q(d.v_star[i], j) * std::exp(f);
      }
      expect /= expect.sum();
      const auto got = detail::latent_probabilities(spec, t, d, i);
      CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("parameter names follow the draw order") {
  auto s = spec_of(FamilyKind::StudentT, 2);
  s.covariates = 2;
  const std::vector<std::string> expect{"alpha0", "alpha1", "beta_1", "beta_2", "sigma", "df",
                                        "pi_star_0", "pi_star_1", "q_0_0", "q_0_1", "q_1_0", "q_1_1"};
  CHECK(parameter_names(s) == expect);
  auto g = spec_of(FamilyKind::ZeroInflatedPoisson, 2);
  g.gating = GatingMode::LogitModel;
  g.gating_covariates = 1;
  const std::vector<std::string> logit{"alpha0", "alpha1", "zero_weight", "pi_star_0", "pi_star_1",
                                       "nu_0_0", "nu_1_0", "gamma_0_0_1", "gamma_1_0_1"};
  CHECK(parameter_names(g) == logit);
}

TEST_CASE("configuration errors") {
  McmcConfig cfg;
  cfg.thin = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = McmcConfig{};
  cfg.target_acceptance = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(parse_arm("both"), ConfigError);
  CHECK(parse_arm("known_q") == Arm::KnownQ);

  PriorSpec p;
  p.alpha1 = GammaPrior{2.0, 1.0};
  CHECK_THROWS_AS(p.validate(spec_of(FamilyKind::Normal), SignConstraint::None), ConfigError);
}

TEST_CASE("same seed gives identical draws regardless of thread count") {
  const auto d = normal_data(150, 0.0, 2.0, 1.0, 0.1, 3);
  auto a = quick_config(5);
  a.burn_in = 300;
  a.n_kept = 200;
  auto b = a;
  b.threads = 2;
  const auto sa = mcmc_fit(spec_of(FamilyKind::Normal), d, PriorSpec{}, a);
  const auto sb = mcmc_fit(spec_of(FamilyKind::Normal), d, PriorSpec{}, b);
  CHECK(sa.draws == sb.draws);
  auto c = a;
  c.seed = 6;
  CHECK(mcmc_fit(spec_of(FamilyKind::Normal), d, PriorSpec{}, c).draws != sa.draws);
}

TEST_CASE("without data the sampler returns the prior") {
  SUBCASE("normal regression with conjugate updates") {
    PriorSpec p;
    p.fixed_sigma = 1.0;
    auto cfg = quick_config();
    cfg.sign_constraint = SignConstraint::None;
    const auto s = mcmc_fit(spec_of(FamilyKind::Normal), empty_data(), p, cfg);
    check_mean(s, "alpha0", 0.0);
    check_mean(s, "alpha1", 0.0);
    CHECK(s.summary("alpha0").sd == doctest::Approx(10.0).epsilon(0.05));
    check_mean(s, "pi_star_0", 0.5);
    CHECK(s.summary("q_0_0").sd == doctest::Approx(std::sqrt(1.0 / 12.0)).epsilon(0.05));
  }
  SUBCASE("poisson regression with random-walk updates and a gamma slope prior") {
    PriorSpec p;
    p.alpha1 = GammaPrior{2.0, 1.0};
    p.alpha0 = NormalPrior{0.0, 1.0};
    const auto s = mcmc_fit(spec_of(FamilyKind::Poisson), empty_data(), p, quick_config());
    check_mean(s, "alpha1", 2.0);
    CHECK(s.summary("alpha1").sd == doctest::Approx(std::sqrt(2.0)).epsilon(0.1));
    check_mean(s, "alpha0", 0.0);
    CHECK(s.summary("alpha0").sd == doctest::Approx(1.0).epsilon(0.1));
  }
}

TEST_CASE("identity gating reproduces the conjugate regression posterior") {
  std::vector<int> v;
  const auto d = normal_data(200, 1.0, 2.0, 1.0, 0.0, 7, &v);
  PriorSpec p;
  p.fixed_sigma = 1.0;
  auto cfg = quick_config();
  cfg.sign_constraint = SignConstraint::None;
  cfg.fixed_gating = GatingSpec(ReclassificationMatrix::identity(2));
  const auto s = mcmc_fit(spec_of(FamilyKind::Normal), d, p, cfg);

  Eigen::MatrixXd z(200, 2);
  for (Eigen::Index i = 0; i < 200; ++i) z.row(i) << 1.0, v[static_cast<std::size_t>(i)];
  const Eigen::Matrix2d prec = z.transpose() * z + Eigen::Matrix2d::Identity() / 100.0;
  const Eigen::Matrix2d cov = prec.inverse();
  const Eigen::Vector2d mean = cov * (z.transpose() * d.y);
  check_mean(s, "alpha0", mean[0]);
  check_mean(s, "alpha1", mean[1]);
  CHECK(s.summary("alpha1").sd == doctest::Approx(std::sqrt(cov(1, 1))).epsilon(0.05));
  CHECK_FALSE(s.monitored[s.index_of("q_0_0")]);
  CHECK(s.summary("q_0_1").mean == 0.0);
}

TEST_CASE("every arm covers the truth without misclassification") {
  std::vector<int> v;
  const auto d = normal_data(400, 0.0, 3.0, 1.0, 0.0, 9, &v);
  const auto fits = fit_competitors(spec_of(FamilyKind::Normal), d, PriorSpec{}, quick_config(),
                                    {Arm::Naive, Arm::True, Arm::KnownQ, Arm::Mixture}, v,
                                    ReclassificationMatrix::identity(2));
  CHECK(fits.size() == 4);
  for (const auto& [arm, s] : fits) {
    INFO("arm ", to_string(arm));
    const auto& a1 = s.summary("alpha1");
    CHECK(a1.lower < 3.0);
    CHECK(a1.upper > 3.0);
    CHECK(s.converged);
  }
  const auto& mix = fits.at(Arm::Mixture);
  CHECK(mix.summary("q_0_0").mean > 0.95);
  CHECK(mix.summary("q_1_1").mean > 0.95);
}

TEST_CASE("misclassification attenuates the naive slope but not the mixture slope") {
  std::vector<int> v;
  const auto d = normal_data(1600, 0.0, 4.0, 1.0, 0.2, 10, &v);
  const auto fits = fit_competitors(spec_of(FamilyKind::Normal), d, PriorSpec{}, quick_config(),
                                    {Arm::Naive, Arm::Mixture}, std::nullopt, std::nullopt);
  CHECK(fits.at(Arm::Naive).summary("alpha1").upper < 3.0);
  const auto& a1 = fits.at(Arm::Mixture).summary("alpha1");
  CHECK(a1.lower < 4.0);
  CHECK(a1.upper > 4.0);
}
