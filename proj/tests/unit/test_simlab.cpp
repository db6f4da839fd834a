#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "mixclass/simlab.hpp"
#include "oracles.hpp"

using namespace mixclass;

namespace {

const ScenarioFile& shipped() {
  static const ScenarioFile file = load_scenarios(default_scenario_path());
  return file;
}

std::filesystem::path fresh_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mixclass_test_simlab";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove(p);
  return p;
}

McmcConfig tiny_mcmc() {
  McmcConfig cfg;
  cfg.n_chains = 2;
  cfg.burn_in = 200;
  cfg.thin = 1;
  cfg.n_kept = 200;
  return cfg;
}

}  // namespace

TEST_CASE("shipped scenarios load and validate") {
  const auto& f = shipped();
  CHECK(f.scenarios.size() == 12);
  for (const auto& sc : f.scenarios) {
    INFO(sc.name);
    CHECK_NOTHROW(sc.validate());
    for (const auto& arm : sc.arms) CHECK_NOTHROW(validate_arm(sc, arm));
  }
  // Stored matrices are row-normalized on load.
  const auto& biased = f.matrices.at("biased_q_hat");
  for (Eigen::Index r = 0; r < biased.rows(); ++r) CHECK(biased.row(r).sum() == doctest::Approx(1.0).epsilon(1e-14));

  const auto& t = f.find("t_scale3.6_df20");
  CHECK(t.implied_variance() == doctest::Approx(4.0));
  CHECK(std::isnan(f.find("poisson_p25").implied_variance()));

  try {
    f.find("nope");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("zip_w10") != std::string::npos);
  }
  CHECK_THROWS_AS(validate_arm(f.find("poisson_p25"), "mixture:informative"), ConfigError);
}

TEST_CASE("known reclassification is derived from the classification design") {
  const auto& sc = shipped().find("poisson_p25");
  const auto q = sc.reference_q().matrix();
  // Bayes' rule: q_kj = p_jk pi_j / sum_h p_hk pi_h.
  for (int k = 0; k < 2; ++k) {
    const double pistar = sc.p(0, k) * sc.pi[0] + sc.p(1, k) * sc.pi[1];
    for (int j = 0; j < 2; ++j) CHECK(q(k, j) == doctest::Approx(sc.p(j, k) * sc.pi[j] / pistar));
  }
  CHECK(true_value(sc, "alpha1").value() == 1.0);
  CHECK(true_value(sc, "q_1_0").value() == doctest::Approx(q(1, 0)));
  CHECK(true_value(sc, "pi_star_1").value() == doctest::Approx(0.5 * 0.125 + 0.5 * 0.75));
  CHECK_FALSE(true_value(sc, "q_2_0").has_value());
  CHECK_FALSE(true_value(sc, "sigma").has_value());
}

TEST_CASE("generated categories follow pi and P") {
  const auto& sc = shipped().find("normal_ordinal_a10");
  const std::size_t n = 100000;
  const auto g = generate(sc, n, 42);
  Eigen::Vector3d freq = Eigen::Vector3d::Zero();
  Eigen::Matrix3d joint = Eigen::Matrix3d::Zero();
  Eigen::Vector3d star = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    freq[g.v[i]] += 1.0;
    star[g.data.v_star[i]] += 1.0;
    joint(g.v[i], g.data.v_star[i]) += 1.0;
  }
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(freq[j] / n - sc.pi[j]) < 0.01);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(joint(j, k) / freq[j] - sc.p(j, k)) < 0.01);
  }
  const Eigen::Vector3d pistar = sc.p.matrix().transpose() * sc.pi;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(star[k] / n - pistar[k]) < 0.01);
}

TEST_CASE("generated responses have the generator's moments") {
  SUBCASE("zero-inflated poisson mean") {
    const auto& sc = shipped().find("zip_w10");
    const auto g = generate(sc, 100000, 7);
    // The overall mean (extra zeros included) is exp(eta).
    const double expect = sc.pi[0] * std::exp(sc.alpha0) + sc.pi[1] * std::exp(sc.alpha0 + sc.alpha1);
    CHECK(g.data.y.mean() == doctest::Approx(expect).epsilon(0.02));
    std::vector<double> upper;
    for (std::size_t i = 0; i < g.v.size(); ++i)
      if (g.v[i] == 1) upper.push_back(g.data.y[static_cast<Eigen::Index>(i)]);
    const auto ms = oracle::mean_se(upper);
    const double var = ms.se * ms.se * static_cast<double>(upper.size());
    const double lambda = std::exp(sc.alpha0 + sc.alpha1) / (1.0 - sc.phi.zero_weight);
    CHECK(var / ms.mean == doctest::Approx(1.0 + sc.phi.zero_weight * lambda).epsilon(0.03));
  }
  SUBCASE("student t residual variance") {
    const auto& sc = shipped().find("t_scale3.6_df20");
    const auto g = generate(sc, 100000, 8);
    std::vector<double> r;
    for (std::size_t i = 0; i < g.v.size(); ++i) r.push_back(g.data.y[static_cast<Eigen::Index>(i)] - sc.alpha0 - sc.alpha1 * g.v[i]);
    const auto ms = oracle::mean_se(r);
    CHECK(std::abs(ms.mean) < 4.0 * ms.se);
    const double var = ms.se * ms.se * static_cast<double>(r.size());
    CHECK(var == doctest::Approx(4.0).epsilon(0.03));
  }
}

TEST_CASE("without misclassification the observed category is the true one") {
  auto sc = shipped().find("poisson_p125");
  sc.p = ClassificationMatrix::identity(2);
  const auto g = generate(sc, 2000, 3);
  CHECK(g.data.v_star == g.v);
}

TEST_CASE("replication seeds are distinct and generation is reproducible") {
  const auto& sc = shipped().find("zip_w05");
  std::set<std::uint64_t> seeds;
  for (auto n : sc.sample_sizes)
    for (int rep = 0; rep < 50; ++rep) seeds.insert(replication_seed(sc, n, rep));
  CHECK(seeds.size() == sc.sample_sizes.size() * 50);
  const auto a = generate(sc, 500, replication_seed(sc, 500, 3));
  const auto b = generate(sc, 500, replication_seed(sc, 500, 3));
  CHECK(a.data.y == b.data.y);
  CHECK(a.data.v_star == b.data.v_star);
  CHECK_THROWS_AS(generate(sc, 0, 1), ConfigError);
}

TEST_CASE("studies resume where they stopped and summarize") {
  const auto& sc = shipped().find("poisson_p25");
  const auto table = fresh_path("study.csv");
  StudyOptions opt;
  opt.arms = {"naive", "true"};
  opt.sample_sizes = {200};
  opt.replications = 2;
  opt.mcmc = tiny_mcmc();
  int computed = 0;
  opt.on_row = [&](const StudyRow&) { ++computed; };
  const auto first = run_study(sc, opt, table);
  CHECK(first.size() == 2u * 2u * 2u);  // reps x arms x (alpha0, alpha1)
  CHECK(computed == 8);

  computed = 0;
  opt.replications = 3;
  const auto second = run_study(sc, opt, table);
  CHECK(computed == 4);
  CHECK(second.size() == 12);
  CHECK(read_study_csv(table).size() == 12);

  // Same cell, same numbers: rerunning into a new file reproduces the rows.
  const auto again = run_study(sc, opt, fresh_path("study_again.csv"));
  for (std::size_t i = 0; i < again.size(); ++i) {
    const auto match = std::find_if(second.begin(), second.end(), [&](const StudyRow& r) {
      return r.n == again[i].n && r.rep == again[i].rep && r.arm == again[i].arm && r.param == again[i].param;
    });
    REQUIRE(match != second.end());
    CHECK(match->estimate == doctest::Approx(again[i].estimate).epsilon(1e-12));
  }

  const auto summary = summarize_study(sc, second);
  CHECK(summary.size() == 4);
  for (const auto& s : summary) {
    CHECK(s.reps == 3);
    CHECK(s.failures == 0);
    CHECK(s.coverage >= 0.0);
    CHECK(s.coverage <= 1.0);
    CHECK(s.mean_width > 0.0);
  }
  const auto sum_path = fresh_path("summary.csv");
  write_study_summary_csv(sum_path, summary);
  CHECK(std::filesystem::file_size(sum_path) > 0);
}
