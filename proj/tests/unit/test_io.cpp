#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mixclass/io.hpp"

using namespace mixclass;

namespace {

CsvDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset_csv(in);
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const DataError& e) {
    return e.line();
  }
  return 0;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mixclass_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ModelSpec binary_normal() {
  ModelSpec s;
  s.family = ResponseFamily(FamilyKind::Normal);
  s.categories = 2;
  return s;
}

}  // namespace

TEST_CASE("dataset columns are recognised by name") {
  const auto d = parse("w_age,y,x_dose,v_star,v\n0.5,1.25,3,1,0\n-1,2.5,4,0,0\n");
  CHECK(d.data.size() == 2);
  CHECK(d.data.y[1] == 2.5);
  CHECK(d.data.v_star == std::vector<int>{1, 0});
  REQUIRE(d.true_v);
  CHECK(*d.true_v == std::vector<int>{0, 0});
  CHECK(d.x_columns == std::vector<std::string>{"x_dose"});
  CHECK(d.w_columns == std::vector<std::string>{"w_age"});
  CHECK(d.data.x(1, 0) == 4.0);
  CHECK(d.data.w(0, 0) == 0.5);
  CHECK_FALSE(parse("y,v_star\n1,0\n").true_v);
}

TEST_CASE("malformed datasets report the offending line") {
  CHECK(error_line("y,v_star,dose\n1,0,2\n") == 1);
  CHECK(error_line("y\n1\n") == 1);
  CHECK(error_line("y,v_star\n1,0\n2,1\nabc,0\n") == 4);
  CHECK(error_line("y,v_star\n1,0\n2\n") == 3);
  CHECK(error_line("y,v_star\n1,0.5\n") == 2);
  CHECK(error_line("y,v_star\n1,-1\n") == 2);
  CHECK(error_line("y,y,v_star\n1,1,0\n") == 1);
  CHECK(error_line("") == 1);
  try {
    parse("y,v_star,dose\n1,0,2\n");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("dose") != std::string::npos);
  }
  CHECK_THROWS_AS(read_dataset_csv(temp_path("does_not_exist.csv")), DataError);
}

TEST_CASE("datasets survive a write and read unchanged") {
  Dataset d;
  d.y = Eigen::Vector3d(0.1, 1.0 / 3.0, -2.5e-7);
  d.v_star = {0, 2, 1};
  d.x.resize(3, 1);
  d.x << 1.0 / 7.0, 2.0, 3.0;
  d.w.resize(3, 0);
  const std::vector<int> v{0, 1, 1};
  const auto path = temp_path("round_trip.csv");
  write_dataset_csv(path, d, &v);
  const auto back = read_dataset_csv(path);
  CHECK(back.data.y == d.y);
  CHECK(back.data.x == d.x);
  CHECK(back.data.v_star == d.v_star);
  CHECK(*back.true_v == v);
}

TEST_CASE("prior specifications round trip and report field paths") {
  const auto spec = binary_normal();
  const std::string text = R"({"alpha0": {"normal": [1, 4]}, "alpha1": {"gamma": [2, 0.5]},
    "pi_star": {"beta": [2, 3]}, "q_rows": {"scale": 10, "matrix": [[0.8, 0.2], [0.3, 0.7]]},
    "fixed_sigma": 1.5})";
  const auto p = parse_prior_spec(text, spec);
  CHECK(p.alpha0.mean == 1.0);
  CHECK(p.alpha0.variance == 4.0);
  CHECK(std::get<GammaPrior>(p.alpha1).rate == 0.5);
  CHECK(p.pi_star->concentration == Eigen::Vector2d(2.0, 3.0));
  REQUIRE(p.q_rows.size() == 2);
  CHECK(p.q_rows[1].concentration.isApprox(Eigen::Vector2d(3.0, 7.0)));
  CHECK(*p.fixed_sigma == 1.5);

  const auto again = parse_prior_spec(prior_spec_json(p), spec);
  CHECK(prior_spec_json(again) == prior_spec_json(p));

  const NamedMatrices named{{"validation", (Eigen::Matrix2d() << 0.9, 0.1, 0.2, 0.8).finished()}};
  const auto by_name = parse_prior_spec(R"({"q_rows": {"scale": 2, "matrix": "validation"}})", spec, named);
  CHECK(by_name.q_rows[0].concentration.isApprox(Eigen::Vector2d(1.8, 0.2)));

  auto message = [&](const std::string& json) {
    try {
      parse_prior_spec(json, spec, named);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"alpha0": {"normal": [1]}})").rfind("priors.alpha0.normal", 0) == 0);
  CHECK(message(R"({"alph0": {"normal": [1, 2]}})").rfind("priors.alph0: unknown field", 0) == 0);
  CHECK(message(R"({"q_rows": {"scale": 2, "matrix": "missing"}})").rfind("priors.q_rows.matrix", 0) == 0);
  CHECK(message("{not json").find("invalid JSON") != std::string::npos);
}

TEST_CASE("sampler and EM settings round trip") {
  const auto cfg = parse_mcmc_config(R"({"n_chains": 4, "burn_in": 100, "seed": 18446744073709551615,
                                         "sign_constraint": "negative"})");
  CHECK(cfg.n_chains == 4);
  CHECK(cfg.seed == 18446744073709551615ULL);
  CHECK(cfg.sign_constraint == SignConstraint::NegativeSlope);
  CHECK(cfg.thin == McmcConfig{}.thin);
  CHECK(mcmc_config_json(parse_mcmc_config(mcmc_config_json(cfg))) == mcmc_config_json(cfg));
  CHECK_THROWS_AS(parse_mcmc_config(R"({"thin": 1.5})"), ConfigError);
  CHECK_THROWS_AS(parse_mcmc_config(R"({"burn_inn": 10})"), ConfigError);

  const auto em = parse_em_config(R"({"n_restarts": 2, "loglik_tol": 1e-6})");
  CHECK(em.n_restarts == 2);
  CHECK(em_config_json(parse_em_config(em_config_json(em))) == em_config_json(em));
}

TEST_CASE("summary and draw files") {
  PosteriorSample s;
  s.names = {"alpha0", "q_0_0"};
  s.draws = {Chains{{1.0, 2.0, 3.0}, {2.0, 3.0, 4.0}}, Chains{{1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}}};
  s.monitored = {true, false};
  s.acceptance["alpha0"] = 0.4;
  const auto j = nlohmann::json::parse(summary_json({{"mixture", s}}, 0.9));
  CHECK(j["schema_version"] == kSummarySchemaVersion);
  CHECK(j["level"] == 0.9);
  const auto& params = j["arms"]["mixture"]["parameters"];
  REQUIRE(params.size() == 2);
  CHECK(params[0]["name"] == "alpha0");
  CHECK(params[0]["mean"].get<double>() == doctest::Approx(2.5));
  CHECK(params[1]["monitored"] == false);

  const auto path = temp_path("draws.csv");
  write_draws_csv(path, s);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "chain,draw,alpha0,q_0_0");
  CHECK(first == "0,0,1,1");
  std::size_t rows = 1;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 6);
}
