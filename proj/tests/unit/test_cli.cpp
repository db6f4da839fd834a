#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mixclass/io.hpp"
#include "mixclass_cli/cli.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = mixclass::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mixclass_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// Binary normal data with misclassification that attenuates the naive slope.
fs::path binary_csv(const fs::path& dir, std::size_t n, double flip, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5), err(flip);
  std::normal_distribution<double> z(0.0, 1.0);
  std::ostringstream csv;
  csv << "y,v_star\n";
  for (std::size_t i = 0; i < n; ++i) {
    const int v = coin(rng) ? 1 : 0;
    csv << 1.0 + 4.0 * v + z(rng) << ',' << (err(rng) ? 1 - v : v) << '\n';
  }
  const auto p = dir / "data.csv";
  write_file(p, csv.str());
  return p;
}

fs::path quick_config(const fs::path& dir) {
  const auto p = dir / "quick.json";
  write_file(p, R"({"mcmc": {"n_chains": 2, "burn_in": 1000, "thin": 1, "n_kept": 1000}})");
  return p;
}

const Json& arm_parameter(const Json& summary, const std::string& arm, const std::string& name) {
  for (const auto& p : summary["arms"][arm]["parameters"])
    if (p["name"] == name) return p;
  throw std::runtime_error("missing parameter " + name);
}

// Rows of a CSV as maps from header name to cell text.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  for (std::stringstream s(line); std::getline(s, line, ',');) header.push_back(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    std::map<std::string, std::string> row;
    std::stringstream s(line);
    std::string cell;
    for (const auto& h : header) {
      std::getline(s, cell, ',');
      row[h] = cell;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string scenario_file() { return MIXCLASS_TEST_SCENARIOS; }

}  // namespace

TEST_CASE("fit with defaults on a two-column file") {
  const auto dir = fresh_dir("fit_defaults");
  const auto data = binary_csv(dir, 300, 0.1, 1);
  const auto r = run({"fit", "--data", data.string(), "--out-dir", dir.string(), "--seed", "5"});
  INFO(r.err);
  REQUIRE(r.code == mixclass::cli::kExitOk);
  CHECK(r.out.find("alpha1") != std::string::npos);
  const auto summary = Json::parse(slurp(dir / "summary.json"));
  CHECK(summary["schema_version"] == mixclass::kSummarySchemaVersion);
  const auto& a1 = arm_parameter(summary, "mixture", "alpha1");
  CHECK(a1["lower"].get<double>() < a1["upper"].get<double>());
  CHECK(fs::exists(dir / "draws_mixture.csv"));
  CHECK(fs::exists(dir / "effective_config.json"));
}

TEST_CASE("EM engine writes the fit with its restart trace") {
  const auto dir = fresh_dir("fit_em");
  const auto data = binary_csv(dir, 300, 0.1, 2);
  const auto r = run({"fit", "--data", data.string(), "--engine", "em", "--out-dir", dir.string()});
  INFO(r.err);
  REQUIRE(r.code == mixclass::cli::kExitOk);
  const auto fit = Json::parse(slurp(dir / "em_fit.json"));
  CHECK(fit["loglik"].is_number());
  CHECK(fit["restart_logliks"].size() == 10);
  CHECK(fit["trace"].size() > 1);
  CHECK(run({"fit", "--data", data.string(), "--engine", "em", "--arm", "naive", "--out-dir", dir.string()}).code ==
        mixclass::cli::kExitConfig);
}

TEST_CASE("naive and mixture arms side by side") {
  const auto dir = fresh_dir("fit_arms");
  const auto data = binary_csv(dir, 800, 0.2, 3);
  const auto r = run({"fit", "--data", data.string(), "--config", quick_config(dir).string(), "--arm", "naive",
                      "--arm", "mixture", "--out-dir", dir.string()});
  INFO(r.err);
  REQUIRE(r.code == mixclass::cli::kExitOk);
  const auto summary = Json::parse(slurp(dir / "summary.json"));
  CHECK(summary["arms"].size() == 2);
  const double naive = arm_parameter(summary, "naive", "alpha1")["mean"];
  const double mixture = arm_parameter(summary, "mixture", "alpha1")["mean"];
  CHECK(mixture >= naive);
  CHECK(naive < 3.5);
}

TEST_CASE("same seed, same draws, and the effective config reproduces the run") {
  const auto dir = fresh_dir("fit_repro");
  const auto data = binary_csv(dir, 200, 0.1, 4);
  const auto a = dir / "a", b = dir / "b", c = dir / "c";
  const std::vector<std::string> base{"fit", "--data", data.string(), "--config", quick_config(dir).string(),
                                      "--seed", "77"};
  auto with_out = [&](const fs::path& out) {
    auto args = base;
    args.insert(args.end(), {"--out-dir", out.string()});
    return args;
  };
  REQUIRE(run(with_out(a)).code == 0);
  REQUIRE(run(with_out(b)).code == 0);
  CHECK(slurp(a / "draws_mixture.csv") == slurp(b / "draws_mixture.csv"));

  const auto effective = Json::parse(slurp(a / "effective_config.json"));
  CHECK(effective["mcmc"]["seed"] == 77);
  REQUIRE(run({"fit", "--config", (a / "effective_config.json").string(), "--out-dir", c.string()}).code == 0);
  CHECK(slurp(a / "draws_mixture.csv") == slurp(c / "draws_mixture.csv"));

  auto other = with_out(dir / "d");
  other[6] = "78";
  REQUIRE(run(other).code == 0);
  CHECK(slurp(a / "draws_mixture.csv") != slurp(dir / "d" / "draws_mixture.csv"));
}

TEST_CASE("exit codes") {
  const auto dir = fresh_dir("exit_codes");
  const auto data = binary_csv(dir, 200, 0.1, 5);
  using namespace mixclass::cli;

  SUBCASE("configuration errors name the field") {
    write_file(dir / "bad.json", R"({"mcmc": {"burn_inn": 10}})");
    const auto r = run({"fit", "--data", data.string(), "--config", (dir / "bad.json").string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("mcmc.burn_inn") != std::string::npos);
    CHECK(run({"fit", "--data", data.string(), "--arm", "both"}).code == kExitConfig);
    CHECK(run({"fit", "--data", data.string(), "--level", "1.5"}).code == kExitConfig);
    CHECK(run({"fit", "--data", data.string(), "--engine", "gibbs"}).code == kExitConfig);
    CHECK(run({"fit", "--no-such-flag"}).code == kExitConfig);
    CHECK(run({"frobnicate"}).code == kExitConfig);
  }
  SUBCASE("data errors carry the line number") {
    write_file(dir / "bad.csv", "y,v_star\n1.0,0\n2.0,x\n");
    const auto r = run({"fit", "--data", (dir / "bad.csv").string(), "--out-dir", dir.string()});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("line 3") != std::string::npos);
    write_file(dir / "unknown.csv", "y,v_star,age\n1.0,0,3\n");
    CHECK(run({"fit", "--data", (dir / "unknown.csv").string()}).code == kExitData);
    CHECK(run({"fit", "--data", (dir / "missing.csv").string()}).code == kExitData);
  }
  SUBCASE("an unconverged fit is flagged") {
    write_file(dir / "short.json", R"({"mcmc": {"n_chains": 4, "burn_in": 1, "thin": 1, "n_kept": 6, "init_from_em": false}})");
    const auto r = run({"fit", "--data", data.string(), "--config", (dir / "short.json").string(), "--out-dir",
                        dir.string(), "--seed", "3"});
    CHECK(r.code == kExitConvergence);
    CHECK(fs::exists(dir / "summary.json"));
  }
  SUBCASE("unknown scenario lists the available names") {
    const auto r = run({"study", "no_such_scenario", "--scenarios", scenario_file(), "--out-dir", dir.string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("poisson_p25") != std::string::npos);
  }
}

TEST_CASE("efficiency surfaces") {
  const auto dir = fresh_dir("efficiency");
  SUBCASE("little loss at a large effect") {
    REQUIRE(run({"efficiency", "--effect", "5", "--pi1", "0.5", "--grid", "9", "--out-dir", dir.string()}).code == 0);
    const auto rows = read_csv(dir / "rasd_surface.csv");
    CHECK(rows.size() == 81);
    for (const auto& row : rows) {
      REQUIRE_FALSE(row.at("rasd2").empty());
      CHECK(std::stod(row.at("rasd2")) <= 1.1);
    }
  }
  SUBCASE("the proportion matters") {
    REQUIRE(run({"efficiency", "--effect", "1", "--pi1", "0.5", "--grid", "5", "--out-dir", (dir / "a").string()}).code == 0);
    REQUIRE(run({"efficiency", "--effect", "1", "--pi1", "0.2", "--grid", "5", "--out-dir", (dir / "b").string()}).code == 0);
    CHECK(slurp(dir / "a" / "rasd_surface.csv") != slurp(dir / "b" / "rasd_surface.csv"));
  }
  SUBCASE("boundary cells are infinite") {
    REQUIRE(run({"efficiency", "--effect", "1", "--grid", "5", "--include-boundary", "--out-dir", dir.string()}).code == 0);
    int infinite = 0;
    for (const auto& row : read_csv(dir / "rasd_surface.csv")) {
      const auto edge = [](const std::string& cell) { return cell == "0" || cell == "1"; };
      const bool boundary = edge(row.at("p01")) || edge(row.at("p10"));
      if (boundary) {
        CHECK(row.at("rasd2") == "inf");
        ++infinite;
      } else {
        CHECK(row.at("rasd2") != "inf");
      }
    }
    CHECK(infinite > 0);
  }
  CHECK(run({"efficiency", "--pi1", "1.5", "--out-dir", dir.string()}).code == mixclass::cli::kExitConfig);
}

namespace {

std::map<std::string, std::string> summary_row(const fs::path& file, const std::string& arm, std::size_t n,
                                               const std::string& param) {
  for (const auto& row : read_csv(file))
    if (row.at("arm") == arm && row.at("n") == std::to_string(n) && row.at("param") == param) return row;
  throw std::runtime_error("missing summary row");
}

}  // namespace

TEST_CASE("study: the mixture arm covers at the nominal rate") {
  const auto dir = fresh_dir("study_normal");
  const auto r = run({"study", "normal_ordinal_a10", "--scenarios", scenario_file(), "--arm", "mixture:vague", "--n",
                      "1600", "--reps", "20", "--param", "alpha1", "--out-dir", dir.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto row = summary_row(dir / "study_normal_ordinal_a10_summary.csv", "mixture:vague", 1600, "alpha1");
  CHECK(std::stoi(row.at("reps")) == 20);
  const double coverage = std::stod(row.at("coverage"));
  CHECK(coverage >= 0.85);
  CHECK(coverage <= 1.0);
}

TEST_CASE("study: poisson naive attenuation and zero-inflation over-estimation") {
  const auto dir = fresh_dir("study_counts");
  REQUIRE(run({"study", "poisson_p25", "--scenarios", scenario_file(), "--arm", "naive", "--n", "6400", "--reps", "5",
               "--param", "alpha1", "--out-dir", dir.string()})
              .code == 0);
  CHECK(std::stod(summary_row(dir / "study_poisson_p25_summary.csv", "naive", 6400, "alpha1").at("mean_estimate")) < 1.0);

  REQUIRE(run({"study", "zip_w10", "--scenarios", scenario_file(), "--arm", "mixture", "--n", "6400", "--reps", "5",
               "--param", "alpha1", "--out-dir", dir.string()})
              .code == 0);
  CHECK(std::stod(summary_row(dir / "study_zip_w10_summary.csv", "mixture", 6400, "alpha1").at("mean_estimate")) > 1.0);
}

TEST_CASE("study resumes and is deterministic by seed") {
  const auto dir = fresh_dir("study_resume");
  const std::vector<std::string> base{"study", "poisson_p125", "--scenarios", scenario_file(), "--arm", "naive",
                                      "--n", "100", "--seed", "9", "--out-dir", dir.string()};
  auto args = base;
  args.insert(args.end(), {"--reps", "2"});
  REQUIRE(run(args).code == 0);
  const auto first = slurp(dir / "study_poisson_p125.csv");
  args.back() = "3";
  const auto r = run(args);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("new rows 2") != std::string::npos);
  const auto second = slurp(dir / "study_poisson_p125.csv");
  CHECK(second.rfind(first, 0) == 0);

  const auto other = fresh_dir("study_resume_again");
  auto again = args;
  again[again.size() - 3] = other.string();
  REQUIRE(run(again).code == 0);
  auto strip_seconds = [](const fs::path& p) {
    std::vector<std::string> out;
    for (auto row : read_csv(p)) {
      row.erase("seconds");
      std::string line;
      for (const auto& [k, v] : row) line += k + "=" + v + ";";
      out.push_back(line);
    }
    return out;
  };
  CHECK(strip_seconds(dir / "study_poisson_p125.csv") == strip_seconds(other / "study_poisson_p125.csv"));
}
