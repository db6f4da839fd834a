#include "config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace mixclass::cli {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ConfigError(path + ": " + message);
}

void reject_unknown(const Json& j, std::initializer_list<std::string_view> keys, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto k : keys) known = known || it.key() == k;
    if (!known) fail(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
  }
}

std::string str(const Json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

double num(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

std::int64_t integer(const Json& j, const std::string& path) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) return static_cast<std::int64_t>(v);
  }
  fail(path, "expected an integer");
}

std::size_t count(const Json& j, const std::string& path) {
  const auto v = integer(j, path);
  if (v < 0) fail(path, "expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  return j.get<bool>();
}

std::vector<std::string> strings(const Json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(str(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

Eigen::MatrixXd matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = -1;
  Eigen::MatrixXd m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    const auto rp = path + "[" + std::to_string(r) + "]";
    if (!row.is_array()) fail(rp, "expected an array of numbers");
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(row.size());
      m.resize(rows, cols);
    }
    if (static_cast<Eigen::Index>(row.size()) != cols) fail(rp, "rows differ in length");
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = num(row[static_cast<std::size_t>(c)], rp + "[" + std::to_string(c) + "]");
    }
  }
  return m;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

GatingMode parse_gating(const std::string& s, const std::string& path) {
  if (s == "constant") return GatingMode::ConstantMatrix;
  if (s == "logit") return GatingMode::LogitModel;
  fail(path, "expected \"constant\" or \"logit\", got '" + s + "'");
}

std::string gating_name(GatingMode g) { return g == GatingMode::LogitModel ? "logit" : "constant"; }

template <class T>
T enum_value(T (*parse)(std::string_view), const Json& j, const std::string& path) {
  const auto s = str(j, path);
  try {
    return parse(s);
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
}

}  // namespace

Json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("--config: invalid JSON in '" + path.string() + "' (" + e.what() + ")");
  }
}

FitConfig FitConfig::from_json(const Json& j) {
  FitConfig c;
  reject_unknown(j, {"command", "data", "engine", "arms", "model", "priors", "matrices", "mcmc", "em", "known_q",
                     "level", "out_dir", "threads"},
                 "");
  if (j.contains("command") && str(j["command"], "command") != "fit") fail("command", "expected \"fit\"");
  if (j.contains("data")) c.data = str(j["data"], "data");
  if (j.contains("engine")) c.engine = str(j["engine"], "engine");
  if (j.contains("arms")) c.arms = strings(j["arms"], "arms");
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"family", "categories", "gating", "sign_constraint"}, "model");
    if (m.contains("family")) c.family = enum_value(&parse_family, m["family"], "model.family");
    if (m.contains("categories") && !m["categories"].is_null()) {
      c.categories = count(m["categories"], "model.categories");
    }
    if (m.contains("gating")) c.gating = parse_gating(str(m["gating"], "model.gating"), "model.gating");
    if (m.contains("sign_constraint")) {
      c.sign_constraint = enum_value(&parse_sign_constraint, m["sign_constraint"], "model.sign_constraint");
    }
  }
  if (j.contains("priors")) {
    if (!j["priors"].is_object()) fail("priors", "expected an object");
    c.priors = j["priors"];
  }
  if (j.contains("matrices")) {
    const auto& mats = j["matrices"];
    if (!mats.is_object()) fail("matrices", "expected an object of named matrices");
    for (auto it = mats.begin(); it != mats.end(); ++it) {
      c.matrices[it.key()] = matrix(it.value(), "matrices." + it.key());
    }
  }
  if (j.contains("mcmc")) c.mcmc = parse_mcmc_config(j["mcmc"].dump());
  if (j.contains("em")) c.em = parse_em_config(j["em"].dump());
  if (j.contains("known_q") && !j["known_q"].is_null()) c.known_q = matrix(j["known_q"], "known_q");
  if (j.contains("level")) c.level = num(j["level"], "level");
  if (j.contains("out_dir")) c.out_dir = str(j["out_dir"], "out_dir");
  if (j.contains("threads")) c.apply_threads(count(j["threads"], "threads"));
  c.mcmc.sign_constraint = c.sign_constraint;
  c.em.sign_constraint = c.sign_constraint;
  return c;
}

Json FitConfig::to_json(const PriorSpec& resolved_priors, std::size_t resolved_categories) const {
  Json j;
  j["command"] = "fit";
  j["data"] = data;
  j["engine"] = engine;
  j["arms"] = arms;
  j["model"] = {{"family", std::string(to_string(family))},
                {"categories", resolved_categories},
                {"gating", gating_name(gating)},
                {"sign_constraint", std::string(to_string(sign_constraint))}};
  j["priors"] = Json::parse(prior_spec_json(resolved_priors));
  j["mcmc"] = Json::parse(mcmc_config_json(mcmc));
  j["em"] = Json::parse(em_config_json(em));
  j["known_q"] = known_q ? matrix_json(*known_q) : Json(nullptr);
  j["level"] = level;
  j["out_dir"] = out_dir;
  j["threads"] = threads;
  return j;
}

void FitConfig::apply_seed(std::uint64_t seed) {
  mcmc.seed = seed;
  em.seed = seed;
}

void FitConfig::apply_threads(std::size_t n) {
  threads = n;
  mcmc.threads = n;
  em.threads = n;
}

void FitConfig::validate() const {
  if (data.empty()) fail("data", "a dataset path is required (--data)");
  if (engine != "mcmc" && engine != "em") fail("engine", "expected \"mcmc\" or \"em\", got '" + engine + "'");
  if (arms.empty()) fail("arms", "at least one arm is required");
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const auto path = "arms[" + std::to_string(i) + "]";
    try {
      parse_arm(arms[i]);
    } catch (const ConfigError& e) {
      fail(path, e.what());
    }
    for (std::size_t k = 0; k < i; ++k) {
      if (arms[k] == arms[i]) fail(path, "duplicate arm '" + arms[i] + "'");
    }
  }
  if (engine == "em" && (arms.size() != 1 || arms[0] != "mixture")) {
    fail("arms", "the em engine fits the mixture model only");
  }
  if (categories && *categories < 2) fail("model.categories", "must be >= 2");
  if (!(level > 0.0 && level < 1.0)) fail("level", "must lie in (0, 1)");
  if (threads < 1) fail("threads", "must be >= 1");
  mcmc.validate();
  em.validate();
}

EfficiencyRunConfig EfficiencyRunConfig::from_json(const Json& j) {
  EfficiencyRunConfig c;
  reject_unknown(j, {"command", "effect_sizes", "pi1", "grid", "include_boundary", "dedup", "sigma", "quadrature",
                     "out_dir", "threads"},
                 "");
  if (j.contains("command") && str(j["command"], "command") != "efficiency") fail("command", "expected \"efficiency\"");
  if (j.contains("effect_sizes")) {
    const auto& e = j["effect_sizes"];
    if (!e.is_array()) fail("effect_sizes", "expected an array of numbers");
    c.effect_sizes.clear();
    for (std::size_t i = 0; i < e.size(); ++i) c.effect_sizes.push_back(num(e[i], "effect_sizes[" + std::to_string(i) + "]"));
  }
  if (j.contains("pi1")) c.pi1 = num(j["pi1"], "pi1");
  if (j.contains("grid")) c.grid = static_cast<int>(integer(j["grid"], "grid"));
  if (j.contains("include_boundary")) c.include_boundary = boolean(j["include_boundary"], "include_boundary");
  if (j.contains("dedup")) c.dedup = boolean(j["dedup"], "dedup");
  if (j.contains("sigma")) c.sigma = num(j["sigma"], "sigma");
  if (j.contains("quadrature")) {
    const auto& q = j["quadrature"];
    reject_unknown(q, {"abs_tol", "rel_tol", "max_subdivisions"}, "quadrature");
    if (q.contains("abs_tol")) c.quadrature.abs_tol = num(q["abs_tol"], "quadrature.abs_tol");
    if (q.contains("rel_tol")) c.quadrature.rel_tol = num(q["rel_tol"], "quadrature.rel_tol");
    if (q.contains("max_subdivisions")) {
      c.quadrature.max_subdivisions = static_cast<int>(integer(q["max_subdivisions"], "quadrature.max_subdivisions"));
    }
  }
  if (j.contains("out_dir")) c.out_dir = str(j["out_dir"], "out_dir");
  if (j.contains("threads")) c.threads = count(j["threads"], "threads");
  return c;
}

Json EfficiencyRunConfig::to_json() const {
  Json j;
  j["command"] = "efficiency";
  j["effect_sizes"] = effect_sizes;
  j["pi1"] = pi1;
  j["grid"] = grid;
  j["include_boundary"] = include_boundary;
  j["dedup"] = dedup;
  j["sigma"] = sigma;
  j["quadrature"] = {{"abs_tol", quadrature.abs_tol},
                     {"rel_tol", quadrature.rel_tol},
                     {"max_subdivisions", quadrature.max_subdivisions}};
  j["out_dir"] = out_dir;
  j["threads"] = threads;
  return j;
}

void EfficiencyRunConfig::validate() const {
  if (effect_sizes.empty()) fail("effect_sizes", "at least one effect size is required (--effect)");
  for (std::size_t i = 0; i < effect_sizes.size(); ++i) {
    if (effect_sizes[i] == 0.0) fail("effect_sizes[" + std::to_string(i) + "]", "must be non-zero");
  }
  if (!(pi1 > 0.0 && pi1 < 1.0)) fail("pi1", "must lie in (0, 1)");
  if (grid < 1) fail("grid", "must be >= 1");
  if (!(sigma > 0.0)) fail("sigma", "must be > 0");
  if (threads < 1) fail("threads", "must be >= 1");
  if (!(quadrature.abs_tol > 0.0)) fail("quadrature.abs_tol", "must be > 0");
  if (!(quadrature.rel_tol > 0.0)) fail("quadrature.rel_tol", "must be > 0");
  if (quadrature.max_subdivisions < 1) fail("quadrature.max_subdivisions", "must be >= 1");
}

StudyRunConfig StudyRunConfig::from_json(const Json& j) {
  StudyRunConfig c;
  reject_unknown(j, {"command", "scenario", "scenario_file", "arms", "sample_sizes", "reps", "seed", "mcmc", "params",
                     "level", "out_dir", "threads"},
                 "");
  if (j.contains("command") && str(j["command"], "command") != "study") fail("command", "expected \"study\"");
  if (j.contains("scenario")) c.scenario = str(j["scenario"], "scenario");
  if (j.contains("scenario_file")) c.scenario_file = str(j["scenario_file"], "scenario_file");
  if (j.contains("arms")) c.arms = strings(j["arms"], "arms");
  if (j.contains("sample_sizes")) {
    const auto& s = j["sample_sizes"];
    if (!s.is_array()) fail("sample_sizes", "expected an array of integers");
    for (std::size_t i = 0; i < s.size(); ++i) c.sample_sizes.push_back(count(s[i], "sample_sizes[" + std::to_string(i) + "]"));
  }
  if (j.contains("reps") && !j["reps"].is_null()) c.reps = static_cast<int>(integer(j["reps"], "reps"));
  if (j.contains("seed") && !j["seed"].is_null()) {
    const auto& s = j["seed"];
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
      fail("seed", "expected a non-negative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  if (j.contains("mcmc") && !j["mcmc"].is_null()) c.mcmc = parse_mcmc_config(j["mcmc"].dump());
  if (j.contains("params")) c.params = strings(j["params"], "params");
  if (j.contains("level")) c.level = num(j["level"], "level");
  if (j.contains("out_dir")) c.out_dir = str(j["out_dir"], "out_dir");
  if (j.contains("threads")) c.threads = count(j["threads"], "threads");
  return c;
}

Json StudyRunConfig::to_json() const {
  Json j;
  j["command"] = "study";
  j["scenario"] = scenario;
  j["scenario_file"] = scenario_file;
  j["arms"] = arms;
  j["sample_sizes"] = sample_sizes;
  j["reps"] = reps ? Json(*reps) : Json(nullptr);
  j["seed"] = seed ? Json(*seed) : Json(nullptr);
  j["mcmc"] = mcmc ? Json::parse(mcmc_config_json(*mcmc)) : Json(nullptr);
  j["params"] = params;
  j["level"] = level;
  j["out_dir"] = out_dir;
  j["threads"] = threads;
  return j;
}

void StudyRunConfig::validate() const {
  if (scenario.empty()) fail("scenario", "a scenario name is required");
  if (reps && *reps < 1) fail("reps", "must be >= 1");
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    if (sample_sizes[i] < 1) fail("sample_sizes[" + std::to_string(i) + "]", "must be >= 1");
  }
  if (!(level > 0.0 && level < 1.0)) fail("level", "must lie in (0, 1)");
  if (threads < 1) fail("threads", "must be >= 1");
  if (mcmc) mcmc->validate();
}

}  // namespace mixclass::cli
