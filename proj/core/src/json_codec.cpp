#include "json_codec.hpp"

#include <algorithm>
#include <cmath>

namespace mixclass::codec {

namespace {

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ConfigError(path + ": " + message);
}

// {"<kind>": [a, b]} with exactly one key.
std::pair<std::string, Json> tagged(const Json& j, const std::string& path) {
  if (!j.is_object() || j.size() != 1) fail(path, "expected an object with a single distribution key");
  return {j.begin().key(), j.begin().value()};
}

std::pair<double, double> pair_of(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) fail(path, "expected two numbers");
  return {number(j[0], path + "[0]"), number(j[1], path + "[1]")};
}

NormalPrior normal_from(const Json& j, const std::string& path) {
  const auto [kind, args] = tagged(j, path);
  if (kind != "normal") fail(path, "expected a normal prior");
  const auto [m, v] = pair_of(args, join(path, "normal"));
  return NormalPrior{m, v};
}

GammaPrior gamma_from(const Json& j, const std::string& path) {
  const auto [kind, args] = tagged(j, path);
  if (kind != "gamma") fail(path, "expected a gamma prior");
  const auto [a, b] = pair_of(args, join(path, "gamma"));
  return GammaPrior{a, b};
}

DirichletPrior probability_from(const Json& j, std::size_t k, const std::string& path) {
  if (j.is_string()) {
    if (j.get<std::string>() != "uniform") fail(path, "expected \"uniform\" or a distribution object");
    return DirichletPrior::uniform(k);
  }
  const auto [kind, args] = tagged(j, path);
  if (kind == "dirichlet") return DirichletPrior{vector(args, join(path, "dirichlet"))};
  if (kind == "beta") {
    if (k != 2) fail(path, "a beta prior needs exactly two categories");
    const auto [a, b] = pair_of(args, join(path, "beta"));
    return DirichletPrior::beta(a, b);
  }
  if (kind == "uniform") return DirichletPrior::uniform(k);
  fail(path, "unknown probability prior '" + kind + "'");
}

Json normal_to(const NormalPrior& p) { return Json{{"normal", {p.mean, p.variance}}}; }
Json gamma_to(const GammaPrior& p) { return Json{{"gamma", {p.shape, p.rate}}}; }
Json dirichlet_to(const DirichletPrior& p) { return Json{{"dirichlet", to_json(p.concentration)}}; }

}  // namespace

Json parse(std::string_view text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON (" + e.what() + ")");
  }
}

void reject_unknown(const Json& obj, std::initializer_list<std::string_view> keys, const std::string& path) {
  if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
      fail(join(path, it.key()), "unknown field");
    }
  }
}

double number(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

std::int64_t integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<std::int64_t>();
}

Eigen::VectorXd vector(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

Eigen::MatrixXd matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto first = vector(j[0], path + "[0]");
  Eigen::MatrixXd m(rows, first.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = vector(j[static_cast<std::size_t>(r)], path + "[" + std::to_string(r) + "]");
    if (row.size() != first.size()) fail(path, "rows have different lengths");
    m.row(r) = row.transpose();
  }
  return m;
}

Json to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Json to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Eigen::VectorXd(m.row(r).transpose())));
  return out;
}

PriorSpec priors_from(const Json& j, const ModelSpec& spec, const NamedMatrices& named, PriorSpec base,
                      const std::string& path) {
  reject_unknown(j, {"alpha0", "alpha1", "beta", "precision", "fixed_sigma", "df", "shape", "zero_weight",
                     "pi_star", "q_rows", "gating"},
                 path);
  PriorSpec p = std::move(base);
  const auto k = spec.categories;
  if (j.contains("alpha0")) p.alpha0 = normal_from(j["alpha0"], join(path, "alpha0"));
  if (j.contains("alpha1")) {
    const auto sub = join(path, "alpha1");
    const auto [kind, args] = tagged(j["alpha1"], sub);
    if (kind == "gamma") {
      p.alpha1 = gamma_from(j["alpha1"], sub);
    } else {
      p.alpha1 = normal_from(j["alpha1"], sub);
    }
  }
  if (j.contains("beta")) p.beta = normal_from(j["beta"], join(path, "beta"));
  if (j.contains("precision")) p.precision = gamma_from(j["precision"], join(path, "precision"));
  if (j.contains("fixed_sigma")) {
    if (j["fixed_sigma"].is_null()) {
      p.fixed_sigma.reset();
    } else {
      p.fixed_sigma = number(j["fixed_sigma"], join(path, "fixed_sigma"));
    }
  }
  if (j.contains("df")) p.df = gamma_from(j["df"], join(path, "df"));
  if (j.contains("shape")) p.shape = gamma_from(j["shape"], join(path, "shape"));
  if (j.contains("zero_weight")) p.zero_weight = probability_from(j["zero_weight"], 2, join(path, "zero_weight"));
  if (j.contains("pi_star")) {
    const auto& ps = j["pi_star"];
    if (ps.is_string() && ps.get<std::string>() == "uniform") {
      p.pi_star.reset();
    } else {
      p.pi_star = probability_from(ps, k, join(path, "pi_star"));
    }
  }
  if (j.contains("q_rows")) {
    const auto sub = join(path, "q_rows");
    const auto& q = j["q_rows"];
    p.q_rows.clear();
    if (q.is_string()) {
      if (q.get<std::string>() != "uniform") fail(sub, "expected \"uniform\", rows or {scale, matrix}");
    } else if (q.is_object()) {
      reject_unknown(q, {"scale", "matrix"}, sub);
      if (!q.contains("scale") || !q.contains("matrix")) fail(sub, "needs both scale and matrix");
      const double scale = number(q["scale"], join(sub, "scale"));
      Eigen::MatrixXd m;
      if (q["matrix"].is_string()) {
        const auto name = q["matrix"].get<std::string>();
        const auto it = named.find(name);
        if (it == named.end()) fail(join(sub, "matrix"), "unknown matrix '" + name + "'");
        m = it->second;
      } else {
        m = matrix(q["matrix"], join(sub, "matrix"));
      }
      if (static_cast<std::size_t>(m.rows()) != k || static_cast<std::size_t>(m.cols()) != k) {
        fail(sub, "matrix must be " + std::to_string(k) + " x " + std::to_string(k));
      }
      for (Eigen::Index r = 0; r < m.rows(); ++r) p.q_rows.push_back(DirichletPrior{scale * m.row(r).transpose()});
    } else {
      const Eigen::MatrixXd m = matrix(q, sub);
      if (static_cast<std::size_t>(m.rows()) != k) fail(sub, "needs one row per category");
      for (Eigen::Index r = 0; r < m.rows(); ++r) p.q_rows.push_back(DirichletPrior{m.row(r).transpose()});
    }
  }
  if (j.contains("gating")) p.gating = normal_from(j["gating"], join(path, "gating"));
  return p;
}

Json priors_to(const PriorSpec& p) {
  Json j;
  j["alpha0"] = normal_to(p.alpha0);
  if (const auto* g = std::get_if<GammaPrior>(&p.alpha1)) {
    j["alpha1"] = gamma_to(*g);
  } else {
    j["alpha1"] = normal_to(std::get<NormalPrior>(p.alpha1));
  }
  j["beta"] = normal_to(p.beta);
  j["precision"] = gamma_to(p.precision);
  j["fixed_sigma"] = p.fixed_sigma ? Json(*p.fixed_sigma) : Json(nullptr);
  j["df"] = gamma_to(p.df);
  j["shape"] = gamma_to(p.shape);
  j["zero_weight"] = dirichlet_to(p.zero_weight);
  j["pi_star"] = p.pi_star ? dirichlet_to(*p.pi_star) : Json("uniform");
  if (p.q_rows.empty()) {
    j["q_rows"] = "uniform";
  } else {
    Json rows = Json::array();
    for (const auto& r : p.q_rows) rows.push_back(to_json(r.concentration));
    j["q_rows"] = rows;
  }
  j["gating"] = normal_to(p.gating);
  return j;
}

McmcConfig mcmc_from(const Json& j, McmcConfig cfg, const std::string& path) {
  reject_unknown(j, {"n_chains", "burn_in", "thin", "n_kept", "seed", "sign_constraint", "threads",
                     "target_acceptance", "adapt_batch", "init_from_em"},
                 path);
  if (j.contains("n_chains")) cfg.n_chains = static_cast<int>(integer(j["n_chains"], join(path, "n_chains")));
  if (j.contains("burn_in")) cfg.burn_in = static_cast<int>(integer(j["burn_in"], join(path, "burn_in")));
  if (j.contains("thin")) cfg.thin = static_cast<int>(integer(j["thin"], join(path, "thin")));
  if (j.contains("n_kept")) cfg.n_kept = static_cast<int>(integer(j["n_kept"], join(path, "n_kept")));
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) fail(join(path, "seed"), "expected an integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("sign_constraint")) {
    if (!j["sign_constraint"].is_string()) fail(join(path, "sign_constraint"), "expected a string");
    try {
      cfg.sign_constraint = parse_sign_constraint(j["sign_constraint"].get<std::string>());
    } catch (const ConfigError& e) {
      fail(join(path, "sign_constraint"), e.what());
    }
  }
  if (j.contains("threads")) {
    const auto t = integer(j["threads"], join(path, "threads"));
    if (t < 0) fail(join(path, "threads"), "must be >= 0");
    cfg.threads = static_cast<std::size_t>(t);
  }
  if (j.contains("target_acceptance")) cfg.target_acceptance = number(j["target_acceptance"], join(path, "target_acceptance"));
  if (j.contains("adapt_batch")) cfg.adapt_batch = static_cast<int>(integer(j["adapt_batch"], join(path, "adapt_batch")));
  if (j.contains("init_from_em")) {
    if (!j["init_from_em"].is_boolean()) fail(join(path, "init_from_em"), "expected a boolean");
    cfg.init_from_em = j["init_from_em"].get<bool>();
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    fail(path.empty() ? "mcmc" : path, e.what());
  }
  return cfg;
}

Json mcmc_to(const McmcConfig& cfg) {
  Json j;
  j["n_chains"] = cfg.n_chains;
  j["burn_in"] = cfg.burn_in;
  j["thin"] = cfg.thin;
  j["n_kept"] = cfg.n_kept;
  j["seed"] = cfg.seed;
  j["sign_constraint"] = std::string(to_string(cfg.sign_constraint));
  j["threads"] = cfg.threads;
  j["target_acceptance"] = cfg.target_acceptance;
  j["adapt_batch"] = cfg.adapt_batch;
  j["init_from_em"] = cfg.init_from_em;
  return j;
}

EmConfig em_from(const Json& j, EmConfig cfg, const std::string& path) {
  reject_unknown(j, {"max_iter", "loglik_tol", "n_restarts", "sign_constraint", "seed", "threads"}, path);
  if (j.contains("max_iter")) cfg.max_iter = static_cast<int>(integer(j["max_iter"], join(path, "max_iter")));
  if (j.contains("loglik_tol")) cfg.loglik_tol = number(j["loglik_tol"], join(path, "loglik_tol"));
  if (j.contains("n_restarts")) cfg.n_restarts = static_cast<int>(integer(j["n_restarts"], join(path, "n_restarts")));
  if (j.contains("sign_constraint")) {
    if (!j["sign_constraint"].is_string()) fail(join(path, "sign_constraint"), "expected a string");
    try {
      cfg.sign_constraint = parse_sign_constraint(j["sign_constraint"].get<std::string>());
    } catch (const ConfigError& e) {
      fail(join(path, "sign_constraint"), e.what());
    }
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("threads")) cfg.threads = static_cast<std::size_t>(integer(j["threads"], join(path, "threads")));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    fail(path.empty() ? "em" : path, e.what());
  }
  return cfg;
}

Json em_to(const EmConfig& cfg) {
  Json j;
  j["max_iter"] = cfg.max_iter;
  j["loglik_tol"] = cfg.loglik_tol;
  j["n_restarts"] = cfg.n_restarts;
  j["sign_constraint"] = std::string(to_string(cfg.sign_constraint));
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  return j;
}

Json theta_to(const Theta& t) {
  Json j;
  j["alpha0"] = t.alpha0;
  j["alpha1"] = t.alpha1;
  j["beta"] = to_json(t.beta);
  j["phi"] = Json{{"sigma", t.phi.sigma}, {"df", t.phi.df}, {"shape", t.phi.shape}, {"zero_weight", t.phi.zero_weight}};
  j["pi_star"] = to_json(t.pi_star);
  if (t.gating.mode() == GatingMode::ConstantMatrix) {
    j["q"] = to_json(t.gating.constant().matrix());
  } else {
    const auto& g = t.gating.logit();
    j["gating_intercepts"] = to_json(g.intercepts);
    Json slopes = Json::array();
    for (const auto& s : g.slopes) slopes.push_back(to_json(s));
    j["gating_slopes"] = slopes;
  }
  return j;
}

}  // namespace mixclass::codec
