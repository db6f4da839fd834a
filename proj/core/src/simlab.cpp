#include "mixclass/simlab.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "json_codec.hpp"
#include "mixclass/parallel.hpp"

#ifndef MIXCLASS_SOURCE_SCENARIOS
#define MIXCLASS_SOURCE_SCENARIOS ""
#endif
#ifndef MIXCLASS_INSTALLED_SCENARIOS
#define MIXCLASS_INSTALLED_SCENARIOS ""
#endif

namespace mixclass {

namespace {

using codec::Json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::string_view kStudyHeader = "scenario,n,rep,arm,param,estimate,lo,hi,covered,ess,rhat,seconds,status";

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Eigen::MatrixXd normalize_rows(Eigen::MatrixXd m, const std::string& path) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double s = m.row(r).sum();
    if (!(s > 0.0) || (m.row(r).array() < 0.0).any()) throw ConfigError(path + ": rows must be non-negative with a positive sum");
    m.row(r) /= s;
  }
  return m;
}

FamilyKind parse_generator(const std::string& name, const std::string& path) {
  try {
    return parse_family(name);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Nuisance generator_nuisance(const Json& g, FamilyKind kind, const std::string& path) {
  Nuisance phi;
  switch (kind) {
    case FamilyKind::Normal:
      codec::reject_unknown(g, {"family", "sigma"}, path);
      phi.sigma = codec::number(g.at("sigma"), path + ".sigma");
      break;
    case FamilyKind::StudentT:
      // Parameterized by the squared scale; the implied variance is derived.
      codec::reject_unknown(g, {"family", "scale_squared", "df"}, path);
      phi.sigma = std::sqrt(codec::number(g.at("scale_squared"), path + ".scale_squared"));
      phi.df = codec::number(g.at("df"), path + ".df");
      break;
    case FamilyKind::Poisson:
      codec::reject_unknown(g, {"family"}, path);
      break;
    case FamilyKind::ZeroInflatedPoisson:
      codec::reject_unknown(g, {"family", "zero_weight"}, path);
      phi.zero_weight = codec::number(g.at("zero_weight"), path + ".zero_weight");
      break;
    case FamilyKind::Gamma:
      codec::reject_unknown(g, {"family", "shape"}, path);
      phi.shape = codec::number(g.at("shape"), path + ".shape");
      break;
  }
  return phi;
}

Scenario scenario_from(const Json& j, const NamedMatrices& matrices, const std::string& path) {
  codec::reject_unknown(j, {"name", "description", "fit_family", "generator", "pi", "P", "alpha", "beta",
                            "sample_sizes", "n_replications", "seed", "known_q", "sign_constraint", "priors",
                            "prior_variants", "arms", "mcmc"},
                        path);
  Scenario sc;
  auto required = [&](const char* key) -> const Json& {
    if (!j.contains(key)) throw ConfigError(path + "." + key + ": missing required field");
    return j[key];
  };
  if (!required("name").is_string()) throw ConfigError(path + ".name: expected a string");
  sc.name = j["name"].get<std::string>();
  const std::string at = "scenarios[" + sc.name + "]";
  if (j.contains("description")) sc.description = j["description"].get<std::string>();
  sc.fit_family = ResponseFamily(parse_generator(required("fit_family").get<std::string>(), at + ".fit_family"));
  const auto& g = required("generator");
  if (!g.is_object() || !g.contains("family")) throw ConfigError(at + ".generator: needs a family");
  sc.generator = parse_generator(g["family"].get<std::string>(), at + ".generator.family");
  sc.phi = generator_nuisance(g, sc.generator, at + ".generator");
  sc.pi = codec::vector(required("pi"), at + ".pi");
  try {
    sc.p = ClassificationMatrix(normalize_rows(codec::matrix(required("P"), at + ".P"), at + ".P"));
  } catch (const ConfigError& e) {
    throw ConfigError(at + ".P: " + e.what());
  }
  const auto alpha = codec::vector(required("alpha"), at + ".alpha");
  if (alpha.size() != 2) throw ConfigError(at + ".alpha: expected [alpha0, alpha1]");
  sc.alpha0 = alpha[0];
  sc.alpha1 = alpha[1];
  sc.beta = j.contains("beta") && !j["beta"].empty() ? codec::vector(j["beta"], at + ".beta") : Eigen::VectorXd();
  for (const auto& n : required("sample_sizes")) {
    const auto v = codec::integer(n, at + ".sample_sizes");
    if (v < 1) throw ConfigError(at + ".sample_sizes: sizes must be >= 1");
    sc.sample_sizes.push_back(static_cast<std::size_t>(v));
  }
  if (j.contains("n_replications")) sc.n_replications = static_cast<int>(codec::integer(j["n_replications"], at + ".n_replications"));
  if (j.contains("seed")) sc.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("sign_constraint")) sc.sign_constraint = parse_sign_constraint(j["sign_constraint"].get<std::string>());

  NamedMatrices named = matrices;
  if (j.contains("known_q")) {
    Eigen::MatrixXd q;
    if (j["known_q"].is_string()) {
      const auto name = j["known_q"].get<std::string>();
      const auto it = matrices.find(name);
      if (it == matrices.end()) throw ConfigError(at + ".known_q: unknown matrix '" + name + "'");
      q = it->second;
    } else {
      q = normalize_rows(codec::matrix(j["known_q"], at + ".known_q"), at + ".known_q");
    }
    sc.known_q = ReclassificationMatrix(q);
  }
  sc.validate();
  named["true_q"] = sc.true_q().matrix();
  named["reference_q"] = sc.reference_q().matrix();

  const auto spec = sc.model_spec();
  if (j.contains("priors")) sc.priors = codec::priors_from(j["priors"], spec, named, PriorSpec{}, at + ".priors");
  if (j.contains("prior_variants")) {
    for (const auto& v : j["prior_variants"]) {
      codec::reject_unknown(v, {"name", "priors"}, at + ".prior_variants");
      PriorVariant pv;
      pv.name = v.at("name").get<std::string>();
      pv.priors = v.contains("priors")
                      ? codec::priors_from(v["priors"], spec, named, sc.priors, at + ".prior_variants[" + pv.name + "].priors")
                      : sc.priors;
      sc.prior_variants.push_back(std::move(pv));
    }
  }
  if (j.contains("mcmc")) sc.mcmc = codec::mcmc_from(j["mcmc"], McmcConfig{}, at + ".mcmc");
  sc.mcmc.sign_constraint = sc.sign_constraint;
  if (j.contains("arms")) {
    for (const auto& a : j["arms"]) sc.arms.push_back(a.get<std::string>());
  } else {
    sc.arms = {"naive", "true", "known_q", "mixture"};
  }
  for (const auto& a : sc.arms) validate_arm(sc, a);
  sc.priors.validate(spec, sc.sign_constraint);
  for (const auto& v : sc.prior_variants) v.priors.validate(spec, sc.sign_constraint);
  return sc;
}

int draw_category(const Eigen::VectorXd& probs, std::mt19937_64& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (u < probs[j]) return static_cast<int>(j);
    u -= probs[j];
  }
  for (Eigen::Index j = probs.size() - 1; j > 0; --j) {
    if (probs[j] > 0.0) return static_cast<int>(j);
  }
  return 0;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

double parse_cell(const std::string& s) {
  if (s.empty()) return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

std::string row_to_csv(const StudyRow& r) {
  std::ostringstream s;
  s << r.scenario << ',' << r.n << ',' << r.rep << ',' << r.arm << ',' << r.param << ',' << format_double(r.estimate)
    << ',' << format_double(r.lo) << ',' << format_double(r.hi) << ','
    << (r.covered ? (*r.covered ? "1" : "0") : "") << ',' << format_double(r.ess) << ','
    << format_double(r.rhat) << ',' << format_double(r.seconds) << ',' << r.status;
  return s.str();
}

std::vector<std::string> default_params(const Scenario& sc) {
  std::vector<std::string> out{"alpha0", "alpha1"};
  for (Eigen::Index c = 0; c < sc.beta.size(); ++c) out.push_back("beta_" + std::to_string(c + 1));
  switch (sc.fit_family.kind()) {
    case FamilyKind::Normal: out.push_back("sigma"); break;
    case FamilyKind::StudentT: out.insert(out.end(), {"sigma", "df"}); break;
    case FamilyKind::Gamma: out.push_back("shape"); break;
    case FamilyKind::ZeroInflatedPoisson: out.push_back("zero_weight"); break;
    case FamilyKind::Poisson: break;
  }
  return out;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return "error:numeric";
  if (dynamic_cast<const DegenerateCategoryError*>(&e)) return "error:degenerate";
  if (dynamic_cast<const ConvergenceError*>(&e)) return "error:convergence";
  if (dynamic_cast<const ConfigError*>(&e)) return "error:config";
  if (dynamic_cast<const std::domain_error*>(&e)) return "error:domain";
  return "error:other";
}

}  // namespace

ModelSpec Scenario::model_spec() const {
  ModelSpec spec;
  spec.family = fit_family;
  spec.categories = categories();
  spec.covariates = static_cast<std::size_t>(beta.size());
  return spec;
}

ReclassificationMatrix Scenario::true_q() const { return derive_reclassification(p, pi).q; }

ReclassificationMatrix Scenario::reference_q() const { return known_q ? *known_q : true_q(); }

double Scenario::implied_variance() const {
  if (generator == FamilyKind::Normal) return phi.sigma * phi.sigma;
  if (generator == FamilyKind::StudentT) {
    return phi.df > 2.0 ? phi.sigma * phi.sigma * phi.df / (phi.df - 2.0) : std::numeric_limits<double>::infinity();
  }
  return kNaN;
}

const PriorSpec& Scenario::priors_for(std::string_view variant) const {
  if (variant.empty()) return priors;
  for (const auto& v : prior_variants) {
    if (v.name == variant) return v.priors;
  }
  throw ConfigError("scenario '" + name + "' has no prior variant '" + std::string(variant) + "'");
}

void Scenario::validate() const {
  const std::string at = "scenario '" + name + "'";
  if (name.empty()) throw ConfigError("scenario name must not be empty");
  if (pi.size() < 2) throw ConfigError(at + ": needs at least two categories");
  try {
    validate_probability_vector(pi, "pi");
  } catch (const ConfigError& e) {
    throw ConfigError(at + ": " + e.what());
  }
  if (p.size() != categories()) throw ConfigError(at + ": P size differs from pi");
  if (known_q && known_q->size() != categories()) throw ConfigError(at + ": known_q size differs from pi");
  if (fit_family.kind() == FamilyKind::StudentT && generator != FamilyKind::StudentT) {
    throw ConfigError(at + ": a Student t fit needs a Student t generator");
  }
  if (!std::isfinite(alpha0) || !std::isfinite(alpha1)) throw ConfigError(at + ": alpha must be finite");
  if (sample_sizes.empty()) throw ConfigError(at + ": needs at least one sample size");
  if (n_replications < 1) throw ConfigError(at + ": n_replications must be >= 1");
  switch (generator) {
    case FamilyKind::Normal:
      if (!(phi.sigma > 0.0)) throw ConfigError(at + ": sigma must be positive");
      break;
    case FamilyKind::StudentT:
      if (!(phi.sigma > 0.0) || !(phi.df > 0.0)) throw ConfigError(at + ": scale and df must be positive");
      break;
    case FamilyKind::ZeroInflatedPoisson:
      if (!(phi.zero_weight >= 0.0 && phi.zero_weight < 1.0)) throw ConfigError(at + ": zero_weight must lie in [0,1)");
      break;
    case FamilyKind::Gamma:
      if (!(phi.shape > 0.0)) throw ConfigError(at + ": shape must be positive");
      break;
    case FamilyKind::Poisson:
      break;
  }
  true_q();
}

std::vector<std::string> ScenarioFile::names() const {
  std::vector<std::string> out;
  for (const auto& s : scenarios) out.push_back(s.name);
  return out;
}

const Scenario& ScenarioFile::find(std::string_view name) const {
  for (const auto& s : scenarios) {
    if (s.name == name) return s;
  }
  std::string list;
  for (const auto& n : names()) list += (list.empty() ? "" : ", ") + n;
  throw ConfigError("unknown scenario '" + std::string(name) + "'; available: " + list);
}

ScenarioFile parse_scenarios(std::string_view text) {
  const Json j = codec::parse(text, "scenario file");
  codec::reject_unknown(j, {"schema_version", "description", "matrices", "scenarios"}, "");
  if (!j.contains("schema_version") || codec::integer(j["schema_version"], "schema_version") != kScenarioSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kScenarioSchemaVersion));
  }
  ScenarioFile file;
  if (j.contains("matrices")) {
    for (auto it = j["matrices"].begin(); it != j["matrices"].end(); ++it) {
      const std::string path = "matrices." + it.key();
      file.matrices[it.key()] = normalize_rows(codec::matrix(it.value(), path), path);
    }
  }
  if (!j.contains("scenarios") || !j["scenarios"].is_array()) throw ConfigError("scenarios: expected an array");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < j["scenarios"].size(); ++i) {
    auto sc = scenario_from(j["scenarios"][i], file.matrices, "scenarios[" + std::to_string(i) + "]");
    if (!seen.insert(sc.name).second) throw ConfigError("scenarios: duplicate name '" + sc.name + "'");
    file.scenarios.push_back(std::move(sc));
  }
  return file;
}

ScenarioFile load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenarios(buffer.str());
}

std::filesystem::path default_scenario_path() {
  if (const char* env = std::getenv("MIXCLASS_SCENARIOS"); env && *env) return env;
  const std::filesystem::path source = MIXCLASS_SOURCE_SCENARIOS;
  if (!source.empty() && std::filesystem::exists(source)) return source;
  return MIXCLASS_INSTALLED_SCENARIOS;
}

std::uint64_t replication_seed(const Scenario& sc, std::size_t n, int rep) {
  return splitmix64(splitmix64(splitmix64(sc.seed) ^ n) ^ static_cast<std::uint64_t>(rep));
}

GeneratedData generate(const Scenario& sc, std::size_t n, std::uint64_t rep_seed) {
  sc.validate();
  if (n < 1) throw ConfigError("generate: n must be >= 1");
  std::mt19937_64 rng(rep_seed);
  const auto k = sc.categories();
  const auto p = sc.beta.size();
  GeneratedData out;
  out.v.resize(n);
  out.data.v_star.resize(n);
  out.data.y.resize(static_cast<Eigen::Index>(n));
  out.data.x.resize(static_cast<Eigen::Index>(n), p);
  out.data.w.resize(static_cast<Eigen::Index>(n), 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> p_rows;
  for (std::size_t r = 0; r < k; ++r) p_rows.push_back(sc.p.matrix().row(static_cast<Eigen::Index>(r)).transpose());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int v = draw_category(sc.pi, rng);
    out.v[i] = v;
    out.data.v_star[i] = draw_category(p_rows[static_cast<std::size_t>(v)], rng);
    double eta = sc.alpha0 + sc.alpha1 * v;
    for (Eigen::Index c = 0; c < p; ++c) {
      out.data.x(r, c) = normal(rng);
      eta += sc.beta[c] * out.data.x(r, c);
    }
    double y = 0.0;
    switch (sc.generator) {
      case FamilyKind::Normal:
        y = eta + sc.phi.sigma * normal(rng);
        break;
      case FamilyKind::StudentT:
        y = eta + sc.phi.sigma * std::student_t_distribution<double>(sc.phi.df)(rng);
        break;
      case FamilyKind::Poisson:
        y = static_cast<double>(std::poisson_distribution<long>(std::exp(eta))(rng));
        break;
      case FamilyKind::ZeroInflatedPoisson: {
        // Mean identity: (1 - w) * lambda = exp(eta).
        const double w = sc.phi.zero_weight;
        const bool extra_zero = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < w;
        const double lambda = std::exp(eta) / (1.0 - w);
        const double draw = static_cast<double>(std::poisson_distribution<long>(lambda)(rng));
        y = extra_zero ? 0.0 : draw;
        break;
      }
      case FamilyKind::Gamma:
        y = std::gamma_distribution<double>(sc.phi.shape, std::exp(eta) / sc.phi.shape)(rng);
        break;
    }
    out.data.y[r] = y;
  }
  return out;
}

std::optional<double> true_value(const Scenario& sc, std::string_view param) {
  if (param == "alpha0") return sc.alpha0;
  if (param == "alpha1") return sc.alpha1;
  if (param.starts_with("beta_")) {
    const auto c = std::stoul(std::string(param.substr(5)));
    if (c >= 1 && static_cast<Eigen::Index>(c) <= sc.beta.size()) return sc.beta[static_cast<Eigen::Index>(c - 1)];
    return std::nullopt;
  }
  const auto index = [&](std::string_view rest) -> std::optional<std::size_t> {
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v);
    if (ec != std::errc{} || end != rest.data() + rest.size() || v >= sc.categories()) return std::nullopt;
    return v;
  };
  if (param.starts_with("pi_star_")) {
    const auto k = index(param.substr(8));
    if (!k) return std::nullopt;
    const Eigen::VectorXd pi_star = sc.p.matrix().transpose() * sc.pi;
    return pi_star[static_cast<Eigen::Index>(*k)];
  }
  if (param.starts_with("q_")) {
    const auto rest = param.substr(2);
    const auto sep = rest.find('_');
    if (sep == std::string_view::npos) return std::nullopt;
    const auto r = index(rest.substr(0, sep));
    const auto c = index(rest.substr(sep + 1));
    if (!r || !c) return std::nullopt;
    return sc.true_q()(*r, *c);
  }
  if (sc.generator != sc.fit_family.kind()) return std::nullopt;
  if (param == "sigma" && (sc.generator == FamilyKind::Normal || sc.generator == FamilyKind::StudentT)) return sc.phi.sigma;
  if (param == "df" && sc.generator == FamilyKind::StudentT) return sc.phi.df;
  if (param == "shape" && sc.generator == FamilyKind::Gamma) return sc.phi.shape;
  if (param == "zero_weight" && sc.generator == FamilyKind::ZeroInflatedPoisson) return sc.phi.zero_weight;
  return std::nullopt;
}

void validate_arm(const Scenario& sc, std::string_view arm) {
  if (arm == "naive" || arm == "true" || arm == "known_q" || arm == "mixture") return;
  if (arm.starts_with("mixture:")) {
    sc.priors_for(arm.substr(8));
    return;
  }
  throw ConfigError("unknown arm '" + std::string(arm) + "' (expected naive, true, known_q, mixture or mixture:<variant>)");
}

std::vector<StudyRow> read_study_csv(const std::filesystem::path& path) {
  std::vector<StudyRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kStudyHeader) throw DataError("study table '" + path.string() + "' has an unexpected header", 1);
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    // A partially written last line (interrupted run) is ignored.
    if (f.size() != 13) continue;
    try {
      StudyRow r;
      r.scenario = f[0];
      r.n = std::stoul(f[1]);
      r.rep = std::stoi(f[2]);
      r.arm = f[3];
      r.param = f[4];
      r.estimate = parse_cell(f[5]);
      r.lo = parse_cell(f[6]);
      r.hi = parse_cell(f[7]);
      if (!f[8].empty()) r.covered = f[8] == "1";
      r.ess = parse_cell(f[9]);
      r.rhat = parse_cell(f[10]);
      r.seconds = parse_cell(f[11]);
      r.status = f[12];
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError("malformed study row", line_no);
    }
  }
  return rows;
}

std::vector<StudyRow> run_study(const Scenario& sc, const StudyOptions& options,
                                const std::filesystem::path& table_csv) {
  sc.validate();
  const auto arms = options.arms.empty() ? sc.arms : options.arms;
  for (const auto& a : arms) validate_arm(sc, a);
  const auto sizes = options.sample_sizes.empty() ? sc.sample_sizes : options.sample_sizes;
  const int reps = options.replications.value_or(sc.n_replications);
  if (reps < 1) throw ConfigError("replications must be >= 1");
  if (!(options.level > 0.0 && options.level < 1.0)) throw ConfigError("level must lie in (0,1)");
  const auto params = options.params.empty() ? default_params(sc) : options.params;
  McmcConfig base_cfg = options.mcmc.value_or(sc.mcmc);
  base_cfg.sign_constraint = sc.sign_constraint;
  base_cfg.threads = 1;

  std::set<std::tuple<std::size_t, int, std::string>> done;
  const bool exists = std::filesystem::exists(table_csv) && std::filesystem::file_size(table_csv) > 0;
  if (exists) {
    for (const auto& r : read_study_csv(table_csv)) {
      if (r.scenario == sc.name) done.emplace(r.n, r.rep, r.arm);
    }
  }
  if (table_csv.has_parent_path()) std::filesystem::create_directories(table_csv.parent_path());
  std::ofstream sink(table_csv, std::ios::app);
  if (!sink) throw DataError("cannot open study table '" + table_csv.string() + "'", 0);
  if (!exists) sink << kStudyHeader << '\n' << std::flush;
  std::mutex sink_mutex;

  struct Cell {
    std::size_t n;
    int rep;
    std::string arm;
  };
  std::vector<Cell> cells;
  for (auto n : sizes) {
    for (int rep = 0; rep < reps; ++rep) {
      for (const auto& arm : arms) {
        if (!done.contains({n, rep, arm})) cells.push_back({n, rep, arm});
      }
    }
  }

  const auto spec = sc.model_spec();
  parallel_for(cells.size(), options.threads, [&](std::size_t c) {
    const auto& cell = cells[c];
    const auto started = std::chrono::steady_clock::now();
    std::vector<StudyRow> rows;
    auto base_row = [&](const std::string& param) {
      StudyRow r;
      r.scenario = sc.name;
      r.n = cell.n;
      r.rep = cell.rep;
      r.arm = cell.arm;
      r.param = param;
      return r;
    };
    try {
      const auto seed = replication_seed(sc, cell.n, cell.rep);
      const auto gen = generate(sc, cell.n, seed);
      McmcConfig cfg = base_cfg;
      cfg.seed = splitmix64(seed ^ 0x5eed);
      const std::string variant = cell.arm.starts_with("mixture:") ? cell.arm.substr(8) : std::string();
      const auto& priors = sc.priors_for(variant);
      const Arm arm = variant.empty() ? parse_arm(cell.arm) : Arm::Mixture;
      const auto fits = fit_competitors(spec, gen.data, priors, cfg, {arm}, gen.v, sc.reference_q());
      const auto& sample = fits.at(arm);
      const auto table = summarize(sample, options.level);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      for (const auto& param : params) {
        const auto& s = table.at(sample.index_of(param));
        StudyRow r = base_row(param);
        r.estimate = s.mean;
        r.lo = s.lower;
        r.hi = s.upper;
        if (const auto truth = true_value(sc, param)) r.covered = s.lower <= *truth && *truth <= s.upper;
        r.ess = s.ess;
        r.rhat = s.rhat;
        r.seconds = seconds;
        r.status = sample.converged ? "ok" : "rhat_flag";
        rows.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      rows.clear();
      for (const auto& param : params) {
        StudyRow r = base_row(param);
        r.estimate = r.lo = r.hi = r.ess = r.rhat = kNaN;
        r.seconds = seconds;
        r.status = error_kind(e);
        rows.push_back(std::move(r));
      }
    }
    std::lock_guard lock(sink_mutex);
    for (const auto& r : rows) {
      sink << row_to_csv(r) << '\n';
      if (options.on_row) options.on_row(r);
    }
    sink << std::flush;
  });
  sink.close();

  std::vector<StudyRow> all;
  for (auto& r : read_study_csv(table_csv)) {
    if (r.scenario == sc.name) all.push_back(std::move(r));
  }
  return all;
}

std::vector<StudySummaryRow> summarize_study(const Scenario& sc, const std::vector<StudyRow>& rows) {
  std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<const StudyRow*>> groups;
  for (const auto& r : rows) {
    if (r.scenario == sc.name) groups[{r.arm, r.n, r.param}].push_back(&r);
  }
  std::vector<StudySummaryRow> out;
  for (const auto& [key, members] : groups) {
    StudySummaryRow s;
    std::tie(s.arm, s.n, s.param) = key;
    const auto truth = true_value(sc, s.param);
    double est = 0.0, err = 0.0, width = 0.0, covered = 0.0;
    for (const auto* r : members) {
      if (r->status.starts_with("error")) {
        ++s.failures;
        continue;
      }
      ++s.reps;
      est += r->estimate;
      width += r->hi - r->lo;
      if (truth) {
        err += std::abs(r->estimate - *truth);
        covered += (r->lo <= *truth && *truth <= r->hi) ? 1.0 : 0.0;
      }
    }
    const double n = static_cast<double>(s.reps);
    s.mean_estimate = s.reps > 0 ? est / n : kNaN;
    s.mean_width = s.reps > 0 ? width / n : kNaN;
    s.mean_abs_error = truth && s.reps > 0 ? err / n : kNaN;
    s.coverage = truth && s.reps > 0 ? covered / n : kNaN;
    out.push_back(std::move(s));
  }
  return out;
}

void write_study_summary_csv(const std::filesystem::path& path, const std::vector<StudySummaryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing", 0);
  out << "arm,n,param,reps,failures,mean_estimate,mean_abs_error,coverage,mean_width\n";
  for (const auto& r : rows) {
    out << r.arm << ',' << r.n << ',' << r.param << ',' << r.reps << ',' << r.failures << ','
        << format_double(r.mean_estimate) << ',' << format_double(r.mean_abs_error) << ','
        << format_double(r.coverage) << ',' << format_double(r.mean_width) << '\n';
  }
}

}  // namespace mixclass
