#include "mixclass/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json_codec.hpp"

namespace mixclass {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s, const std::string& column, std::size_t line) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) {
    throw DataError("column '" + column + "': cannot parse '" + s + "' as a number", line);
  }
  return v;
}

int parse_int(const std::string& s, const std::string& column, std::size_t line) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) {
    throw DataError("column '" + column + "': cannot parse '" + s + "' as an integer category", line);
  }
  return v;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing", 0);
  out << std::setprecision(17);
  return out;
}

}  // namespace

CsvDataset parse_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split(line);
      break;
    }
  }
  if (header.empty()) throw DataError("missing header row", std::max<std::size_t>(line_no, 1));

  enum class Role { Y, VStar, V, X, W };
  std::vector<Role> roles;
  CsvDataset out;
  bool has_y = false, has_vstar = false, has_v = false;
  for (const auto& name : header) {
    if (name == "y") {
      if (has_y) throw DataError("duplicate column 'y'", line_no);
      has_y = true;
      roles.push_back(Role::Y);
    } else if (name == "v_star") {
      if (has_vstar) throw DataError("duplicate column 'v_star'", line_no);
      has_vstar = true;
      roles.push_back(Role::VStar);
    } else if (name == "v") {
      if (has_v) throw DataError("duplicate column 'v'", line_no);
      has_v = true;
      roles.push_back(Role::V);
    } else if (name.size() > 2 && name.starts_with("x_")) {
      out.x_columns.push_back(name);
      roles.push_back(Role::X);
    } else if (name.size() > 2 && name.starts_with("w_")) {
      out.w_columns.push_back(name);
      roles.push_back(Role::W);
    } else {
      throw DataError("unknown column '" + name + "' (expected y, v_star, v, x_*, w_*)", line_no);
    }
  }
  if (!has_y) throw DataError("missing required column 'y'", line_no);
  if (!has_vstar) throw DataError("missing required column 'v_star'", line_no);

  std::vector<double> y;
  std::vector<int> v_star, v;
  std::vector<double> x, w;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()),
                      line_no);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      switch (roles[c]) {
        case Role::Y: y.push_back(parse_double(cells[c], header[c], line_no)); break;
        case Role::VStar: v_star.push_back(parse_int(cells[c], header[c], line_no)); break;
        case Role::V: v.push_back(parse_int(cells[c], header[c], line_no)); break;
        case Role::X: x.push_back(parse_double(cells[c], header[c], line_no)); break;
        case Role::W: w.push_back(parse_double(cells[c], header[c], line_no)); break;
      }
    }
    if (v_star.back() < 0) throw DataError("column 'v_star': categories must be >= 0", line_no);
    if (has_v && v.back() < 0) throw DataError("column 'v': categories must be >= 0", line_no);
  }
  const auto n = static_cast<Eigen::Index>(y.size());
  out.data.y = Eigen::Map<Eigen::VectorXd>(y.data(), n);
  out.data.v_star = std::move(v_star);
  const auto p = static_cast<Eigen::Index>(out.x_columns.size());
  const auto m = static_cast<Eigen::Index>(out.w_columns.size());
  out.data.x = Eigen::Map<RowMatrix>(x.data(), n, p);
  out.data.w = Eigen::Map<RowMatrix>(w.data(), n, m);
  if (has_v) out.true_v = std::move(v);
  return out;
}

CsvDataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'", 0);
  return parse_dataset_csv(in);
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data, const std::vector<int>* true_v) {
  auto out = open_output(path);
  out << "y,v_star";
  if (true_v) out << ",v";
  for (Eigen::Index c = 0; c < data.x.cols(); ++c) out << ",x_" << (c + 1);
  for (Eigen::Index c = 0; c < data.w.cols(); ++c) out << ",w_" << (c + 1);
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << data.y[r] << ',' << data.v_star[i];
    if (true_v) out << ',' << (*true_v)[i];
    for (Eigen::Index c = 0; c < data.x.cols(); ++c) out << ',' << data.x(r, c);
    for (Eigen::Index c = 0; c < data.w.cols(); ++c) out << ',' << data.w(r, c);
    out << '\n';
  }
}

void write_draws_csv(const std::filesystem::path& path, const PosteriorSample& sample) {
  auto out = open_output(path);
  out << "chain,draw";
  for (const auto& name : sample.names) out << ',' << name;
  out << '\n';
  for (std::size_t c = 0; c < sample.n_chains(); ++c) {
    for (std::size_t t = 0; t < sample.n_kept(); ++t) {
      out << c << ',' << t;
      for (std::size_t a = 0; a < sample.names.size(); ++a) out << ',' << sample.draws[a][c][t];
      out << '\n';
    }
  }
}

std::string summary_json(const std::map<std::string, PosteriorSample>& arms, double level) {
  codec::Json j;
  j["schema_version"] = kSummarySchemaVersion;
  j["level"] = level;
  codec::Json arms_json = codec::Json::object();
  for (const auto& [name, sample] : arms) {
    const auto table = summarize(sample, level);
    codec::Json a;
    a["converged"] = sample.converged;
    a["n_chains"] = sample.n_chains();
    a["n_kept"] = sample.n_kept();
    a["seconds"] = sample.seconds;
    codec::Json params = codec::Json::array();
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto& s = table[i];
      params.push_back({{"name", s.name},
                        {"mean", s.mean},
                        {"sd", s.sd},
                        {"lower", s.lower},
                        {"upper", s.upper},
                        {"ess", s.ess},
                        {"rhat", s.rhat},
                        {"monitored", static_cast<bool>(sample.monitored[i])}});
    }
    a["parameters"] = params;
    codec::Json acc = codec::Json::object();
    for (const auto& [p, rate] : sample.acceptance) acc[p] = rate;
    a["acceptance"] = acc;
    arms_json[name] = a;
  }
  j["arms"] = arms_json;
  return j.dump(2);
}

std::string em_fit_json(const EmFit& fit, const ModelSpec& spec) {
  codec::Json j;
  j["schema_version"] = kSummarySchemaVersion;
  j["engine"] = "em";
  j["family"] = std::string(spec.family.name());
  j["loglik"] = fit.loglik;
  j["n_iter"] = fit.n_iter;
  j["converged"] = fit.converged;
  j["max_decrease"] = fit.max_decrease;
  j["restart_logliks"] = fit.restart_logliks;
  j["theta"] = codec::theta_to(fit.theta_hat);
  j["trace"] = fit.trace;
  return j.dump(2);
}

PriorSpec parse_prior_spec(std::string_view json, const ModelSpec& spec, const NamedMatrices& named,
                           PriorSpec base) {
  return codec::priors_from(codec::parse(json, "priors"), spec, named, std::move(base), "priors");
}

std::string prior_spec_json(const PriorSpec& priors) { return codec::priors_to(priors).dump(2); }

McmcConfig parse_mcmc_config(std::string_view json, McmcConfig base) {
  return codec::mcmc_from(codec::parse(json, "mcmc"), std::move(base), "mcmc");
}

std::string mcmc_config_json(const McmcConfig& cfg) { return codec::mcmc_to(cfg).dump(2); }

EmConfig parse_em_config(std::string_view json, EmConfig base) {
  return codec::em_from(codec::parse(json, "em"), std::move(base), "em");
}

std::string em_config_json(const EmConfig& cfg) { return codec::em_to(cfg).dump(2); }

std::string theta_json(const Theta& theta) { return codec::theta_to(theta).dump(2); }

}  // namespace mixclass
