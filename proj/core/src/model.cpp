#include "mixclass/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>

namespace mixclass {

namespace {

constexpr double kStochasticTol = 1e-12;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view to_string(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::Normal: return "normal";
    case FamilyKind::StudentT: return "student_t";
    case FamilyKind::Poisson: return "poisson";
    case FamilyKind::ZeroInflatedPoisson: return "zip";
    case FamilyKind::Gamma: return "gamma";
  }
  return "unknown";
}

std::string_view to_string(SignConstraint sign) {
  switch (sign) {
    case SignConstraint::PositiveSlope: return "positive";
    case SignConstraint::NegativeSlope: return "negative";
    case SignConstraint::None: return "none";
  }
  return "unknown";
}

FamilyKind parse_family(std::string_view name) {
  const auto s = lower(name);
  if (s == "normal" || s == "gaussian") return FamilyKind::Normal;
  if (s == "student_t" || s == "t" || s == "studentt") return FamilyKind::StudentT;
  if (s == "poisson") return FamilyKind::Poisson;
  if (s == "zip" || s == "zero_inflated_poisson") return FamilyKind::ZeroInflatedPoisson;
  if (s == "gamma") return FamilyKind::Gamma;
  throw ConfigError("unknown response family '" + std::string(name) + "'");
}

SignConstraint parse_sign_constraint(std::string_view name) {
  const auto s = lower(name);
  if (s == "positive" || s == "positive_slope") return SignConstraint::PositiveSlope;
  if (s == "negative" || s == "negative_slope") return SignConstraint::NegativeSlope;
  if (s == "none") return SignConstraint::None;
  throw ConfigError("unknown sign constraint '" + std::string(name) + "'");
}

Link ResponseFamily::canonical_link(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::Normal:
    case FamilyKind::StudentT: return Link::Identity;
    default: return Link::Log;
  }
}

ResponseFamily::ResponseFamily(FamilyKind kind) : kind_(kind), link_(canonical_link(kind)) {}

ResponseFamily::ResponseFamily(FamilyKind kind, Link link) : kind_(kind), link_(link) {
  if (link != canonical_link(kind)) {
    throw ConfigError("family '" + std::string(to_string(kind)) +
                      "' does not support the requested link");
  }
}

double ResponseFamily::inverse_link(double eta) const {
  return link_ == Link::Identity ? eta : std::exp(eta);
}

namespace detail {

void validate_stochastic(const Eigen::MatrixXd& m, std::string_view what) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw ConfigError(std::string(what) + " must be square and non-empty");
  }
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(k, j);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError(std::string(what) + " entry (" + std::to_string(k) + "," +
                          std::to_string(j) + ") outside [0,1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kStochasticTol) {
      throw ConfigError(std::string(what) + " row " + std::to_string(k) +
                        " does not sum to 1");
    }
  }
}

}  // namespace detail

void validate_probability_vector(const Eigen::VectorXd& p, std::string_view what) {
  if (p.size() == 0) throw ConfigError(std::string(what) + " is empty");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (!(p[k] >= 0.0 && p[k] <= 1.0)) {
      throw ConfigError(std::string(what) + " entry " + std::to_string(k) + " outside [0,1]");
    }
    sum += p[k];
  }
  if (std::abs(sum - 1.0) > kStochasticTol) {
    throw ConfigError(std::string(what) + " does not sum to 1");
  }
}

GatingSpec::GatingSpec(LogitGating logit) {
  const auto k = logit.intercepts.rows();
  if (k < 1 || logit.intercepts.cols() != k - 1) {
    throw ConfigError("logit gating intercepts must be K x (K-1)");
  }
  if (!logit.slopes.empty()) {
    if (static_cast<Eigen::Index>(logit.slopes.size()) != k) {
      throw ConfigError("logit gating needs one slope block per observed category");
    }
    const auto m = logit.slopes.front().cols();
    for (const auto& s : logit.slopes) {
      if (s.rows() != k - 1 || s.cols() != m) {
        throw ConfigError("logit gating slope blocks must be (K-1) x m");
      }
    }
  }
  mode_ = std::move(logit);
}

std::size_t GatingSpec::categories() const {
  return std::visit([](const auto& g) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(g)>, ReclassificationMatrix>) {
      return g.size();
    } else {
      return g.categories();
    }
  }, mode_);
}

std::size_t GatingSpec::covariates() const {
  if (const auto* l = std::get_if<LogitGating>(&mode_)) return l->covariates();
  return 0;
}

const ReclassificationMatrix& GatingSpec::constant() const {
  if (const auto* q = std::get_if<ReclassificationMatrix>(&mode_)) return *q;
  throw ConfigError("gating is not a constant reclassification matrix");
}

const LogitGating& GatingSpec::logit() const {
  if (const auto* l = std::get_if<LogitGating>(&mode_)) return *l;
  throw ConfigError("gating is not a logit model");
}

void Theta::validate(const ResponseFamily& family, SignConstraint sign) const {
  validate_probability_vector(pi_star, "pi_star");
  if (gating.categories() != categories()) {
    throw ConfigError("gating has " + std::to_string(gating.categories()) +
                      " categories but pi_star has " + std::to_string(categories()));
  }
  if (!std::isfinite(alpha0) || !std::isfinite(alpha1) || !beta.allFinite()) {
    throw ConfigError("regression coefficients must be finite");
  }
  switch (family.kind()) {
    case FamilyKind::Normal:
      if (!(phi.sigma > 0.0 && std::isfinite(phi.sigma))) throw ConfigError("sigma must be > 0");
      break;
    case FamilyKind::StudentT:
      if (!(phi.sigma > 0.0 && std::isfinite(phi.sigma))) throw ConfigError("sigma must be > 0");
      if (!(phi.df > 0.0 && std::isfinite(phi.df))) throw ConfigError("df must be > 0");
      break;
    case FamilyKind::Gamma:
      if (!(phi.shape > 0.0 && std::isfinite(phi.shape))) throw ConfigError("shape must be > 0");
      break;
    case FamilyKind::ZeroInflatedPoisson:
      if (!(phi.zero_weight >= 0.0 && phi.zero_weight < 1.0)) {
        throw ConfigError("zero_weight must lie in [0,1)");
      }
      break;
    case FamilyKind::Poisson: break;
  }
  if (sign == SignConstraint::PositiveSlope && !(alpha1 > 0.0)) {
    throw ConfigError("alpha1 must be > 0 under the positive sign constraint");
  }
  if (sign == SignConstraint::NegativeSlope && !(alpha1 < 0.0)) {
    throw ConfigError("alpha1 must be < 0 under the negative sign constraint");
  }
}

void ModelSpec::validate() const {
  if (categories < 1) throw ConfigError("model needs at least one category");
  if (gating == GatingMode::ConstantMatrix && gating_covariates != 0) {
    throw ConfigError("gating covariates require the logit gating mode");
  }
}

void ModelSpec::check(const Theta& theta) const {
  validate();
  theta.validate(family);
  if (theta.categories() != categories) {
    throw ConfigError("theta has " + std::to_string(theta.categories()) +
                      " categories, model expects " + std::to_string(categories));
  }
  if (static_cast<std::size_t>(theta.beta.size()) != covariates) {
    throw ConfigError("theta.beta has " + std::to_string(theta.beta.size()) +
                      " entries, model expects " + std::to_string(covariates));
  }
  if (theta.gating.mode() != gating) throw ConfigError("theta gating mode differs from model");
  if (gating == GatingMode::LogitModel && theta.gating.covariates() != gating_covariates &&
      theta.gating.covariates() != 0) {
    throw ConfigError("logit gating covariate count differs from model");
  }
}

std::span<const double> Dataset::x_row(std::size_t i) const {
  if (x.cols() == 0) return {};
  return {x.data() + i * static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(x.cols())};
}

std::span<const double> Dataset::w_row(std::size_t i) const {
  if (w.cols() == 0) return {};
  return {w.data() + i * static_cast<std::size_t>(w.cols()), static_cast<std::size_t>(w.cols())};
}

namespace {

void check_response(const ResponseFamily& family, double y) {
  if (!std::isfinite(y)) throw DomainError("response must be finite");
  if (family.is_count() && (y < 0.0 || y != std::floor(y))) {
    throw DomainError("count response must be a non-negative integer");
  }
  if (family.kind() == FamilyKind::Gamma && !(y > 0.0)) {
    throw DomainError("gamma response must be positive");
  }
}

}  // namespace

void Dataset::validate(const ResponseFamily& family, std::size_t categories,
                       bool allow_empty) const {
  const auto n = size();
  if (n == 0 && !allow_empty) throw DataError("dataset has no rows");
  if (v_star.size() != n) throw DataError("v_star length differs from y");
  if (x.cols() > 0 && static_cast<std::size_t>(x.rows()) != n) {
    throw DataError("covariate matrix row count differs from y");
  }
  if (w.cols() > 0 && static_cast<std::size_t>(w.rows()) != n) {
    throw DataError("gating covariate matrix row count differs from y");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (v_star[i] < 0 || static_cast<std::size_t>(v_star[i]) >= categories) {
      throw DataError("v_star value " + std::to_string(v_star[i]) + " outside {0.." +
                      std::to_string(categories - 1) + "} at row " + std::to_string(i));
    }
    try {
      check_response(family, y[static_cast<Eigen::Index>(i)]);
    } catch (const DomainError& e) {
      throw DataError(std::string(e.what()) + " at row " + std::to_string(i));
    }
  }
}

double linear_predictor(const Theta& theta, int v, std::span<const double> x_row) {
  double eta = theta.alpha0 + theta.alpha1 * v;
  const auto p = std::min<std::size_t>(x_row.size(), static_cast<std::size_t>(theta.beta.size()));
  for (std::size_t k = 0; k < p; ++k) eta += theta.beta[static_cast<Eigen::Index>(k)] * x_row[k];
  return eta;
}

double response_logpdf(const ResponseFamily& family, const Nuisance& phi, double eta, double y) {
  switch (family.kind()) {
    case FamilyKind::Normal: {
      const double z = (y - eta) / phi.sigma;
      return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(phi.sigma) - 0.5 * z * z;
    }
    case FamilyKind::StudentT: {
      const double nu = phi.df;
      const double z = (y - eta) / phi.sigma;
      return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
             0.5 * std::log(nu * std::numbers::pi) - std::log(phi.sigma) -
             0.5 * (nu + 1.0) * std::log1p(z * z / nu);
    }
    case FamilyKind::Poisson:
      return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    case FamilyKind::ZeroInflatedPoisson: {
      // Poisson rate chosen so that the ZIP mean is exp(eta).
      const double w = phi.zero_weight;
      const double log_lambda = eta - std::log1p(-w);
      const double lambda = std::exp(log_lambda);
      if (y == 0.0) {
        if (w == 0.0) return -lambda;
        const double a = std::log(w);
        const double b = std::log1p(-w) - lambda;
        const double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
      }
      return std::log1p(-w) + y * log_lambda - lambda - std::lgamma(y + 1.0);
    }
    case FamilyKind::Gamma: {
      const double k = phi.shape;
      return k * std::log(k) - k * eta + (k - 1.0) * std::log(y) - k * y * std::exp(-eta) -
             std::lgamma(k);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double component_logpdf(const ResponseFamily& family, const Theta& theta, int v,
                        std::span<const double> x_row, double y) {
  check_response(family, y);
  return response_logpdf(family, theta.phi, linear_predictor(theta, v, x_row), y);
}

Eigen::VectorXd gating_probabilities(const GatingSpec& gating, int v_star,
                                     std::span<const double> w_row) {
  const auto k = static_cast<int>(gating.categories());
  if (v_star < 0 || v_star >= k) throw ConfigError("observed category out of range");
  if (gating.mode() == GatingMode::ConstantMatrix) {
    return gating.constant().matrix().row(v_star).transpose();
  }
  const auto& logit = gating.logit();
  const auto m = logit.covariates();
  if (m > 0 && w_row.size() < m) {
    throw ConfigError("logit gating needs " + std::to_string(m) + " gating covariates");
  }
  Eigen::VectorXd score(k);
  for (int j = 0; j < k - 1; ++j) {
    double s = logit.intercepts(v_star, j);
    for (std::size_t c = 0; c < m; ++c) {
      s += logit.slopes[static_cast<std::size_t>(v_star)](j, static_cast<Eigen::Index>(c)) *
           w_row[c];
    }
    score[j] = s;
  }
  score[k - 1] = 0.0;
  const double mx = score.maxCoeff();
  Eigen::VectorXd p = (score.array() - mx).exp();
  return p / p.sum();
}

GatingSpec logit_gating_from_matrix(const Eigen::MatrixXd& q, std::size_t m) {
  const auto k = q.rows();
  LogitGating g;
  g.intercepts.resize(k, k - 1);
  for (Eigen::Index row = 0; row < k; ++row) {
    for (Eigen::Index j = 0; j < k - 1; ++j) g.intercepts(row, j) = std::log(q(row, j)) - std::log(q(row, k - 1));
  }
  if (m > 0) g.slopes.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Zero(k - 1, static_cast<Eigen::Index>(m)));
  return GatingSpec(std::move(g));
}

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double mixture_loglik(const ModelSpec& spec, const Theta& theta, const Dataset& data) {
  spec.check(theta);
  data.validate(spec.family, spec.categories, true);
  const auto k = static_cast<int>(spec.categories);
  const bool constant = theta.gating.mode() == GatingMode::ConstantMatrix;
  Eigen::MatrixXd log_q;
  if (constant) log_q = theta.gating.constant().matrix().array().log();
  std::vector<double> terms(static_cast<std::size_t>(k));
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int vs = data.v_star[i];
    const double y = data.y[static_cast<Eigen::Index>(i)];
    const auto x_row = data.x_row(i);
    Eigen::VectorXd q_row;
    if (!constant) q_row = gating_probabilities(theta.gating, vs, data.w_row(i));
    for (int j = 0; j < k; ++j) {
      const double lq = constant ? log_q(vs, j) : std::log(q_row[j]);
      terms[static_cast<std::size_t>(j)] =
          lq + component_logpdf(spec.family, theta, j, x_row, y);
    }
    const double row = std::log(theta.pi_star[vs]) + log_sum_exp(terms);
    if (!std::isfinite(row)) {
      throw NumericError("non-finite log-likelihood contribution",
                         static_cast<std::ptrdiff_t>(i));
    }
    total += row;
  }
  return total;
}

ReclassificationResult derive_reclassification(const ClassificationMatrix& p,
                                               const Eigen::VectorXd& pi) {
  const auto k = static_cast<Eigen::Index>(p.size());
  if (pi.size() != k) throw ConfigError("pi length differs from classification matrix");
  validate_probability_vector(pi, "pi");
  const Eigen::VectorXd pi_star = p.matrix().transpose() * pi;
  Eigen::MatrixXd q(k, k);
  for (Eigen::Index r = 0; r < k; ++r) {
    if (!(pi_star[r] > 0.0)) {
      throw DegenerateCategoryError("observed category " + std::to_string(r) +
                                        " has zero probability",
                                    static_cast<std::size_t>(r));
    }
    for (Eigen::Index j = 0; j < k; ++j) q(r, j) = p.matrix()(j, r) * pi[j] / pi_star[r];
  }
  return {pi_star, ReclassificationMatrix(std::move(q))};
}

ClassificationResult derive_classification(const ReclassificationMatrix& q,
                                           const Eigen::VectorXd& pi_star) {
  const auto k = static_cast<Eigen::Index>(q.size());
  if (pi_star.size() != k) throw ConfigError("pi_star length differs from reclassification matrix");
  validate_probability_vector(pi_star, "pi_star");
  const Eigen::VectorXd pi = q.matrix().transpose() * pi_star;
  Eigen::MatrixXd p(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (!(pi[j] > 0.0)) {
      throw DegenerateCategoryError("true category " + std::to_string(j) +
                                        " has zero probability",
                                    static_cast<std::size_t>(j));
    }
    for (Eigen::Index r = 0; r < k; ++r) p(j, r) = q.matrix()(r, j) * pi_star[r] / pi[j];
  }
  return {pi, ClassificationMatrix(std::move(p))};
}

}  // namespace mixclass
