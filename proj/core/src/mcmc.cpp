#include "mixclass/mcmc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "mixclass/em.hpp"
#include "mixclass/glm.hpp"
#include "mixclass/parallel.hpp"

namespace mixclass {

namespace {

using Rng = std::mt19937_64;

constexpr double kInf = std::numeric_limits<double>::infinity();

double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

// Uniform on (0, 1].
double open_uniform(Rng& rng) { return 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// log of a Gamma(shape, 1) draw.
double log_gamma_draw(double shape, Rng& rng) {
  if (shape >= 1.0) return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  const double g = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng);
  return std::log(g) + std::log(open_uniform(rng)) / shape;
}

bool accept(double log_ratio, Rng& rng) {
  if (log_ratio >= 0.0) return true;
  if (!(log_ratio > -kInf)) return false;
  return std::log(open_uniform(rng)) < log_ratio;
}

double slope_sign(SignConstraint sign) { return sign == SignConstraint::NegativeSlope ? -1.0 : 1.0; }

bool sign_ok(SignConstraint sign, double alpha1) {
  if (sign == SignConstraint::None) return true;
  return slope_sign(sign) * alpha1 > 0.0;
}

double normal_logpdf(const NormalPrior& p, double x) {
  const double d = x - p.mean;
  return -0.5 * d * d / p.variance;
}

double gamma_logpdf(const GammaPrior& p, double x) {
  if (!(x > 0.0)) return -kInf;
  return (p.shape - 1.0) * std::log(x) - p.rate * x;
}

double prior_sd(const NormalPrior& p) { return std::sqrt(p.variance); }

double slope_prior_mean(const SlopePrior& prior, SignConstraint sign) {
  if (const auto* g = std::get_if<GammaPrior>(&prior)) return slope_sign(sign) * g->shape / g->rate;
  return std::get<NormalPrior>(prior).mean;
}

double slope_prior_sd(const SlopePrior& prior) {
  if (const auto* g = std::get_if<GammaPrior>(&prior)) return std::sqrt(g->shape) / g->rate;
  return prior_sd(std::get<NormalPrior>(prior));
}

void check_normal(const NormalPrior& p, const std::string& what) {
  if (!std::isfinite(p.mean)) throw ConfigError(what + ".mean must be finite");
  if (!(p.variance > 0.0) || !std::isfinite(p.variance)) {
    throw ConfigError(what + ".variance must be positive");
  }
}

void check_gamma(const GammaPrior& p, const std::string& what) {
  if (!(p.shape > 0.0) || !std::isfinite(p.shape)) throw ConfigError(what + ".shape must be positive");
  if (!(p.rate > 0.0) || !std::isfinite(p.rate)) throw ConfigError(what + ".rate must be positive");
}

void check_dirichlet(const DirichletPrior& p, std::size_t k, const std::string& what) {
  if (static_cast<std::size_t>(p.concentration.size()) != k) {
    throw ConfigError(what + " needs " + std::to_string(k) + " concentration values");
  }
  for (Eigen::Index j = 0; j < p.concentration.size(); ++j) {
    if (!(p.concentration[j] > 0.0) || !std::isfinite(p.concentration[j])) {
      throw ConfigError(what + " concentration values must be positive");
    }
  }
}

// log f(y | eta) up to terms free of eta.
double log_kernel(FamilyKind kind, const Nuisance& phi, double y, double eta) {
  switch (kind) {
    case FamilyKind::Normal: {
      const double d = y - eta;
      return -0.5 * d * d / (phi.sigma * phi.sigma);
    }
    case FamilyKind::StudentT: {
      const double z = (y - eta) / phi.sigma;
      return -0.5 * (phi.df + 1.0) * std::log1p(z * z / phi.df);
    }
    case FamilyKind::Poisson:
      return y * eta - std::exp(eta);
    case FamilyKind::ZeroInflatedPoisson:
      if (y == 0.0) {
        return response_logpdf(ResponseFamily(FamilyKind::ZeroInflatedPoisson), phi, eta, 0.0);
      }
      return y * eta - std::exp(eta) / (1.0 - phi.zero_weight);
    case FamilyKind::Gamma:
      return -phi.shape * (eta + y * std::exp(-eta));
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// Per-category sufficient statistics of the response given the latent category.
struct ClassStats {
  double n = 0.0;
  double sum_y = 0.0;
  double sum_yy = 0.0;
  double sum_log_y = 0.0;
  double zeros = 0.0;
};

std::vector<std::string> nuisance_names(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::Normal: return {"sigma"};
    case FamilyKind::StudentT: return {"sigma", "df"};
    case FamilyKind::Gamma: return {"shape"};
    case FamilyKind::ZeroInflatedPoisson: return {"zero_weight"};
    case FamilyKind::Poisson: return {};
  }
  return {};
}

bool is_identity(const GatingSpec& g) {
  if (g.mode() != GatingMode::ConstantMatrix) return false;
  const auto& m = g.constant().matrix();
  return (m - Eigen::MatrixXd::Identity(m.rows(), m.cols())).cwiseAbs().maxCoeff() == 0.0;
}

// Scalar random-walk Metropolis block with batch adaptation of its log step.
struct RandomWalk {
  std::string name;
  double log_step = 0.0;
  int batch_accepted = 0;
  int batch_tries = 0;
  int batches = 0;
  long kept_accepted = 0;
  long kept_tries = 0;

  double step() const { return std::exp(log_step); }
  void record(bool accepted, bool adapting) {
    if (adapting) {
      ++batch_tries;
      batch_accepted += accepted ? 1 : 0;
    } else {
      ++kept_tries;
      kept_accepted += accepted ? 1 : 0;
    }
  }
  void adapt(double target) {
    if (batch_tries == 0) return;
    ++batches;
    const double rate = static_cast<double>(batch_accepted) / batch_tries;
    log_step += 2.0 * (rate - target) / std::sqrt(static_cast<double>(batches));
    log_step = std::clamp(log_step, -25.0, 10.0);
    batch_accepted = batch_tries = 0;
  }
};

struct ChainResult {
  std::vector<std::vector<double>> draws;  // [parameter][kept]
  std::vector<RandomWalk> walks;
};

class ChainSampler {
 public:
  ChainSampler(const ModelSpec& spec, const Dataset& data, const PriorSpec& priors,
               const McmcConfig& cfg, const Theta& start, const Eigen::VectorXd& scale,
               std::uint64_t chain)
      : spec_(spec), data_(data), priors_(priors), cfg_(cfg),
        kind_(spec.family.kind()),
        n_(data.size()), k_(spec.categories),
        p_(static_cast<std::size_t>(data.x.cols())),
        m_(spec.gating == GatingMode::LogitModel ? spec.gating_covariates : 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(chain), 0x6d636d63u};
    rng_.seed(seq);

    coef_ = pack_coefficients(start);
    phi_ = start.phi;
    pi_star_ = start.pi_star;
    gating_fixed_ = cfg.fixed_gating.has_value();
    logit_ = start.gating.mode() == GatingMode::LogitModel;
    if (logit_) {
      logit_gating_ = start.gating.logit();
    } else {
      q_ = start.gating.constant().matrix();
    }
    latent_fixed_ = gating_fixed_ && is_identity(start.gating);
    use_stats_ = p_ == 0 && kind_ != FamilyKind::StudentT;
    gamma_slope_ = std::holds_alternative<GammaPrior>(priors.alpha1);

    vstar_counts_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_));
    strata_.resize(k_);
    for (std::size_t i = 0; i < n_; ++i) {
      vstar_counts_[data.v_star[i]] += 1.0;
      strata_[static_cast<std::size_t>(data.v_star[i])].push_back(i);
    }
    latent_ = data.v_star;
    eta_.resize(n_);
    eta_proposal_.resize(n_);

    const bool normal_gibbs = kind_ == FamilyKind::Normal;
    if (!normal_gibbs) {
      for (Eigen::Index a = 0; a < coef_.size(); ++a) {
        RandomWalk w;
        w.name = a == 0 ? "alpha0" : a == 1 ? "alpha1" : "beta_" + std::to_string(a - 1);
        w.log_step = std::log(std::max(scale[a], 1e-4));
        coef_walks_.push_back(w);
      }
    }
    for (const auto& name : nuisance_names(kind_)) {
      if (kind_ == FamilyKind::Normal) break;
      if (name == "sigma" && priors.fixed_sigma) continue;
      RandomWalk w;
      w.name = name;
      w.log_step = std::log(0.1);
      nuisance_walks_.push_back(w);
    }
    if (logit_ && !gating_fixed_) {
      for (std::size_t row = 0; row < k_; ++row) {
        for (std::size_t j = 0; j + 1 < k_; ++j) {
          for (std::size_t c = 0; c <= m_; ++c) {
            RandomWalk w;
            w.name = c == 0 ? "nu_" + std::to_string(row) + "_" + std::to_string(j)
                            : "gamma_" + std::to_string(row) + "_" + std::to_string(j) + "_" +
                                  std::to_string(c);
            w.log_step = std::log(0.5);
            gating_walks_.push_back(w);
          }
        }
      }
    }
  }

  ChainResult run(std::size_t n_params) {
    ChainResult out;
    out.draws.assign(n_params, {});
    for (auto& d : out.draws) d.reserve(static_cast<std::size_t>(cfg_.n_kept));
    const long total = static_cast<long>(cfg_.burn_in) + static_cast<long>(cfg_.thin) * cfg_.n_kept;
    std::vector<double> row;
    for (long it = 1; it <= total; ++it) {
      const bool adapting = it <= cfg_.burn_in;
      iterate(adapting);
      if (!coef_walks_.empty() && cfg_.burn_in >= 200) learn_directions(it);
      if (adapting && it % cfg_.adapt_batch == 0) {
        for (auto* walks : {&coef_walks_, &nuisance_walks_, &gating_walks_}) {
          for (auto& w : *walks) w.adapt(cfg_.target_acceptance);
        }
      }
      if (!adapting && (it - cfg_.burn_in) % cfg_.thin == 0) {
        row.clear();
        record(row);
        for (std::size_t a = 0; a < n_params; ++a) out.draws[a].push_back(row[a]);
      }
    }
    for (auto* walks : {&coef_walks_, &nuisance_walks_, &gating_walks_}) {
      out.walks.insert(out.walks.end(), walks->begin(), walks->end());
    }
    return out;
  }

 private:
  void iterate(bool adapting) {
    if (!latent_fixed_) update_latent();
    refresh_statistics();
    update_pi_star();
    if (!gating_fixed_) {
      if (logit_) {
        update_logit_gating(adapting);
      } else {
        update_constant_gating();
      }
    }
    if (kind_ == FamilyKind::Normal) {
      update_normal_coefficients();
      update_normal_precision();
    } else {
      update_coefficients_rw(adapting);
      update_nuisance_rw(adapting);
    }
  }

  double base_eta(std::size_t i) const {
    double eta = coef_[0];
    const auto x = data_.x_row(i);
    for (std::size_t c = 0; c < p_; ++c) eta += coef_[static_cast<Eigen::Index>(2 + c)] * x[c];
    return eta;
  }

  void gating_scores(std::size_t row, std::span<const double> w, std::vector<double>& s) const {
    s.assign(k_, 0.0);
    for (std::size_t j = 0; j + 1 < k_; ++j) {
      double v = logit_gating_.intercepts(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j));
      for (std::size_t c = 0; c < m_; ++c) {
        v += logit_gating_.slopes[row](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) * w[c];
      }
      s[j] = v;
    }
  }

  // Without covariates the kernel of every category is a_j + b_j y up to terms
  // shared by all categories, so the latent weights need no per-row exp of eta.
  bool latent_kernel_affine() const { return p_ == 0 && !logit_ && kind_ != FamilyKind::StudentT; }

  void update_latent_affine() {
    const auto k = static_cast<Eigen::Index>(k_);
    Eigen::VectorXd a(k), b(k), zero(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double eta = coef_[0] + coef_[1] * static_cast<double>(j);
      switch (kind_) {
        case FamilyKind::Normal:
          a[j] = -0.5 * eta * eta / (phi_.sigma * phi_.sigma);
          b[j] = eta / (phi_.sigma * phi_.sigma);
          break;
        case FamilyKind::Poisson:
          a[j] = -std::exp(eta);
          b[j] = eta;
          break;
        case FamilyKind::ZeroInflatedPoisson:
          a[j] = -std::exp(eta) / (1.0 - phi_.zero_weight);
          b[j] = eta;
          break;
        case FamilyKind::Gamma:
          a[j] = -phi_.shape * eta;
          b[j] = -phi_.shape * std::exp(-eta);
          break;
        case FamilyKind::StudentT:
          break;
      }
      zero[j] = kind_ == FamilyKind::ZeroInflatedPoisson ? log_kernel(kind_, phi_, 0.0, eta) : a[j];
    }
    const Eigen::MatrixXd log_q = q_.array().log();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> t(k_);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto vs = static_cast<Eigen::Index>(data_.v_star[i]);
      const double y = data_.y[static_cast<Eigen::Index>(i)];
      double mx = -kInf;
      for (Eigen::Index j = 0; j < k; ++j) {
        double v = log_q(vs, j);
        if (v > -kInf) v += y == 0.0 ? zero[j] : a[j] + b[j] * y;
        t[static_cast<std::size_t>(j)] = v;
        mx = std::max(mx, v);
      }
      if (!std::isfinite(mx)) {
        throw NumericError("latent category has no finite weight", static_cast<std::ptrdiff_t>(i));
      }
      if (k_ == 2) {
        const double p1 = 1.0 / (1.0 + std::exp(t[0] - t[1]));
        latent_[i] = unif(rng_) < p1 ? 1 : 0;
        continue;
      }
      double sum = 0.0;
      for (auto& v : t) {
        v = std::exp(v - mx);
        sum += v;
      }
      double u = unif(rng_) * sum;
      std::size_t pick = k_ - 1;
      for (std::size_t j = 0; j < k_; ++j) {
        if (u < t[j]) {
          pick = j;
          break;
        }
        u -= t[j];
      }
      while (t[pick] == 0.0 && pick > 0) --pick;
      latent_[i] = static_cast<int>(pick);
    }
  }

  void update_latent() {
    if (latent_kernel_affine()) {
      update_latent_affine();
      return;
    }
    const Eigen::MatrixXd log_q = logit_ ? Eigen::MatrixXd() : Eigen::MatrixXd(q_.array().log());
    std::vector<double> t(k_), scores;
    for (std::size_t i = 0; i < n_; ++i) {
      const int vs = data_.v_star[i];
      const double y = data_.y[static_cast<Eigen::Index>(i)];
      const double eta0 = base_eta(i);
      if (logit_) {
        gating_scores(static_cast<std::size_t>(vs), data_.w_row(i), scores);
        const double lse = log_sum_exp(scores);
        for (std::size_t j = 0; j < k_; ++j) t[j] = scores[j] - lse;
      } else {
        for (std::size_t j = 0; j < k_; ++j) t[j] = log_q(vs, static_cast<Eigen::Index>(j));
      }
      double mx = -kInf;
      for (std::size_t j = 0; j < k_; ++j) {
        if (t[j] > -kInf) t[j] += log_kernel(kind_, phi_, y, eta0 + coef_[1] * static_cast<double>(j));
        mx = std::max(mx, t[j]);
      }
      if (!std::isfinite(mx)) {
        throw NumericError("latent category has no finite weight", static_cast<std::ptrdiff_t>(i));
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < k_; ++j) {
        t[j] = std::exp(t[j] - mx);
        sum += t[j];
      }
      double u = std::uniform_real_distribution<double>(0.0, sum)(rng_);
      std::size_t pick = k_ - 1;
      for (std::size_t j = 0; j < k_; ++j) {
        if (u < t[j]) {
          pick = j;
          break;
        }
        u -= t[j];
      }
      // Guard against landing on a zero-weight tail category through rounding.
      while (t[pick] == 0.0 && pick > 0) --pick;
      latent_[i] = static_cast<int>(pick);
    }
  }

  void refresh_statistics() {
    // A fixed identity gating pins the latent categories, so the statistics never change.
    if (latent_fixed_ && statistics_ready_) return;
    statistics_ready_ = true;
    const auto k = static_cast<Eigen::Index>(k_);
    joint_counts_ = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < n_; ++i) joint_counts_(data_.v_star[i], latent_[i]) += 1.0;
    if (use_stats_ || kind_ == FamilyKind::Normal) {
      stats_.assign(k_, ClassStats{});
      for (std::size_t i = 0; i < n_; ++i) {
        auto& s = stats_[static_cast<std::size_t>(latent_[i])];
        const double y = data_.y[static_cast<Eigen::Index>(i)];
        s.n += 1.0;
        s.sum_y += y;
        s.sum_yy += y * y;
        if (kind_ == FamilyKind::Gamma) s.sum_log_y += std::log(y);
        if (y == 0.0) s.zeros += 1.0;
      }
    }
    if (!use_stats_ && kind_ != FamilyKind::Normal) refresh_eta();
  }

  void refresh_eta() {
    for (std::size_t i = 0; i < n_; ++i) eta_[i] = base_eta(i) + coef_[1] * latent_[i];
  }

  void update_pi_star() {
    pi_star_ = detail::draw_dirichlet(priors_.pi_star_prior(k_).concentration + vstar_counts_, rng_);
  }

  void update_constant_gating() {
    for (std::size_t row = 0; row < k_; ++row) {
      const auto r = static_cast<Eigen::Index>(row);
      const Eigen::VectorXd alpha =
          priors_.q_row_prior(row, k_).concentration + joint_counts_.row(r).transpose();
      q_.row(r) = detail::draw_dirichlet(alpha, rng_).transpose();
    }
  }

  double logit_row_target(std::size_t row) const {
    const auto r = static_cast<Eigen::Index>(row);
    double lp = 0.0;
    for (std::size_t j = 0; j + 1 < k_; ++j) {
      lp += normal_logpdf(priors_.gating, logit_gating_.intercepts(r, static_cast<Eigen::Index>(j)));
      for (std::size_t c = 0; c < m_; ++c) {
        lp += normal_logpdf(priors_.gating,
                            logit_gating_.slopes[row](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
      }
    }
    std::vector<double> scores;
    if (m_ == 0) {
      gating_scores(row, {}, scores);
      double ll = -static_cast<double>(strata_[row].size()) * log_sum_exp(scores);
      for (std::size_t j = 0; j < k_; ++j) ll += joint_counts_(r, static_cast<Eigen::Index>(j)) * scores[j];
      return lp + ll;
    }
    double ll = 0.0;
    for (std::size_t i : strata_[row]) {
      gating_scores(row, data_.w_row(i), scores);
      ll += scores[static_cast<std::size_t>(latent_[i])] - log_sum_exp(scores);
    }
    return lp + ll;
  }

  void update_logit_gating(bool adapting) {
    std::size_t w = 0;
    for (std::size_t row = 0; row < k_; ++row) {
      double current = logit_row_target(row);
      for (std::size_t j = 0; j + 1 < k_; ++j) {
        for (std::size_t c = 0; c <= m_; ++c, ++w) {
          double& slot = c == 0 ? logit_gating_.intercepts(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j))
                                : logit_gating_.slopes[row](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c - 1));
          const double old = slot;
          slot = old + gating_walks_[w].step() * std_normal(rng_);
          const double proposed = logit_row_target(row);
          const bool ok = accept(proposed - current, rng_);
          if (ok) {
            current = proposed;
          } else {
            slot = old;
          }
          gating_walks_[w].record(ok, adapting);
        }
      }
    }
  }

  // Complete-data normal design cross products.
  void normal_cross_products(Eigen::MatrixXd& ztz, Eigen::VectorXd& zty, double& yty) const {
    const auto d = static_cast<Eigen::Index>(2 + p_);
    ztz = Eigen::MatrixXd::Zero(d, d);
    zty = Eigen::VectorXd::Zero(d);
    yty = 0.0;
    if (p_ == 0) {
      for (std::size_t j = 0; j < k_; ++j) {
        const auto& s = stats_[j];
        const double v = static_cast<double>(j);
        ztz(0, 0) += s.n;
        ztz(0, 1) += v * s.n;
        ztz(1, 1) += v * v * s.n;
        zty[0] += s.sum_y;
        zty[1] += v * s.sum_y;
        yty += s.sum_yy;
      }
      ztz(1, 0) = ztz(0, 1);
      return;
    }
    Eigen::VectorXd z(d);
    for (std::size_t i = 0; i < n_; ++i) {
      const double y = data_.y[static_cast<Eigen::Index>(i)];
      const auto x = data_.x_row(i);
      z[0] = 1.0;
      z[1] = latent_[i];
      for (std::size_t c = 0; c < p_; ++c) z[static_cast<Eigen::Index>(2 + c)] = x[c];
      ztz.selfadjointView<Eigen::Lower>().rankUpdate(z);
      zty += y * z;
      yty += y * y;
    }
    ztz = ztz.selfadjointView<Eigen::Lower>();
  }

  void coefficient_prior(Eigen::VectorXd& mean, Eigen::VectorXd& precision) const {
    const auto d = static_cast<Eigen::Index>(2 + p_);
    mean.resize(d);
    precision.resize(d);
    mean[0] = priors_.alpha0.mean;
    precision[0] = 1.0 / priors_.alpha0.variance;
    if (const auto* np = std::get_if<NormalPrior>(&priors_.alpha1)) {
      mean[1] = np->mean;
      precision[1] = 1.0 / np->variance;
    } else {
      mean[1] = 0.0;
      precision[1] = 0.0;  // flat in the proposal; the Gamma density enters the acceptance ratio
    }
    for (Eigen::Index c = 2; c < d; ++c) {
      mean[c] = priors_.beta.mean;
      precision[c] = 1.0 / priors_.beta.variance;
    }
  }

  Eigen::VectorXd draw_mvn(const detail::NormalConditional& cond) {
    Eigen::LLT<Eigen::MatrixXd> llt(cond.covariance);
    if (llt.info() != Eigen::Success) throw NumericError("coefficient covariance is not positive definite");
    Eigen::VectorXd z(cond.mean.size());
    for (Eigen::Index a = 0; a < z.size(); ++a) z[a] = std_normal(rng_);
    return cond.mean + llt.matrixL() * z;
  }

  void update_normal_coefficients() {
    Eigen::MatrixXd ztz;
    Eigen::VectorXd zty;
    normal_cross_products(ztz, zty, yty_);
    ztz_ = ztz;
    zty_ = zty;
    const double tau = 1.0 / (phi_.sigma * phi_.sigma);
    Eigen::VectorXd m0, p0;
    coefficient_prior(m0, p0);
    const auto d = static_cast<Eigen::Index>(2 + p_);
    const double s = slope_sign(cfg_.sign_constraint);

    if (gamma_slope_ && ztz(1, 1) == 0.0) {
      // No latent unit carries slope information: alpha1 from its prior, the
      // rest from their conditional given alpha1.
      const auto& g = std::get<GammaPrior>(priors_.alpha1);
      const double a1 = s * std::max(detail::draw_gamma(g.shape, g.rate, rng_), std::numeric_limits<double>::min());
      std::vector<Eigen::Index> rest;
      for (Eigen::Index a = 0; a < d; ++a) {
        if (a != 1) rest.push_back(a);
      }
      const auto r = static_cast<Eigen::Index>(rest.size());
      Eigen::MatrixXd sub(r, r);
      Eigen::VectorXd rhs(r), pm(r), pp(r);
      for (Eigen::Index u = 0; u < r; ++u) {
        for (Eigen::Index v = 0; v < r; ++v) sub(u, v) = ztz(rest[u], rest[v]);
        rhs[u] = zty[rest[u]] - ztz(rest[u], 1) * a1;
        pm[u] = m0[rest[u]];
        pp[u] = p0[rest[u]];
      }
      const Eigen::VectorXd draw = draw_mvn(detail::normal_coefficient_conditional(sub, rhs, tau, pm, pp));
      coef_[1] = a1;
      for (Eigen::Index u = 0; u < r; ++u) coef_[rest[u]] = draw[u];
      return;
    }

    const Eigen::VectorXd proposal = draw_mvn(detail::normal_coefficient_conditional(ztz, zty, tau, m0, p0));
    if (!sign_ok(cfg_.sign_constraint, proposal[1])) return;
    if (gamma_slope_) {
      const auto& g = std::get<GammaPrior>(priors_.alpha1);
      const double log_ratio = gamma_logpdf(g, s * proposal[1]) - gamma_logpdf(g, s * coef_[1]);
      if (!accept(log_ratio, rng_)) return;
    }
    coef_ = proposal;
  }

  void update_normal_precision() {
    if (priors_.fixed_sigma) {
      phi_.sigma = *priors_.fixed_sigma;
      return;
    }
    const double ssr = std::max(0.0, yty_ - 2.0 * coef_.dot(zty_) + coef_.dot(ztz_ * coef_));
    const double tau = detail::draw_gamma(priors_.precision.shape + 0.5 * static_cast<double>(n_),
                                          priors_.precision.rate + 0.5 * ssr, rng_);
    phi_.sigma = 1.0 / std::sqrt(tau);
  }

  // Sum over rows of the eta-dependent log-likelihood terms.
  double coefficient_loglik_stats(const Eigen::VectorXd& c) const {
    double ll = 0.0;
    for (std::size_t j = 0; j < k_; ++j) {
      const auto& s = stats_[j];
      if (s.n == 0.0) continue;
      const double eta = c[0] + c[1] * static_cast<double>(j);
      switch (kind_) {
        case FamilyKind::Poisson:
          ll += s.sum_y * eta - s.n * std::exp(eta);
          break;
        case FamilyKind::Gamma:
          ll += -phi_.shape * (s.n * eta + s.sum_y * std::exp(-eta));
          break;
        case FamilyKind::ZeroInflatedPoisson:
          ll += s.zeros * log_kernel(kind_, phi_, 0.0, eta) + s.sum_y * eta -
                (s.n - s.zeros) * std::exp(eta) / (1.0 - phi_.zero_weight);
          break;
        case FamilyKind::Normal:
          ll += -0.5 * (s.sum_yy - 2.0 * eta * s.sum_y + s.n * eta * eta) / (phi_.sigma * phi_.sigma);
          break;
        case FamilyKind::StudentT:
          break;
      }
    }
    return ll;
  }

  double kernel_sum(const std::vector<double>& eta) const {
    double ll = 0.0;
    for (std::size_t i = 0; i < n_; ++i) ll += log_kernel(kind_, phi_, data_.y[static_cast<Eigen::Index>(i)], eta[i]);
    return ll;
  }

  double coefficient_log_prior(Eigen::Index a, double value) const {
    if (a == 0) return normal_logpdf(priors_.alpha0, value);
    if (a == 1) {
      if (const auto* g = std::get_if<GammaPrior>(&priors_.alpha1)) {
        return gamma_logpdf(*g, slope_sign(cfg_.sign_constraint) * value);
      }
      return normal_logpdf(std::get<NormalPrior>(priors_.alpha1), value);
    }
    return normal_logpdf(priors_.beta, value);
  }

  double design(std::size_t i, Eigen::Index a) const {
    if (a == 0) return 1.0;
    if (a == 1) return latent_[i];
    return data_.x_row(i)[static_cast<std::size_t>(a - 2)];
  }

  // Records coefficient draws over the second quarter of burn-in, then switches
  // the scalar walks to the principal axes of their covariance.
  void learn_directions(long it) {
    const long first = static_cast<long>(cfg_.burn_in) / 4;
    const long last = static_cast<long>(cfg_.burn_in) / 2;
    if (it <= first || it > last) return;
    burn_draws_.push_back(coef_);
    if (it != last) return;
    const auto d = coef_.size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& c : burn_draws_) mean += c;
    mean /= static_cast<double>(burn_draws_.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& c : burn_draws_) cov += (c - mean) * (c - mean).transpose();
    cov /= static_cast<double>(burn_draws_.size() - 1);
    burn_draws_.clear();
    burn_draws_.shrink_to_fit();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) return;
    // A stuck walk leaves a degenerate covariance; keep the coordinate axes then.
    if (!(eig.eigenvalues().minCoeff() > 1e-14 * std::max(1.0, eig.eigenvalues().maxCoeff()))) return;
    directions_.resize(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
      directions_.col(k) = std::sqrt(eig.eigenvalues()[k]) * eig.eigenvectors().col(k);
      auto& w = coef_walks_[static_cast<std::size_t>(k)];
      w.name = "coef_dir_" + std::to_string(k);
      w.log_step = std::log(2.4);
      w.batches = 0;
      w.batch_accepted = w.batch_tries = 0;
    }
  }

  void update_coefficients_rw(bool adapting) {
    if (directions_.size() > 0) {
      update_coefficients_rotated(adapting);
      return;
    }

    double current = use_stats_ ? coefficient_loglik_stats(coef_) : kernel_sum(eta_);
    for (Eigen::Index a = 0; a < coef_.size(); ++a) {
      auto& walk = coef_walks_[static_cast<std::size_t>(a)];
      const double delta = walk.step() * std_normal(rng_);
      const double old = coef_[a];
      const double value = old + delta;
      if (a == 1 && !sign_ok(cfg_.sign_constraint, value)) {
        walk.record(false, adapting);
        continue;
      }
      double proposed;
      if (use_stats_) {
        coef_[a] = value;
        proposed = coefficient_loglik_stats(coef_);
        coef_[a] = old;
      } else {
        for (std::size_t i = 0; i < n_; ++i) eta_proposal_[i] = eta_[i] + delta * design(i, a);
        proposed = kernel_sum(eta_proposal_);
      }
      const double log_ratio =
          proposed - current + coefficient_log_prior(a, value) - coefficient_log_prior(a, old);
      const bool ok = std::isfinite(proposed) && accept(log_ratio, rng_);
      if (ok) {
        coef_[a] = value;
        current = proposed;
        if (!use_stats_) std::swap(eta_, eta_proposal_);
      }
      walk.record(ok, adapting);
    }
  }

  void update_coefficients_rotated(bool adapting) {
    double current = use_stats_ ? coefficient_loglik_stats(coef_) : kernel_sum(eta_);
    const auto d = coef_.size();
    for (Eigen::Index k = 0; k < d; ++k) {
      auto& walk = coef_walks_[static_cast<std::size_t>(k)];
      const double delta = walk.step() * std_normal(rng_);
      const Eigen::VectorXd u = delta * directions_.col(k);
      const Eigen::VectorXd value = coef_ + u;
      if (!sign_ok(cfg_.sign_constraint, value[1])) {
        walk.record(false, adapting);
        continue;
      }
      double proposed;
      if (use_stats_) {
        proposed = coefficient_loglik_stats(value);
      } else {
        for (std::size_t i = 0; i < n_; ++i) {
          double step = u[0] + u[1] * latent_[i];
          const auto x = data_.x_row(i);
          for (std::size_t c = 0; c < p_; ++c) step += u[static_cast<Eigen::Index>(2 + c)] * x[c];
          eta_proposal_[i] = eta_[i] + step;
        }
        proposed = kernel_sum(eta_proposal_);
      }
      double log_ratio = proposed - current;
      for (Eigen::Index a = 0; a < d; ++a) {
        log_ratio += coefficient_log_prior(a, value[a]) - coefficient_log_prior(a, coef_[a]);
      }
      const bool ok = std::isfinite(proposed) && accept(log_ratio, rng_);
      if (ok) {
        coef_ = value;
        current = proposed;
        if (!use_stats_) std::swap(eta_, eta_proposal_);
      }
      walk.record(ok, adapting);
    }
  }

  // Full log-likelihood given the latent categories, as a function of the nuisance.
  double nuisance_loglik(const Nuisance& phi) const {
    if (use_stats_) {
      double ll = 0.0;
      for (std::size_t j = 0; j < k_; ++j) {
        const auto& s = stats_[j];
        if (s.n == 0.0) continue;
        const double eta = coef_[0] + coef_[1] * static_cast<double>(j);
        if (kind_ == FamilyKind::Gamma) {
          const double k = phi.shape;
          ll += s.n * (k * std::log(k) - std::lgamma(k) - k * eta) + (k - 1.0) * s.sum_log_y -
                k * s.sum_y * std::exp(-eta);
        } else if (kind_ == FamilyKind::ZeroInflatedPoisson) {
          const double w = phi.zero_weight;
          const double positives = s.n - s.zeros;
          ll += s.zeros * log_kernel(kind_, phi, 0.0, eta) + positives * std::log1p(-w) +
                s.sum_y * (eta - std::log1p(-w)) - positives * std::exp(eta) / (1.0 - w);
        }
      }
      return ll;
    }
    double ll = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      ll += response_logpdf(spec_.family, phi, eta_[i], data_.y[static_cast<Eigen::Index>(i)]);
    }
    return ll;
  }

  void update_nuisance_rw(bool adapting) {
    for (auto& walk : nuisance_walks_) {
      Nuisance proposal = phi_;
      const double z = walk.step() * std_normal(rng_);
      double log_prior_ratio = 0.0;
      if (walk.name == "sigma") {
        // Prior on tau = sigma^-2; with the log-sigma Jacobian the density in
        // log sigma is proportional to tau^shape exp(-rate tau).
        proposal.sigma = phi_.sigma * std::exp(z);
        const auto& g = priors_.precision;
        auto lp = [&](double sigma) {
          const double tau = 1.0 / (sigma * sigma);
          return g.shape * std::log(tau) - g.rate * tau;
        };
        log_prior_ratio = lp(proposal.sigma) - lp(phi_.sigma);
      } else if (walk.name == "df") {
        proposal.df = phi_.df * std::exp(z);
        log_prior_ratio = gamma_logpdf(priors_.df, proposal.df) + std::log(proposal.df) -
                          gamma_logpdf(priors_.df, phi_.df) - std::log(phi_.df);
      } else if (walk.name == "shape") {
        proposal.shape = phi_.shape * std::exp(z);
        log_prior_ratio = gamma_logpdf(priors_.shape, proposal.shape) + std::log(proposal.shape) -
                          gamma_logpdf(priors_.shape, phi_.shape) - std::log(phi_.shape);
      } else if (walk.name == "zero_weight") {
        const double logit = std::log(phi_.zero_weight) - std::log1p(-phi_.zero_weight);
        proposal.zero_weight = 1.0 / (1.0 + std::exp(-(logit + z)));
        if (!(proposal.zero_weight > 0.0 && proposal.zero_weight < 1.0)) {
          walk.record(false, adapting);
          continue;
        }
        const double a = priors_.zero_weight.concentration[0];
        const double b = priors_.zero_weight.concentration[1];
        auto lp = [&](double w) { return a * std::log(w) + b * std::log1p(-w); };
        log_prior_ratio = lp(proposal.zero_weight) - lp(phi_.zero_weight);
      }
      const double proposed = nuisance_loglik(proposal);
      const double log_ratio = proposed - nuisance_loglik(phi_) + log_prior_ratio;
      const bool ok = std::isfinite(proposed) && accept(log_ratio, rng_);
      if (ok) phi_ = proposal;
      walk.record(ok, adapting);
    }
  }

  void record(std::vector<double>& row) const {
    for (Eigen::Index a = 0; a < coef_.size(); ++a) row.push_back(coef_[a]);
    switch (kind_) {
      case FamilyKind::Normal: row.push_back(phi_.sigma); break;
      case FamilyKind::StudentT:
        row.push_back(phi_.sigma);
        row.push_back(phi_.df);
        break;
      case FamilyKind::Gamma: row.push_back(phi_.shape); break;
      case FamilyKind::ZeroInflatedPoisson: row.push_back(phi_.zero_weight); break;
      case FamilyKind::Poisson: break;
    }
    for (Eigen::Index j = 0; j < pi_star_.size(); ++j) row.push_back(pi_star_[j]);
    if (!logit_) {
      for (Eigen::Index r = 0; r < q_.rows(); ++r) {
        for (Eigen::Index j = 0; j < q_.cols(); ++j) row.push_back(q_(r, j));
      }
      return;
    }
    for (std::size_t r = 0; r < k_; ++r) {
      for (std::size_t j = 0; j + 1 < k_; ++j) {
        row.push_back(logit_gating_.intercepts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)));
      }
    }
    for (std::size_t r = 0; r < k_; ++r) {
      for (std::size_t j = 0; j + 1 < k_; ++j) {
        for (std::size_t c = 0; c < m_; ++c) {
          row.push_back(logit_gating_.slopes[r](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
        }
      }
    }
  }

  const ModelSpec& spec_;
  const Dataset& data_;
  const PriorSpec& priors_;
  const McmcConfig& cfg_;
  FamilyKind kind_;
  std::size_t n_, k_, p_, m_;
  Rng rng_;

  Eigen::VectorXd coef_;
  Nuisance phi_;
  Eigen::VectorXd pi_star_;
  Eigen::MatrixXd q_;
  LogitGating logit_gating_;
  bool gating_fixed_ = false;
  bool logit_ = false;
  bool latent_fixed_ = false;
  bool use_stats_ = false;
  bool gamma_slope_ = false;
  bool statistics_ready_ = false;

  Eigen::VectorXd vstar_counts_;
  std::vector<std::vector<std::size_t>> strata_;
  std::vector<int> latent_;
  Eigen::MatrixXd joint_counts_;
  std::vector<ClassStats> stats_;
  std::vector<double> eta_, eta_proposal_;
  Eigen::MatrixXd ztz_;
  Eigen::VectorXd zty_;
  double yty_ = 0.0;

  std::vector<RandomWalk> coef_walks_, nuisance_walks_, gating_walks_;
  std::vector<Eigen::VectorXd> burn_draws_;
  Eigen::MatrixXd directions_;  // columns are proposal directions once learned
};

Eigen::MatrixXd near_identity(std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(k);
  return Eigen::MatrixXd::Constant(kk, kk, 0.2 / static_cast<double>(k)) +
         0.8 * Eigen::MatrixXd::Identity(kk, kk);
}

Eigen::VectorXd dirichlet_mean(const DirichletPrior& p) { return p.concentration / p.concentration.sum(); }

struct Start {
  Theta theta;
  Eigen::VectorXd scale;  // per packed coefficient
};

Start automatic_start(const ModelSpec& spec, const Dataset& data, const PriorSpec& priors,
                      const McmcConfig& cfg) {
  const std::size_t k = spec.categories;
  const auto p = static_cast<Eigen::Index>(data.x.cols());
  Start st;
  Theta& t = st.theta;
  t.beta = Eigen::VectorXd::Constant(p, priors.beta.mean);
  t.alpha0 = priors.alpha0.mean;
  t.alpha1 = slope_prior_mean(priors.alpha1, cfg.sign_constraint);
  st.scale.resize(2 + p);
  st.scale[0] = prior_sd(priors.alpha0);
  st.scale[1] = slope_prior_sd(priors.alpha1);
  for (Eigen::Index c = 0; c < p; ++c) st.scale[2 + c] = prior_sd(priors.beta);
  if (spec.family.kind() == FamilyKind::ZeroInflatedPoisson) t.phi.zero_weight = 0.1;

  if (cfg.fixed_gating) {
    t.gating = *cfg.fixed_gating;
  } else if (spec.gating == GatingMode::LogitModel) {
    t.gating = logit_gating_from_matrix(near_identity(k), spec.gating_covariates);
  } else {
    t.gating = GatingSpec(ReclassificationMatrix(near_identity(k)));
  }
  t.pi_star = dirichlet_mean(priors.pi_star_prior(k));

  const std::size_t n = data.size();
  if (n > 0) {
    Eigen::VectorXd counts = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 0.5);
    for (int v : data.v_star) counts[v] += 1.0;
    t.pi_star = counts / counts.sum();
    try {
      const auto naive = fit_glm(spec.family, data, data.v_star, k);
      t.alpha0 = naive.theta.alpha0;
      t.alpha1 = naive.theta.alpha1;
      t.beta = naive.theta.beta;
      t.phi = naive.theta.phi;
      for (Eigen::Index a = 0; a < st.scale.size(); ++a) {
        if (naive.std_errors[a] > 0.0 && std::isfinite(naive.std_errors[a])) st.scale[a] = naive.std_errors[a];
      }
    } catch (const NumericError&) {
    } catch (const std::domain_error&) {
    }
    if (!cfg.fixed_gating && cfg.init_from_em && n > k) {
      EmConfig em;
      em.n_restarts = 3;
      em.seed = cfg.seed;
      em.sign_constraint = cfg.sign_constraint;
      std::optional<Theta> fitted;
      try {
        fitted = em_fit(spec, data, em).theta_hat;
      } catch (const EmNonConvergence& e) {
        fitted = e.best().theta_hat;
      } catch (const std::runtime_error&) {
      } catch (const std::domain_error&) {
      } catch (const std::invalid_argument&) {
      }
      if (fitted) {
        const auto keep_pi = t.pi_star;
        t = *fitted;
        t.pi_star = keep_pi;
      }
    }
  }
  if (priors.fixed_sigma) t.phi.sigma = *priors.fixed_sigma;
  if (!sign_ok(cfg.sign_constraint, t.alpha1)) {
    t.alpha1 = slope_sign(cfg.sign_constraint) * std::max({std::abs(t.alpha1), 0.1 * st.scale[1], 1e-3});
  }
  return st;
}

Theta jitter(const Theta& start, const Eigen::VectorXd& scale, const ModelSpec& spec,
             const McmcConfig& cfg, bool fixed_sigma, std::uint64_t chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(chain), 0x6a697474u};
  Rng rng(seq);
  Theta t = start;
  Eigen::VectorXd c = pack_coefficients(t);
  for (Eigen::Index a = 0; a < c.size(); ++a) c[a] += 0.5 * scale[a] * std_normal(rng);
  if (!sign_ok(cfg.sign_constraint, c[1])) c[1] = -c[1];
  if (!sign_ok(cfg.sign_constraint, c[1])) c[1] = start.alpha1;
  unpack_coefficients(c, t);
  if (!fixed_sigma) t.phi.sigma *= std::exp(0.05 * std_normal(rng));
  if (!cfg.fixed_gating) {
    const auto k = spec.categories;
    if (t.gating.mode() == GatingMode::ConstantMatrix) {
      Eigen::MatrixXd q = t.gating.constant().matrix();
      for (Eigen::Index r = 0; r < q.rows(); ++r) {
        const Eigen::VectorXd d = detail::draw_dirichlet(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k)), rng);
        q.row(r) = 0.9 * q.row(r) + 0.1 * d.transpose();
        q.row(r) /= q.row(r).sum();
      }
      t.gating = GatingSpec(ReclassificationMatrix(q));
    } else {
      LogitGating g = t.gating.logit();
      for (Eigen::Index r = 0; r < g.intercepts.rows(); ++r) {
        for (Eigen::Index j = 0; j < g.intercepts.cols(); ++j) g.intercepts(r, j) += 0.1 * std_normal(rng);
      }
      t.gating = GatingSpec(std::move(g));
    }
  }
  return t;
}

}  // namespace

DirichletPrior DirichletPrior::uniform(std::size_t k) {
  return DirichletPrior{Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k))};
}

DirichletPrior DirichletPrior::beta(double a, double b) {
  DirichletPrior p;
  p.concentration.resize(2);
  p.concentration << a, b;
  return p;
}

DirichletPrior PriorSpec::pi_star_prior(std::size_t k) const {
  return pi_star ? *pi_star : DirichletPrior::uniform(k);
}

DirichletPrior PriorSpec::q_row_prior(std::size_t row, std::size_t k) const {
  return q_rows.empty() ? DirichletPrior::uniform(k) : q_rows.at(row);
}

void PriorSpec::validate(const ModelSpec& spec, SignConstraint sign) const {
  const auto k = spec.categories;
  check_normal(alpha0, "priors.alpha0");
  if (const auto* np = std::get_if<NormalPrior>(&alpha1)) {
    check_normal(*np, "priors.alpha1");
  } else {
    check_gamma(std::get<GammaPrior>(alpha1), "priors.alpha1");
    if (sign == SignConstraint::None) {
      throw ConfigError("priors.alpha1: a gamma slope prior needs a sign constraint");
    }
  }
  check_normal(beta, "priors.beta");
  check_gamma(precision, "priors.precision");
  if (fixed_sigma && !(*fixed_sigma > 0.0 && std::isfinite(*fixed_sigma))) {
    throw ConfigError("priors.fixed_sigma must be positive");
  }
  check_gamma(df, "priors.df");
  check_gamma(shape, "priors.shape");
  check_dirichlet(zero_weight, 2, "priors.zero_weight");
  if (pi_star) check_dirichlet(*pi_star, k, "priors.pi_star");
  if (!q_rows.empty()) {
    if (q_rows.size() != k) throw ConfigError("priors.q_rows needs one row per category");
    for (std::size_t r = 0; r < k; ++r) check_dirichlet(q_rows[r], k, "priors.q_rows[" + std::to_string(r) + "]");
  }
  check_normal(gating, "priors.gating");
}

void McmcConfig::validate() const {
  if (n_chains < 1) throw ConfigError("mcmc.n_chains must be >= 1");
  if (burn_in < 1) throw ConfigError("mcmc.burn_in must be >= 1");
  if (thin < 1) throw ConfigError("mcmc.thin must be >= 1");
  if (n_kept < 1) throw ConfigError("mcmc.n_kept must be >= 1");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
    throw ConfigError("mcmc.target_acceptance must lie in (0,1)");
  }
  if (adapt_batch < 1) throw ConfigError("mcmc.adapt_batch must be >= 1");
}

std::size_t PosteriorSample::n_chains() const { return draws.empty() ? 0 : draws.front().size(); }

std::size_t PosteriorSample::n_kept() const {
  return draws.empty() || draws.front().empty() ? 0 : draws.front().front().size();
}

std::size_t PosteriorSample::index_of(std::string_view name) const {
  for (std::size_t a = 0; a < names.size(); ++a) {
    if (names[a] == name) return a;
  }
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

std::vector<double> PosteriorSample::pooled(std::string_view name) const {
  std::vector<double> out;
  for (const auto& chain : draws[index_of(name)]) out.insert(out.end(), chain.begin(), chain.end());
  return out;
}

const ParameterSummary& PosteriorSample::summary(std::string_view name) const {
  return summaries.at(index_of(name));
}

std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> names{"alpha0", "alpha1"};
  for (std::size_t c = 1; c <= spec.covariates; ++c) names.push_back("beta_" + std::to_string(c));
  for (auto& n : nuisance_names(spec.family.kind())) names.push_back(std::move(n));
  const auto k = spec.categories;
  for (std::size_t j = 0; j < k; ++j) names.push_back("pi_star_" + std::to_string(j));
  if (spec.gating == GatingMode::ConstantMatrix) {
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t j = 0; j < k; ++j) names.push_back("q_" + std::to_string(r) + "_" + std::to_string(j));
    }
    return names;
  }
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t j = 0; j + 1 < k; ++j) names.push_back("nu_" + std::to_string(r) + "_" + std::to_string(j));
  }
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t j = 0; j + 1 < k; ++j) {
      for (std::size_t c = 1; c <= spec.gating_covariates; ++c) {
        names.push_back("gamma_" + std::to_string(r) + "_" + std::to_string(j) + "_" + std::to_string(c));
      }
    }
  }
  return names;
}

std::vector<ParameterSummary> summarize(const PosteriorSample& sample, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0,1)");
  std::vector<ParameterSummary> out;
  for (std::size_t a = 0; a < sample.names.size(); ++a) {
    std::vector<double> all;
    for (const auto& chain : sample.draws[a]) all.insert(all.end(), chain.begin(), chain.end());
    ParameterSummary s;
    s.name = sample.names[a];
    const double n = static_cast<double>(all.size());
    s.mean = std::accumulate(all.begin(), all.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : all) ss += (v - s.mean) * (v - s.mean);
    s.sd = all.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    std::sort(all.begin(), all.end());
    if (all.front() == all.back()) s.sd = 0.0;
    s.lower = sorted_quantile(all, 0.5 * (1.0 - level));
    s.upper = sorted_quantile(all, 1.0 - 0.5 * (1.0 - level));
    s.ess = a < sample.ess.size() ? sample.ess[a] : effective_sample_size(sample.draws[a]);
    s.rhat = a < sample.rhat.size() ? sample.rhat[a] : split_rhat(sample.draws[a]);
    out.push_back(std::move(s));
  }
  return out;
}

PosteriorSample mcmc_fit(const ModelSpec& spec, const Dataset& data, const PriorSpec& priors,
                         const McmcConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  spec.validate();
  priors.validate(spec, cfg.sign_constraint);
  data.validate(spec.family, spec.categories, true);
  if (spec.covariates != static_cast<std::size_t>(data.x.cols())) {
    throw ConfigError("model covariate count differs from the dataset");
  }
  if (spec.gating == GatingMode::LogitModel &&
      spec.gating_covariates != static_cast<std::size_t>(data.w.cols())) {
    throw ConfigError("model gating covariate count differs from the dataset");
  }
  if (cfg.fixed_gating && cfg.fixed_gating->mode() != spec.gating) {
    throw ConfigError("fixed gating mode differs from the model's gating mode");
  }

  Start start;
  if (cfg.init) {
    start.theta = *cfg.init;
    if (cfg.fixed_gating) start.theta.gating = *cfg.fixed_gating;
    if (priors.fixed_sigma) start.theta.phi.sigma = *priors.fixed_sigma;
    start.scale = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(2 + spec.covariates), 0.1);
  } else {
    start = automatic_start(spec, data, priors, cfg);
  }
  spec.check(start.theta);
  start.theta.validate(spec.family, cfg.sign_constraint);

  const auto names = parameter_names(spec);
  const auto chains = static_cast<std::size_t>(cfg.n_chains);
  std::vector<ChainResult> results(chains);
  parallel_for(chains, cfg.threads, [&](std::size_t c) {
    const Theta init = c == 0 || cfg.init
                           ? start.theta
                           : jitter(start.theta, start.scale, spec, cfg, priors.fixed_sigma.has_value(), c);
    ChainSampler sampler(spec, data, priors, cfg, init, start.scale, c);
    results[c] = sampler.run(names.size());
  });

  PosteriorSample out;
  out.names = names;
  out.draws.assign(names.size(), Chains(chains));
  for (std::size_t a = 0; a < names.size(); ++a) {
    for (std::size_t c = 0; c < chains; ++c) out.draws[a][c] = std::move(results[c].draws[a]);
  }
  out.monitored.assign(names.size(), true);
  for (std::size_t a = 0; a < names.size(); ++a) {
    const auto& nm = names[a];
    const bool gating_param = nm.starts_with("q_") || nm.starts_with("nu_") || nm.starts_with("gamma_");
    if ((cfg.fixed_gating && gating_param) || (priors.fixed_sigma && nm == "sigma")) out.monitored[a] = false;
  }
  for (std::size_t a = 0; a < names.size(); ++a) {
    out.ess.push_back(effective_sample_size(out.draws[a]));
    out.rhat.push_back(split_rhat(out.draws[a]));
    if (out.monitored[a] && !(out.rhat.back() <= kRhatThreshold)) out.converged = false;
  }
  std::map<std::string, std::pair<long, long>> rates;
  for (const auto& r : results) {
    for (const auto& w : r.walks) {
      auto& slot = rates[w.name];
      slot.first += w.kept_accepted;
      slot.second += w.kept_tries;
    }
  }
  for (const auto& [name, counts] : rates) {
    if (counts.second > 0) out.acceptance[name] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  out.summaries = summarize(out, 0.95);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

std::string_view to_string(Arm arm) {
  switch (arm) {
    case Arm::Naive: return "naive";
    case Arm::True: return "true";
    case Arm::KnownQ: return "known_q";
    case Arm::Mixture: return "mixture";
  }
  return "unknown";
}

Arm parse_arm(std::string_view name) {
  for (Arm a : {Arm::Naive, Arm::True, Arm::KnownQ, Arm::Mixture}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown arm '" + std::string(name) + "' (expected naive, true, known_q or mixture)");
}

std::map<Arm, PosteriorSample> fit_competitors(const ModelSpec& spec, const Dataset& data,
                                               const PriorSpec& priors, const McmcConfig& cfg,
                                               const std::vector<Arm>& arms,
                                               const std::optional<std::vector<int>>& true_v,
                                               const std::optional<ReclassificationMatrix>& known_q) {
  for (Arm a : arms) {
    if (a == Arm::True && !true_v) throw ConfigError("the true arm needs the true categories");
    if (a == Arm::KnownQ && !known_q) throw ConfigError("the known_q arm needs a reclassification matrix");
  }
  if (true_v && true_v->size() != data.size()) throw ConfigError("true category vector length differs from data");
  if (known_q && known_q->size() != spec.categories) throw ConfigError("known_q size differs from the category count");

  std::map<Arm, PosteriorSample> out;
  for (Arm a : arms) {
    if (out.contains(a)) continue;
    McmcConfig arm_cfg = cfg;
    ModelSpec arm_spec = spec;
    switch (a) {
      case Arm::Naive:
        arm_spec.gating = GatingMode::ConstantMatrix;
        arm_spec.gating_covariates = 0;
        arm_cfg.fixed_gating = GatingSpec(ReclassificationMatrix::identity(spec.categories));
        out.emplace(a, mcmc_fit(arm_spec, data, priors, arm_cfg));
        break;
      case Arm::True: {
        Dataset truth = data;
        truth.v_star = *true_v;
        arm_spec.gating = GatingMode::ConstantMatrix;
        arm_spec.gating_covariates = 0;
        arm_cfg.fixed_gating = GatingSpec(ReclassificationMatrix::identity(spec.categories));
        out.emplace(a, mcmc_fit(arm_spec, truth, priors, arm_cfg));
        break;
      }
      case Arm::KnownQ:
        arm_spec.gating = GatingMode::ConstantMatrix;
        arm_spec.gating_covariates = 0;
        arm_cfg.fixed_gating = GatingSpec(*known_q);
        out.emplace(a, mcmc_fit(arm_spec, data, priors, arm_cfg));
        break;
      case Arm::Mixture:
        arm_cfg.fixed_gating.reset();
        out.emplace(a, mcmc_fit(arm_spec, data, priors, arm_cfg));
        break;
    }
  }
  return out;
}

namespace detail {

Eigen::VectorXd draw_dirichlet(const Eigen::VectorXd& alpha, std::mt19937_64& rng) {
  Eigen::VectorXd logs(alpha.size());
  for (Eigen::Index j = 0; j < alpha.size(); ++j) logs[j] = log_gamma_draw(alpha[j], rng);
  const double lse = log_sum_exp(std::span<const double>(logs.data(), static_cast<std::size_t>(logs.size())));
  return (logs.array() - lse).exp();
}

double draw_gamma(double shape, double rate, std::mt19937_64& rng) {
  return std::exp(log_gamma_draw(shape, rng)) / rate;
}

NormalConditional normal_coefficient_conditional(const Eigen::MatrixXd& ztz, const Eigen::VectorXd& zty,
                                                 double tau, const Eigen::VectorXd& prior_mean,
                                                 const Eigen::VectorXd& prior_precision) {
  Eigen::MatrixXd precision = tau * ztz;
  precision.diagonal() += prior_precision;
  const Eigen::VectorXd rhs = tau * zty + prior_precision.cwiseProduct(prior_mean);
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericError("coefficient posterior precision is not positive definite");
  }
  NormalConditional out;
  out.mean = llt.solve(rhs);
  out.covariance = llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
  return out;
}

Eigen::VectorXd latent_probabilities(const ModelSpec& spec, const Theta& theta, const Dataset& data,
                                     std::size_t row) {
  const auto k = static_cast<Eigen::Index>(spec.categories);
  const int vs = data.v_star.at(row);
  const Eigen::VectorXd q = gating_probabilities(theta.gating, vs, data.w_row(row));
  const double y = data.y[static_cast<Eigen::Index>(row)];
  std::vector<double> t(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    const double eta = linear_predictor(theta, static_cast<int>(j), data.x_row(row));
    t[static_cast<std::size_t>(j)] = q[j] > 0.0 ? std::log(q[j]) + log_kernel(spec.family.kind(), theta.phi, y, eta) : -kInf;
  }
  const double lse = log_sum_exp(t);
  Eigen::VectorXd out(k);
  for (Eigen::Index j = 0; j < k; ++j) out[j] = std::exp(t[static_cast<std::size_t>(j)] - lse);
  return out;
}

}  // namespace detail

}  // namespace mixclass
