#include "mixclass/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mixclass/glm.hpp"
#include "mixclass/parallel.hpp"

namespace mixclass {

namespace {

constexpr double kWeightFloor = 1e-12;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct EStep {
  Eigen::MatrixXd r;
  double loglik = 0.0;
};

EStep e_step(const ModelSpec& spec, const Theta& theta, const Dataset& data) {
  const auto k = static_cast<Eigen::Index>(spec.categories);
  const auto n = static_cast<Eigen::Index>(data.size());
  const bool constant = theta.gating.mode() == GatingMode::ConstantMatrix;
  Eigen::MatrixXd log_q;
  if (constant) log_q = theta.gating.constant().matrix().array().log();
  EStep out;
  out.r.resize(n, k);
  std::vector<double> terms(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int vs = data.v_star[static_cast<std::size_t>(i)];
    const auto x_row = data.x_row(static_cast<std::size_t>(i));
    Eigen::VectorXd q_row;
    if (!constant) q_row = gating_probabilities(theta.gating, vs, data.w_row(static_cast<std::size_t>(i)));
    for (Eigen::Index j = 0; j < k; ++j) {
      const double lq = constant ? log_q(vs, j) : std::log(q_row[j]);
      terms[static_cast<std::size_t>(j)] =
          lq + component_logpdf(spec.family, theta, static_cast<int>(j), x_row, data.y[i]);
    }
    const double lse = log_sum_exp(terms);
    const double row = std::log(theta.pi_star[vs]) + lse;
    if (!std::isfinite(row)) throw NumericError("non-finite log-likelihood in E-step", i);
    for (Eigen::Index j = 0; j < k; ++j) out.r(i, j) = std::exp(terms[static_cast<std::size_t>(j)] - lse);
    out.loglik += row;
  }
  return out;
}

// One damped Newton step of the multinomial-logit gating for each observed category.
void update_logit_gating(Theta& theta, const Dataset& data, const Eigen::MatrixXd& r) {
  LogitGating g = theta.gating.logit();
  const auto k = static_cast<Eigen::Index>(g.categories());
  const auto m = static_cast<Eigen::Index>(g.covariates());
  const auto width = 1 + m;
  const auto dim = (k - 1) * width;
  if (dim == 0) return;

  for (Eigen::Index row = 0; row < k; ++row) {
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.v_star[i] == row) members.push_back(static_cast<Eigen::Index>(i));
    }
    auto params_of = [&](const LogitGating& lg) {
      Eigen::VectorXd b(dim);
      for (Eigen::Index j = 0; j < k - 1; ++j) {
        b[j * width] = lg.intercepts(row, j);
        for (Eigen::Index c = 0; c < m; ++c) b[j * width + 1 + c] = lg.slopes[static_cast<std::size_t>(row)](j, c);
      }
      return b;
    };
    auto set_params = [&](LogitGating& lg, const Eigen::VectorXd& b) {
      for (Eigen::Index j = 0; j < k - 1; ++j) {
        lg.intercepts(row, j) = b[j * width];
        for (Eigen::Index c = 0; c < m; ++c) lg.slopes[static_cast<std::size_t>(row)](j, c) = b[j * width + 1 + c];
      }
    };
    auto probabilities = [&](const Eigen::VectorXd& b, Eigen::Index i, Eigen::VectorXd& u) {
      u.resize(width);
      u[0] = 1.0;
      const auto w_row = data.w_row(static_cast<std::size_t>(i));
      for (Eigen::Index c = 0; c < m; ++c) u[1 + c] = w_row[static_cast<std::size_t>(c)];
      Eigen::VectorXd s(k);
      for (Eigen::Index j = 0; j < k - 1; ++j) s[j] = b.segment(j * width, width).dot(u);
      s[k - 1] = 0.0;
      const double mx = s.maxCoeff();
      Eigen::VectorXd p = (s.array() - mx).exp();
      return Eigen::VectorXd(p / p.sum());
    };
    auto objective = [&](const Eigen::VectorXd& b) {
      double total = 0.0;
      Eigen::VectorXd u;
      for (auto i : members) {
        const auto p = probabilities(b, i, u);
        for (Eigen::Index j = 0; j < k; ++j) total += r(i, j) * std::log(p[j]);
      }
      return total;
    };

    const Eigen::VectorXd b0 = params_of(g);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd u;
    for (auto i : members) {
      const auto p = probabilities(b0, i, u);
      const double total = r.row(i).sum();
      for (Eigen::Index j = 0; j < k - 1; ++j) {
        grad.segment(j * width, width) += (r(i, j) - total * p[j]) * u;
        for (Eigen::Index h = 0; h < k - 1; ++h) {
          const double c = total * ((j == h ? p[j] : 0.0) - p[j] * p[h]);
          info.block(j * width, h * width, width, width) += c * u * u.transpose();
        }
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    double shift = 0.0;
    while (llt.info() != Eigen::Success && shift < 1e12) {
      shift = shift == 0.0 ? 1e-8 : shift * 10.0;
      llt.compute(info + shift * Eigen::MatrixXd::Identity(dim, dim));
    }
    if (llt.info() != Eigen::Success) continue;
    const Eigen::VectorXd delta = llt.solve(grad);
    const double current = objective(b0);
    double t = 1.0;
    for (int bt = 0; bt < 30; ++bt, t *= 0.5) {
      const Eigen::VectorXd trial = b0 + t * delta;
      if (objective(trial) >= current) {
        set_params(g, trial);
        break;
      }
    }
  }
  theta.gating = GatingSpec(std::move(g));
}

void m_step(const ModelSpec& spec, Theta& theta, const Dataset& data, Eigen::MatrixXd r,
            const NewtonOptions& newton, bool gating_fixed) {
  r = r.cwiseMax(kWeightFloor).cwiseMin(1.0 - kWeightFloor);
  update_coefficients(spec.family, theta, data, r, newton);
  update_nuisance(spec.family, theta, data, r);
  if (gating_fixed) return;
  if (theta.gating.mode() == GatingMode::ConstantMatrix) {
    const auto k = static_cast<Eigen::Index>(spec.categories);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < data.size(); ++i) sums.row(data.v_star[i]) += r.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index row = 0; row < k; ++row) sums.row(row) /= sums.row(row).sum();
    theta.gating = GatingSpec(ReclassificationMatrix(std::move(sums)));
  } else {
    update_logit_gating(theta, data, r);
  }
}

Eigen::VectorXd category_proportions(const Dataset& data, std::size_t k) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  for (int v : data.v_star) counts[v] += 1.0;
  for (Eigen::Index c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0.0) {
      throw DegenerateCategoryError("observed category " + std::to_string(c) + " has no rows (stratum collapse)",
                                    static_cast<std::size_t>(c));
    }
  }
  return counts / counts.sum();
}

bool violates(SignConstraint sign, double alpha1) {
  return (sign == SignConstraint::PositiveSlope && alpha1 < 0.0) ||
         (sign == SignConstraint::NegativeSlope && alpha1 > 0.0);
}

}  // namespace

void EmConfig::validate() const {
  if (max_iter < 1) throw ConfigError("em.max_iter must be >= 1");
  if (!(loglik_tol > 0.0)) throw ConfigError("em.loglik_tol must be > 0");
  if (n_restarts < 1) throw ConfigError("em.n_restarts must be >= 1");
}

Theta reverse_labels(const Theta& theta) {
  Theta out = theta;
  const auto k = static_cast<Eigen::Index>(theta.categories());
  out.alpha0 = theta.alpha0 + theta.alpha1 * static_cast<double>(k - 1);
  out.alpha1 = -theta.alpha1;
  if (theta.gating.mode() == GatingMode::ConstantMatrix) {
    out.gating = GatingSpec(ReclassificationMatrix(theta.gating.constant().matrix().rowwise().reverse()));
    return out;
  }
  LogitGating g = theta.gating.logit();
  const auto m = static_cast<Eigen::Index>(g.covariates());
  LogitGating flipped = g;
  for (Eigen::Index row = 0; row < k; ++row) {
    // Full score vectors with the base column appended, then re-based.
    Eigen::VectorXd s(k);
    s.head(k - 1) = g.intercepts.row(row).transpose();
    s[k - 1] = 0.0;
    for (Eigen::Index j = 0; j < k - 1; ++j) flipped.intercepts(row, j) = s[k - 1 - j] - s[0];
    if (m > 0) {
      Eigen::MatrixXd sl(k, m);
      sl.topRows(k - 1) = g.slopes[static_cast<std::size_t>(row)];
      sl.row(k - 1).setZero();
      for (Eigen::Index j = 0; j < k - 1; ++j) {
        flipped.slopes[static_cast<std::size_t>(row)].row(j) = sl.row(k - 1 - j) - sl.row(0);
      }
    }
  }
  out.gating = GatingSpec(std::move(flipped));
  return out;
}

EmFit em_from(const ModelSpec& spec, const Dataset& data, const Theta& start, const EmConfig& cfg,
              bool fixed_alpha1, bool fixed_alpha0) {
  cfg.validate();
  spec.validate();
  data.validate(spec.family, spec.categories);
  Theta theta = start;
  theta.pi_star = category_proportions(data, spec.categories);
  if (cfg.fixed_gating) theta.gating = *cfg.fixed_gating;
  spec.check(theta);

  NewtonOptions newton;
  newton.max_steps = spec.family.kind() == FamilyKind::Normal ? 1 : 3;
  newton.fixed.assign(static_cast<std::size_t>(2 + theta.beta.size()), false);
  newton.fixed[0] = fixed_alpha0;
  newton.fixed[1] = fixed_alpha1 || spec.categories == 1;

  EmFit fit;
  auto es = e_step(spec, theta, data);
  fit.trace.push_back(es.loglik);
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    m_step(spec, theta, data, es.r, newton, cfg.fixed_gating.has_value() || spec.categories == 1);
    auto next = e_step(spec, theta, data);
    fit.max_decrease = std::max(fit.max_decrease, es.loglik - next.loglik);
    fit.trace.push_back(next.loglik);
    const double change = std::abs(next.loglik - es.loglik) / std::max(1.0, std::abs(es.loglik));
    es = std::move(next);
    fit.n_iter = iter;
    if (change < cfg.loglik_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.loglik = es.loglik;
  fit.theta_hat = std::move(theta);
  return fit;
}

EmFit em_fit(const ModelSpec& spec, const Dataset& data, const EmConfig& cfg) {
  cfg.validate();
  spec.validate();
  data.validate(spec.family, spec.categories);
  const auto k = spec.categories;
  if (data.size() <= k) throw ConfigError("EM needs more rows than categories");
  if (spec.covariates != static_cast<std::size_t>(data.x.cols())) {
    throw ConfigError("model covariate count differs from the dataset");
  }
  if (spec.gating == GatingMode::LogitModel &&
      spec.gating_covariates != static_cast<std::size_t>(data.w.cols())) {
    throw ConfigError("model gating covariate count differs from the dataset");
  }
  category_proportions(data, k);

  const auto naive = fit_glm(spec.family, data, data.v_star, k);
  const auto restarts = static_cast<std::size_t>(cfg.n_restarts);
  std::vector<std::optional<EmFit>> results(restarts);

  parallel_for(restarts, cfg.threads, [&](std::size_t r) {
    std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL * (r + 1));
    Theta start = naive.theta;
    Eigen::MatrixXd q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    if (r == 0) {
      q = Eigen::MatrixXd::Constant(q.rows(), q.cols(), 0.2 / static_cast<double>(k)) +
          0.8 * Eigen::MatrixXd::Identity(q.rows(), q.cols());
    } else {
      std::uniform_real_distribution<double> unif(-1.0, 1.0);
      Eigen::VectorXd c = pack_coefficients(start);
      for (Eigen::Index a = 0; a < c.size(); ++a) c[a] += unif(rng) * naive.std_errors[a];
      unpack_coefficients(c, start);
      std::gamma_distribution<double> g1(1.0, 1.0);
      for (Eigen::Index row = 0; row < q.rows(); ++row) {
        for (Eigen::Index j = 0; j < q.cols(); ++j) q(row, j) = std::max(g1(rng), 1e-6);
        q.row(row) /= q.row(row).sum();
      }
    }
    if (spec.gating == GatingMode::ConstantMatrix) {
      start.gating = GatingSpec(ReclassificationMatrix(q));
    } else {
      start.gating = logit_gating_from_matrix(q, spec.gating_covariates);
    }
    try {
      results[r] = em_from(spec, data, start, cfg);
    } catch (const NumericError&) {
      results[r].reset();
    } catch (const ConvergenceError&) {
      results[r].reset();
    }
  });

  std::vector<double> logliks(restarts, kNaN);
  std::optional<std::size_t> best_index;
  double max_decrease = 0.0;
  bool any_converged = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    if (!results[r]) continue;
    logliks[r] = results[r]->loglik;
    max_decrease = std::max(max_decrease, results[r]->max_decrease);
    any_converged = any_converged || results[r]->converged;
    if (!best_index || results[r]->loglik > results[*best_index]->loglik) best_index = r;
  }
  if (!best_index) throw ConvergenceError("every EM restart failed", kNaN);

  EmFit best = std::move(*results[*best_index]);
  if (!cfg.fixed_gating && violates(cfg.sign_constraint, best.theta_hat.alpha1)) {
    best.theta_hat = reverse_labels(best.theta_hat);
  }
  best.loglik = mixture_loglik(spec, best.theta_hat, data);
  logliks[*best_index] = best.loglik;
  best.restart_logliks = std::move(logliks);
  best.max_decrease = max_decrease;
  if (!any_converged) throw EmNonConvergence("no EM restart converged", std::move(best));
  return best;
}

std::vector<ProfilePoint> profile_loglik(const ModelSpec& spec, const Dataset& data, const EmFit& fitted,
                                         const std::string& param, const std::vector<double>& grid,
                                         const EmConfig& cfg) {
  if (param != "alpha0" && param != "alpha1") {
    throw ConfigError("profile supports alpha0 and alpha1, got '" + param + "'");
  }
  std::vector<ProfilePoint> out(grid.size());
  parallel_for(grid.size(), cfg.threads, [&](std::size_t g) {
    auto& point = out[g];
    point.value = grid[g];
    if (param == "alpha1" && violates(cfg.sign_constraint, grid[g])) {
      point.ok = false;
      point.loglik = kNaN;
      point.error = "outside the sign-constraint region";
      return;
    }
    Theta start = fitted.theta_hat;
    (param == "alpha1" ? start.alpha1 : start.alpha0) = grid[g];
    try {
      const auto fit = em_from(spec, data, start, cfg, param == "alpha1", param == "alpha0");
      point.loglik = fit.loglik;
      point.ok = true;
    } catch (const std::exception& e) {
      point.ok = false;
      point.loglik = kNaN;
      point.error = e.what();
    }
  });
  return out;
}

}  // namespace mixclass
