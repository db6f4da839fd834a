#include "mixclass/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/tools/minima.hpp>

namespace mixclass {

namespace {

constexpr int kBacktracks = 40;

double row_eta(const Theta& theta, int j, std::span<const double> x_row) {
  return linear_predictor(theta, j, x_row);
}

// Brent maximization of f over [lo, hi]; returns the argmax.
template <class F>
double brent_max(F&& f, double lo, double hi) {
  auto neg = [&](double t) {
    const double v = f(t);
    return std::isfinite(v) ? -v : std::numeric_limits<double>::max();
  };
  boost::uintmax_t iters = 200;
  return boost::math::tools::brent_find_minima(neg, lo, hi, 40, iters).first;
}

}  // namespace

EtaDerivatives eta_derivatives(const ResponseFamily& family, const Nuisance& phi, double y,
                               double eta) {
  switch (family.kind()) {
    case FamilyKind::Normal: {
      const double s2 = phi.sigma * phi.sigma;
      return {(y - eta) / s2, -1.0 / s2};
    }
    case FamilyKind::StudentT: {
      const double nu = phi.df;
      const double s2 = phi.sigma * phi.sigma;
      const double r = y - eta;
      return {(nu + 1.0) * r / (nu * s2 + r * r), -(nu + 1.0) / ((nu + 3.0) * s2)};
    }
    case FamilyKind::Poisson: {
      const double mu = std::exp(eta);
      return {y - mu, -mu};
    }
    case FamilyKind::ZeroInflatedPoisson: {
      const double w = phi.zero_weight;
      const double lambda = std::exp(eta) / (1.0 - w);
      if (y > 0.0) return {y - lambda, -lambda};
      const double h = (1.0 - w) * std::exp(-lambda);
      const double d = w + h;
      const double ratio = h / d;
      return {-lambda * ratio, -lambda * ratio + lambda * lambda * ratio * w / d};
    }
    case FamilyKind::Gamma: {
      const double k = phi.shape;
      const double t = k * y * std::exp(-eta);
      return {-k + t, -t};
    }
  }
  return {0.0, 0.0};
}

Eigen::VectorXd pack_coefficients(const Theta& theta) {
  Eigen::VectorXd c(2 + theta.beta.size());
  c[0] = theta.alpha0;
  c[1] = theta.alpha1;
  c.tail(theta.beta.size()) = theta.beta;
  return c;
}

void unpack_coefficients(const Eigen::VectorXd& c, Theta& theta) {
  theta.alpha0 = c[0];
  theta.alpha1 = c[1];
  theta.beta = c.tail(c.size() - 2);
}

double weighted_loglik(const ResponseFamily& family, const Theta& theta, const Dataset& data,
                       const Eigen::MatrixXd& weights) {
  double total = 0.0;
  const auto k = weights.cols();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x_row = data.x_row(i);
    const double y = data.y[static_cast<Eigen::Index>(i)];
    for (Eigen::Index j = 0; j < k; ++j) {
      const double r = weights(static_cast<Eigen::Index>(i), j);
      if (r == 0.0) continue;
      total += r * component_logpdf(family, theta, static_cast<int>(j), x_row, y);
    }
  }
  return total;
}

Eigen::MatrixXd update_coefficients(const ResponseFamily& family, Theta& theta,
                                    const Dataset& data, const Eigen::MatrixXd& weights,
                                    const NewtonOptions& options) {
  const auto dim = 2 + theta.beta.size();
  std::vector<Eigen::Index> free_idx;
  for (Eigen::Index a = 0; a < dim; ++a) {
    const bool fixed = !options.fixed.empty() && options.fixed[static_cast<std::size_t>(a)];
    if (!fixed) free_idx.push_back(a);
  }
  const auto nf = static_cast<Eigen::Index>(free_idx.size());
  Eigen::MatrixXd hess_free = Eigen::MatrixXd::Zero(nf, nf);
  if (nf == 0) return hess_free;

  const auto k = weights.cols();
  Eigen::VectorXd z(dim);
  double current = weighted_loglik(family, theta, data, weights);
  for (int step = 0; step < options.max_steps; ++step) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto x_row = data.x_row(i);
      const double y = data.y[static_cast<Eigen::Index>(i)];
      for (Eigen::Index j = 0; j < k; ++j) {
        const double r = weights(static_cast<Eigen::Index>(i), j);
        if (r == 0.0) continue;
        z[0] = 1.0;
        z[1] = static_cast<double>(j);
        for (std::size_t c = 0; c < x_row.size(); ++c) z[2 + static_cast<Eigen::Index>(c)] = x_row[c];
        const auto d = eta_derivatives(family, theta.phi, y, row_eta(theta, static_cast<int>(j), x_row));
        grad.noalias() += (r * d.d1) * z;
        hess.noalias() += (r * d.d2) * z * z.transpose();
      }
    }
    Eigen::VectorXd g(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      g[a] = grad[free_idx[static_cast<std::size_t>(a)]];
      for (Eigen::Index b = 0; b < nf; ++b) {
        hess_free(a, b) = hess(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
      }
    }
    // Levenberg shift until -H is positive definite.
    Eigen::MatrixXd neg = -hess_free;
    double shift = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt(neg);
    while (llt.info() != Eigen::Success) {
      shift = shift == 0.0 ? 1e-8 * std::max(1.0, neg.diagonal().cwiseAbs().maxCoeff()) : 10.0 * shift;
      llt.compute(neg + shift * Eigen::MatrixXd::Identity(nf, nf));
      if (shift > 1e12) return hess_free;
    }
    const Eigen::VectorXd delta = llt.solve(g);
    if (!delta.allFinite()) return hess_free;

    const Eigen::VectorXd base = pack_coefficients(theta);
    double t = 1.0;
    bool improved = false;
    for (int bt = 0; bt < kBacktracks; ++bt, t *= 0.5) {
      Eigen::VectorXd trial = base;
      for (Eigen::Index a = 0; a < nf; ++a) trial[free_idx[static_cast<std::size_t>(a)]] += t * delta[a];
      Theta candidate = theta;
      unpack_coefficients(trial, candidate);
      const double value = weighted_loglik(family, candidate, data, weights);
      if (std::isfinite(value) && value >= current) {
        theta = std::move(candidate);
        improved = value > current;
        current = value;
        break;
      }
    }
    if (!improved || (t * delta).cwiseAbs().maxCoeff() < options.step_tol) break;
  }
  return hess_free;
}

void update_nuisance(const ResponseFamily& family, Theta& theta, const Dataset& data,
                     const Eigen::MatrixXd& weights) {
  const auto k = weights.cols();
  switch (family.kind()) {
    case FamilyKind::Poisson: return;
    case FamilyKind::Normal: {
      double ss = 0.0;
      double total = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto x_row = data.x_row(i);
        const double y = data.y[static_cast<Eigen::Index>(i)];
        for (Eigen::Index j = 0; j < k; ++j) {
          const double r = weights(static_cast<Eigen::Index>(i), j);
          const double res = y - row_eta(theta, static_cast<int>(j), x_row);
          ss += r * res * res;
          total += r;
        }
      }
      const double sigma = std::sqrt(ss / total);
      if (std::isfinite(sigma) && sigma > 0.0) theta.phi.sigma = sigma;
      return;
    }
    default: break;
  }

  auto objective_with = [&](auto setter) {
    return [&, setter](double t) {
      Theta candidate = theta;
      setter(candidate, t);
      return weighted_loglik(family, candidate, data, weights);
    };
  };
  auto improve = [&](auto setter, double lo, double hi) {
    auto f = objective_with(setter);
    const double best = brent_max(f, lo, hi);
    Theta candidate = theta;
    setter(candidate, best);
    if (f(best) >= weighted_loglik(family, theta, data, weights)) theta = std::move(candidate);
  };

  if (family.kind() == FamilyKind::StudentT) {
    const double ls = std::log(theta.phi.sigma);
    improve([](Theta& th, double t) { th.phi.sigma = std::exp(t); }, ls - 3.0, ls + 3.0);
    improve([](Theta& th, double t) { th.phi.df = std::exp(t); }, std::log(0.5), std::log(500.0));
  } else if (family.kind() == FamilyKind::Gamma) {
    const double lk = std::log(theta.phi.shape);
    improve([](Theta& th, double t) { th.phi.shape = std::exp(t); }, lk - 4.0, lk + 4.0);
  } else if (family.kind() == FamilyKind::ZeroInflatedPoisson) {
    improve([](Theta& th, double t) { th.phi.zero_weight = t; }, 0.0, 0.99);
  }
}

Eigen::MatrixXd indicator_weights(const std::vector<int>& categories, std::size_t n_categories) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(categories.size()),
                                            static_cast<Eigen::Index>(n_categories));
  for (std::size_t i = 0; i < categories.size(); ++i) r(static_cast<Eigen::Index>(i), categories[i]) = 1.0;
  return r;
}

GlmFit fit_glm(const ResponseFamily& family, const Dataset& data, const std::vector<int>& categories,
               std::size_t n_categories) {
  if (categories.size() != data.size()) throw ConfigError("category vector length differs from data");
  const auto weights = indicator_weights(categories, n_categories);
  const auto n = static_cast<double>(data.size());
  Theta theta;
  theta.beta = Eigen::VectorXd::Zero(data.x.cols());
  theta.pi_star = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_categories),
                                            1.0 / static_cast<double>(n_categories));
  theta.gating = GatingSpec(ReclassificationMatrix::identity(n_categories));
  const double mean_y = data.y.mean();
  const double var_y = (data.y.array() - mean_y).square().sum() / std::max(1.0, n - 1.0);
  if (family.link() == Link::Log) {
    theta.alpha0 = std::log(std::max(mean_y, 1e-3));
  } else {
    theta.alpha0 = mean_y;
  }
  theta.phi.sigma = std::sqrt(std::max(var_y, 1e-12));
  if (family.kind() == FamilyKind::StudentT) theta.phi.sigma *= 0.8;
  if (family.kind() == FamilyKind::Gamma) {
    theta.phi.shape = std::max(0.05, mean_y * mean_y / std::max(var_y, 1e-12));
  }
  if (family.kind() == FamilyKind::ZeroInflatedPoisson) theta.phi.zero_weight = 0.05;

  NewtonOptions opt;
  opt.max_steps = 100;
  opt.fixed.assign(static_cast<std::size_t>(2 + theta.beta.size()), false);
  bool single_level = true;
  for (int c : categories) single_level = single_level && c == categories.front();
  if (n_categories == 1 || single_level) opt.fixed[1] = true;

  Eigen::MatrixXd hess;
  double previous = -std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < 100; ++outer) {
    hess = update_coefficients(family, theta, data, weights, opt);
    update_nuisance(family, theta, data, weights);
    const double ll = weighted_loglik(family, theta, data, weights);
    if (std::abs(ll - previous) <= 1e-12 * std::max(1.0, std::abs(ll))) break;
    previous = ll;
    if (family.kind() == FamilyKind::Poisson) {
      // Nuisance-free families converge inside the Newton loop.
      if (outer > 0) break;
    }
  }
  // Re-evaluate the Hessian at the final nuisance values.
  NewtonOptions probe = opt;
  probe.max_steps = 1;
  Theta copy = theta;
  hess = update_coefficients(family, copy, data, weights, probe);

  GlmFit fit;
  fit.std_errors = Eigen::VectorXd::Zero(2 + theta.beta.size());
  if (hess.rows() > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(hess.rows(), hess.cols()));
    Eigen::Index f = 0;
    for (Eigen::Index a = 0; a < fit.std_errors.size(); ++a) {
      if (opt.fixed[static_cast<std::size_t>(a)]) continue;
      fit.std_errors[a] = std::sqrt(std::max(0.0, cov(f, f)));
      ++f;
    }
  }
  fit.loglik = weighted_loglik(family, theta, data, weights);
  fit.theta = std::move(theta);
  return fit;
}

}  // namespace mixclass
