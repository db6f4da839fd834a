#include "mixclass/efficiency.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "mixclass/parallel.hpp"

namespace mixclass {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kSingularRatio = 1e-10;

bool has_sigma(const ResponseFamily& family) { return family.kind() == FamilyKind::Normal; }

void require_binary_setting(const ResponseFamily& family, const Theta& theta) {
  if (family.kind() != FamilyKind::Normal && family.kind() != FamilyKind::Poisson) {
    throw ConfigError("efficiency analysis supports the normal and poisson families");
  }
  if (theta.categories() != 2 || theta.gating.mode() != GatingMode::ConstantMatrix) {
    throw ConfigError("efficiency analysis needs a binary covariate with constant gating");
  }
  if (theta.beta.size() != 0) throw ConfigError("efficiency analysis excludes accurate covariates");
  theta.validate(family);
}

bool on_boundary(double q) { return q <= 0.0 || q >= 1.0; }

// Component log-density and d/d(eta), d/d(sigma) of the log-density.
struct ComponentTerms {
  double logf;
  double d_eta;
  double d_sigma;
};

ComponentTerms component_terms(const ResponseFamily& family, double eta, double sigma, double y) {
  if (family.kind() == FamilyKind::Normal) {
    const double r = y - eta;
    const double z = r / sigma;
    return {-0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma) - 0.5 * z * z,
            r / (sigma * sigma), (z * z - 1.0) / sigma};
  }
  const double lambda = std::exp(eta);
  return {y * eta - lambda - std::lgamma(y + 1.0), y - lambda, 0.0};
}

// Score of l* without boundary checks; finite at q in {0,1}.
Eigen::VectorXd raw_score(const ResponseFamily& family, const Theta& theta, double y, int v_star) {
  const bool sig = has_sigma(family);
  const double sigma = theta.phi.sigma;
  const auto c0 = component_terms(family, theta.alpha0, sigma, y);
  const auto c1 = component_terms(family, theta.alpha0 + theta.alpha1, sigma, y);
  const auto& q = theta.gating.constant();
  const double qv = q(static_cast<std::size_t>(v_star), 0);
  const double a = qv > 0.0 ? std::log(qv) + c0.logf : -kInf;
  const double b = qv < 1.0 ? std::log1p(-qv) + c1.logf : -kInf;
  const double mx = std::max(a, b);
  const double lm = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
  const double r0 = std::exp(a - lm);
  const double r1 = std::exp(b - lm);
  const double ratio0 = std::exp(c0.logf - lm);  // f0 / mixture
  const double ratio1 = std::exp(c1.logf - lm);  // f1 / mixture

  const double pi1 = theta.pi_star[1];
  Eigen::VectorXd s(sig ? 6 : 5);
  Eigen::Index k = 0;
  s[k++] = r0 * c0.d_eta + r1 * c1.d_eta;
  s[k++] = r1 * c1.d_eta;
  if (sig) s[k++] = r0 * c0.d_sigma + r1 * c1.d_sigma;
  s[k++] = v_star == 1 ? 1.0 / pi1 : -1.0 / (1.0 - pi1);
  s[k++] = v_star == 0 ? ratio0 - ratio1 : 0.0;
  s[k++] = v_star == 1 ? ratio0 - ratio1 : 0.0;
  return s;
}

// E[g(Y)] for Y from component j (eta = alpha0 + alpha1 j).
double component_expectation(const ResponseFamily& family, const Theta& theta, int j,
                             const std::function<double(double)>& g,
                             const QuadratureConfig& cfg) {
  const double eta = theta.alpha0 + theta.alpha1 * j;
  if (family.kind() == FamilyKind::Normal) {
    return integrate_expectation(g, normal_distribution(eta, theta.phi.sigma), cfg);
  }
  return sum_expectation([&](long y) { return g(static_cast<double>(y)); },
                         poisson_distribution(std::exp(eta)));
}

// Fisher information restricted to the first `dim` parameters of the canonical
// ordering (dim < full excludes the reclassification probabilities).
Eigen::MatrixXd fisher_block(const ResponseFamily& family, const Theta& theta, Eigen::Index dim,
                             const std::vector<std::string>& names, const QuadratureConfig& cfg) {
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(dim, dim);
  const auto& q = theta.gating.constant();
  for (Eigen::Index a = 0; a < dim; ++a) {
    for (Eigen::Index b = a; b < dim; ++b) {
      double entry = 0.0;
      try {
        for (int vs = 0; vs < 2; ++vs) {
          for (int j = 0; j < 2; ++j) {
            const double w = theta.pi_star[vs] * q(static_cast<std::size_t>(vs),
                                                   static_cast<std::size_t>(j));
            if (w == 0.0) continue;
            const auto g = [&](double y) {
              const auto s = raw_score(family, theta, y, vs);
              return s[a] * s[b];
            };
            entry += w * component_expectation(family, theta, j, g, cfg);
          }
        }
      } catch (const ConvergenceError& e) {
        throw ConvergenceError("fisher entry (" + names[static_cast<std::size_t>(a)] + ", " +
                                   names[static_cast<std::size_t>(b)] + "): " + e.what(),
                               e.best_estimate(), e.error_estimate());
      }
      info(a, b) = entry;
      info(b, a) = entry;
    }
  }
  return info;
}

bool is_singular(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  return !(largest > 0.0) || ev.minCoeff() < kSingularRatio * largest;
}

// Inverse of a symmetric positive-definite matrix; +inf entries when singular.
Eigen::MatrixXd symmetric_inverse(const Eigen::MatrixXd& m) {
  if (is_singular(m)) return Eigen::MatrixXd::Constant(m.rows(), m.cols(), kInf);
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(m.rows(), m.cols());
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt.solve(identity);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  return ldlt.solve(identity);
}

}  // namespace

Eigen::Index FisherMatrix::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<Eigen::Index>(i);
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

std::vector<std::string> efficiency_parameter_names(const ResponseFamily& family) {
  if (has_sigma(family)) return {"alpha0", "alpha1", "sigma", "pi_star1", "q00", "q10"};
  return {"alpha0", "alpha1", "pi_star1", "q00", "q10"};
}

Eigen::VectorXd score(const ResponseFamily& family, const Theta& theta, double y, int v_star) {
  require_binary_setting(family, theta);
  if (v_star != 0 && v_star != 1) throw ConfigError("v_star must be 0 or 1");
  const auto& q = theta.gating.constant();
  if (on_boundary(q(0, 0)) || on_boundary(q(1, 0))) {
    throw BoundaryError("reclassification probability on the boundary");
  }
  if (on_boundary(theta.pi_star[1])) throw BoundaryError("pi_star on the boundary");
  return raw_score(family, theta, y, v_star);
}

FisherMatrix expected_fisher(const ResponseFamily& family, const Theta& theta,
                             const QuadratureConfig& cfg) {
  require_binary_setting(family, theta);
  const auto& q = theta.gating.constant();
  if (on_boundary(q(0, 0)) || on_boundary(q(1, 0)) || on_boundary(theta.pi_star[1])) {
    throw BoundaryError("expected information needs interior probabilities");
  }
  auto names = efficiency_parameter_names(family);
  auto info = fisher_block(family, theta, static_cast<Eigen::Index>(names.size()), names, cfg);
  return {std::move(info), std::move(names)};
}

FisherMatrix complete_data_fisher(const ResponseFamily& family, const Theta& theta,
                                  const QuadratureConfig& cfg) {
  require_binary_setting(family, theta);
  const Eigen::VectorXd pi = theta.gating.constant().matrix().transpose() * theta.pi_star;
  const bool sig = has_sigma(family);
  const Eigen::Index dim = sig ? 3 : 2;
  std::vector<std::string> names = {"alpha0", "alpha1"};
  if (sig) names.emplace_back("sigma");
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index a = 0; a < dim; ++a) {
    for (Eigen::Index b = a; b < dim; ++b) {
      double entry = 0.0;
      for (int v = 0; v < 2; ++v) {
        if (pi[v] == 0.0) continue;
        const double eta = theta.alpha0 + theta.alpha1 * v;
        const auto g = [&](double y) {
          const auto c = component_terms(family, eta, theta.phi.sigma, y);
          const double s[3] = {c.d_eta, v * c.d_eta, c.d_sigma};
          return s[a] * s[b];
        };
        try {
          entry += pi[v] * component_expectation(family, theta, v, g, cfg);
        } catch (const ConvergenceError& e) {
          throw ConvergenceError("complete-data fisher entry (" +
                                     names[static_cast<std::size_t>(a)] + ", " +
                                     names[static_cast<std::size_t>(b)] + "): " + e.what(),
                                 e.best_estimate(), e.error_estimate());
        }
      }
      info(a, b) = entry;
      info(b, a) = entry;
    }
  }
  return {std::move(info), std::move(names)};
}

EfficiencyReport asymptotic_covariances(const ResponseFamily& family, const Theta& theta,
                                        const QuadratureConfig& cfg) {
  require_binary_setting(family, theta);
  const auto names = efficiency_parameter_names(family);
  const Eigen::Index n_a = has_sigma(family) ? 3 : 2;  // alpha0, alpha1, [sigma]
  const Eigen::Index n_c = n_a + 1;                     // ... plus pi*_1
  const Eigen::Index target = 1;

  EfficiencyReport report;
  const auto complete = complete_data_fisher(family, theta, cfg);
  report.avar0 = symmetric_inverse(complete.entries)(target, target);

  const auto& q = theta.gating.constant();
  const bool boundary = on_boundary(q(0, 0)) || on_boundary(q(1, 0));
  if (on_boundary(theta.pi_star[1])) {
    report.avar1 = kInf;
    report.avar2 = kInf;
  } else {
    const Eigen::Index dim = boundary ? n_c : static_cast<Eigen::Index>(names.size());
    const Eigen::MatrixXd info = fisher_block(family, theta, dim, names, cfg);

    // Q known: {[I_CC]^{-1}}_AA via the Schur complement of the pi* block.
    const Eigen::MatrixXd i_aa = info.topLeftCorner(n_a, n_a);
    const Eigen::MatrixXd i_ab = info.block(0, n_a, n_a, 1);
    const Eigen::MatrixXd i_bb = info.block(n_a, n_a, 1, 1);
    const Eigen::MatrixXd schur = i_aa - i_ab * symmetric_inverse(i_bb) * i_ab.transpose();
    report.avar1 = symmetric_inverse(schur)(target, target);

    // Q unknown: full information. Boundary Q is not identified.
    report.avar2 = boundary ? kInf : symmetric_inverse(info)(target, target);
  }
  report.rasd1 = std::sqrt(report.avar1 / report.avar0);
  report.rasd2 = std::sqrt(report.avar2 / report.avar0);
  return report;
}

Theta binary_theta_from_classification(double alpha0, double alpha1, double sigma, double pi1,
                                       double p01, double p10) {
  Eigen::MatrixXd p(2, 2);
  p << 1.0 - p01, p01, p10, 1.0 - p10;
  Eigen::VectorXd pi(2);
  pi << 1.0 - pi1, pi1;
  auto rq = derive_reclassification(ClassificationMatrix(p), pi);
  Theta theta;
  theta.alpha0 = alpha0;
  theta.alpha1 = alpha1;
  theta.phi.sigma = sigma;
  theta.pi_star = rq.pi_star;
  theta.gating = GatingSpec(std::move(rq.q));
  return theta;
}

std::vector<double> misclassification_grid(int points, bool include_boundary) {
  if (points < 1) throw ConfigError("grid needs at least one point");
  std::vector<double> grid;
  if (include_boundary) grid.push_back(0.0);
  for (int i = 1; i <= points; ++i) grid.push_back(static_cast<double>(i) / (points + 1));
  if (include_boundary) grid.push_back(1.0);
  return grid;
}

std::vector<SurfaceCell> rasd_surface(const std::vector<double>& effect_sizes, double pi1,
                                      const std::vector<double>& grid,
                                      const SurfaceOptions& options) {
  if (!(pi1 > 0.0 && pi1 < 1.0)) throw ConfigError("pi1 must lie in (0,1)");
  for (double g : grid) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("grid values must lie in [0,1]");
  }
  std::vector<SurfaceCell> cells;
  for (double effect : effect_sizes) {
    for (double p01 : grid) {
      for (double p10 : grid) {
        if (options.dedup_symmetric && p01 > p10) continue;
        cells.push_back({p01, p10, effect, kNaN, kNaN, {}});
      }
    }
  }
  const ResponseFamily normal(FamilyKind::Normal);
  parallel_for(cells.size(), options.threads, [&](std::size_t i) {
    auto& cell = cells[i];
    const bool boundary = on_boundary(cell.p01) || on_boundary(cell.p10);
    try {
      const auto theta = binary_theta_from_classification(
          0.0, cell.effect_size * options.sigma, options.sigma, pi1, cell.p01, cell.p10);
      const auto report = asymptotic_covariances(normal, theta, options.quadrature);
      cell.rasd1 = report.rasd1;
      cell.rasd2 = report.rasd2;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    if (boundary) cell.rasd2 = kInf;
  });
  return cells;
}

void write_surface_csv(std::ostream& out, const std::vector<SurfaceCell>& cells) {
  out << "p01,p10,effect_size,rasd1,rasd2\n";
  const auto field = [&](double v) {
    if (std::isnan(v)) return;
    if (std::isinf(v)) {
      out << (v > 0 ? "inf" : "-inf");
      return;
    }
    out << v;
  };
  const auto old_precision = out.precision(10);
  for (const auto& c : cells) {
    out << c.p01 << ',' << c.p10 << ',' << c.effect_size << ',';
    field(c.rasd1);
    out << ',';
    field(c.rasd2);
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace mixclass
