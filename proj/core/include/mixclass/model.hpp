#pragma once

// Domain types and the observed-data likelihood of a regression on a
// misclassified categorical covariate.
//
// The true category V in {0..K-1} enters the linear predictor numerically,
//   g(E[Y | V, x]) = alpha0 + alpha1 * V + x' beta,
// and the observed (possibly misclassified) category V* selects a row of
// reclassification probabilities q_{V* j} = P(V = j | V*), which act as the
// mixture weights of K regression components.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mixclass/error.hpp"

namespace mixclass {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FamilyKind { Normal, StudentT, Poisson, ZeroInflatedPoisson, Gamma };
enum class Link { Identity, Log };
enum class SignConstraint { PositiveSlope, NegativeSlope, None };

std::string_view to_string(FamilyKind kind);
std::string_view to_string(SignConstraint sign);
FamilyKind parse_family(std::string_view name);
SignConstraint parse_sign_constraint(std::string_view name);

// Response distribution together with its (fixed) link. Normal and StudentT use
// the identity link; the count families and Gamma use the log link.
class ResponseFamily {
 public:
  explicit ResponseFamily(FamilyKind kind = FamilyKind::Normal);
  ResponseFamily(FamilyKind kind, Link link);

  static Link canonical_link(FamilyKind kind);

  FamilyKind kind() const { return kind_; }
  Link link() const { return link_; }
  bool is_count() const {
    return kind_ == FamilyKind::Poisson || kind_ == FamilyKind::ZeroInflatedPoisson;
  }
  double inverse_link(double eta) const;
  std::string_view name() const { return to_string(kind_); }

  friend bool operator==(const ResponseFamily&, const ResponseFamily&) = default;

 private:
  FamilyKind kind_;
  Link link_;
};

namespace detail {
void validate_stochastic(const Eigen::MatrixXd& m, std::string_view what);
}

// Square row-stochastic matrix. Tag distinguishes classification (P) from
// reclassification (Q) so the two cannot be swapped by accident.
template <class Tag>
class StochasticMatrix {
 public:
  StochasticMatrix() = default;
  explicit StochasticMatrix(Eigen::MatrixXd entries) : m_(std::move(entries)) {
    detail::validate_stochastic(m_, Tag::name);
  }
  static StochasticMatrix identity(std::size_t k) {
    return StochasticMatrix(Eigen::MatrixXd::Identity(k, k));
  }

  std::size_t size() const { return static_cast<std::size_t>(m_.rows()); }
  double operator()(std::size_t row, std::size_t col) const {
    return m_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
  }
  const Eigen::MatrixXd& matrix() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

struct ClassificationTag {
  static constexpr std::string_view name = "classification matrix";
};
struct ReclassificationTag {
  static constexpr std::string_view name = "reclassification matrix";
};

// p_kj = P(V* = j | V = k)
using ClassificationMatrix = StochasticMatrix<ClassificationTag>;
// q_kj = P(V = j | V* = k)
using ReclassificationMatrix = StochasticMatrix<ReclassificationTag>;

// Multinomial-logit reclassification: for observed category k,
//   q_kj(w) = exp(nu_kj + w' gamma_kj) / sum_h exp(nu_kh + w' gamma_kh)
// with the base category K-1 held at zero (it is not stored).
struct LogitGating {
  Eigen::MatrixXd intercepts;           // K x (K-1)
  std::vector<Eigen::MatrixXd> slopes;  // K entries, each (K-1) x m; empty when m = 0

  std::size_t categories() const { return static_cast<std::size_t>(intercepts.rows()); }
  std::size_t covariates() const {
    return slopes.empty() ? 0 : static_cast<std::size_t>(slopes.front().cols());
  }
};

enum class GatingMode { ConstantMatrix, LogitModel };

class GatingSpec {
 public:
  GatingSpec() = default;
  explicit GatingSpec(ReclassificationMatrix q) : mode_(std::move(q)) {}
  explicit GatingSpec(LogitGating logit);

  GatingMode mode() const {
    return std::holds_alternative<ReclassificationMatrix>(mode_) ? GatingMode::ConstantMatrix
                                                                  : GatingMode::LogitModel;
  }
  std::size_t categories() const;
  std::size_t covariates() const;

  // Throw ConfigError when the gating is not of the requested mode.
  const ReclassificationMatrix& constant() const;
  const LogitGating& logit() const;

 private:
  std::variant<ReclassificationMatrix, LogitGating> mode_;
};

// Nuisance parameters; each family reads only its own fields.
//   Normal: sigma. StudentT: sigma (scale), df. Gamma: shape.
//   ZeroInflatedPoisson: zero_weight (extra-zero probability w).
struct Nuisance {
  double sigma = 1.0;
  double df = 30.0;
  double shape = 1.0;
  double zero_weight = 0.0;
};

struct Theta {
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  Eigen::VectorXd beta;
  Nuisance phi;
  Eigen::VectorXd pi_star;
  GatingSpec gating;

  std::size_t categories() const { return static_cast<std::size_t>(pi_star.size()); }
  void validate(const ResponseFamily& family, SignConstraint sign = SignConstraint::None) const;
};

struct ModelSpec {
  ResponseFamily family;
  std::size_t categories = 2;
  std::size_t covariates = 0;         // columns of x
  std::size_t gating_covariates = 0;  // columns of w, LogitModel only
  GatingMode gating = GatingMode::ConstantMatrix;

  void validate() const;
  void check(const Theta& theta) const;
};

struct Dataset {
  Eigen::VectorXd y;
  std::vector<int> v_star;
  RowMatrix x;  // n x p, p may be 0
  RowMatrix w;  // n x m, m may be 0

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  std::span<const double> x_row(std::size_t i) const;
  std::span<const double> w_row(std::size_t i) const;

  // Shapes agree, n >= 1 (unless allow_empty), categories in {0..K-1},
  // response inside the family support.
  void validate(const ResponseFamily& family, std::size_t categories,
                bool allow_empty = false) const;
};

double linear_predictor(const Theta& theta, int v, std::span<const double> x_row);

// log f_Y(y | eta, phi) at linear predictor eta; y is not checked.
double response_logpdf(const ResponseFamily& family, const Nuisance& phi, double eta, double y);

// log f_Y(y | alpha, beta, phi, V = v, x)
double component_logpdf(const ResponseFamily& family, const Theta& theta, int v,
                        std::span<const double> x_row, double y);

// Row (q_{v*,0}, ..., q_{v*,K-1}) of the reclassification probabilities.
Eigen::VectorXd gating_probabilities(const GatingSpec& gating, int v_star,
                                     std::span<const double> w_row = {});

// sum_i [ log pi*_{v*_i} + log sum_j q_{v*_i j}(w_i) f_Y(y_i | V = j, x_i) ]
double mixture_loglik(const ModelSpec& spec, const Theta& theta, const Dataset& data);

struct ReclassificationResult {
  Eigen::VectorXd pi_star;
  ReclassificationMatrix q;
};
struct ClassificationResult {
  Eigen::VectorXd pi;
  ClassificationMatrix p;
};

// pi* = P' pi and q_kj = p_jk pi_j / pi*_k.
ReclassificationResult derive_reclassification(const ClassificationMatrix& p,
                                               const Eigen::VectorXd& pi);
// Inverse map: pi = Q' pi* and p_jk = q_kj pi*_k / pi_j.
ClassificationResult derive_classification(const ReclassificationMatrix& q,
                                           const Eigen::VectorXd& pi_star);

// Logit gating reproducing the constant matrix q (all slopes zero, m gating
// covariates). Entries of q must be positive.
GatingSpec logit_gating_from_matrix(const Eigen::MatrixXd& q, std::size_t m);

// Numerically stable log(sum(exp(v))).
double log_sum_exp(std::span<const double> v);

void validate_probability_vector(const Eigen::VectorXd& p, std::string_view what);

}  // namespace mixclass
