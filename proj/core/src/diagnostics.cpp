#include "mixclass/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mixclass/error.hpp"

namespace mixclass {

namespace {

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

bool is_constant(std::span<const double> x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *lo == *hi;
}

// Exactly zero for constant input, where rounding in the mean would otherwise
// leave a tiny positive value.
double sample_variance(std::span<const double> x) {
  if (x.size() < 2 || is_constant(x)) return 0.0;
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

// Biased autocovariance at `lag`.
double autocovariance(std::span<const double> x, double mean, std::size_t lag) {
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
  return s / static_cast<double>(n);
}

void check_chains(const Chains& chains) {
  if (chains.empty() || chains.front().empty()) throw ConfigError("diagnostics need at least one draw");
  for (const auto& c : chains) {
    if (c.size() != chains.front().size()) throw ConfigError("chains must have equal length");
  }
}

}  // namespace

double sorted_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ConfigError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile level outside [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

double effective_sample_size(const Chains& chains) {
  check_chains(chains);
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  const double total = static_cast<double>(m * n);
  if (n < 4) return total;

  std::vector<double> means(m), variances(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(chains[c]);
    variances[c] = sample_variance(chains[c]);
  }
  const double within = std::accumulate(variances.begin(), variances.end(), 0.0) / static_cast<double>(m);
  double var_plus = within * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
  if (m > 1) var_plus += sample_variance(means);
  if (!(var_plus > 0.0)) return total;

  auto rho = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) acov += autocovariance(chains[c], means[c], lag);
    acov /= static_cast<double>(m);
    return 1.0 - (within - acov) / var_plus;
  };

  // Geyer: sum pairs Gamma_k = rho_{2k} + rho_{2k+1} while positive, monotone.
  double sum = 0.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, previous_pair);
    sum += pair;
    previous_pair = pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(total));
  return total / tau;
}

double split_rhat(const Chains& chains) {
  check_chains(chains);
  const std::size_t n = chains.front().size();
  const std::size_t half = n / 2;
  if (half < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::span<const double>> parts;
  for (const auto& c : chains) {
    parts.emplace_back(c.data(), half);
    parts.emplace_back(c.data() + (n - half), half);
  }
  std::vector<double> means, variances;
  for (auto p : parts) {
    means.push_back(mean_of(p));
    variances.push_back(sample_variance(p));
  }
  const double within = std::accumulate(variances.begin(), variances.end(), 0.0) /
                        static_cast<double>(parts.size());
  const double between_over_n = sample_variance(means);
  if (!(within > 0.0)) {
    return between_over_n > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  }
  const double hn = static_cast<double>(half);
  const double var_plus = (hn - 1.0) / hn * within + between_over_n;
  return std::sqrt(var_plus / within);
}

}  // namespace mixclass
