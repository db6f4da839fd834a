#pragma once

#include <span>
#include <vector>

namespace mixclass {

using Chains = std::vector<std::vector<double>>;

// Linear-interpolation sample quantile (R type 7) of already sorted data.
double sorted_quantile(std::span<const double> sorted, double p);

// Multi-chain effective sample size from the averaged autocorrelation, truncated
// with Geyer's initial monotone positive sequence. Constant draws return the
// total draw count.
double effective_sample_size(const Chains& chains);

// Split-chain potential scale reduction. Constant draws return 1.
double split_rhat(const Chains& chains);

}  // namespace mixclass
