#pragma once

#include <iosfwd>

#include "config.hpp"

namespace mixclass::cli {

// Each returns an exit code; library exceptions propagate to the caller.
int run_fit(const FitConfig& cfg, std::ostream& out, std::ostream& err);
int run_efficiency(const EfficiencyRunConfig& cfg, std::ostream& out);
int run_study_command(const StudyRunConfig& cfg, std::ostream& out);

}  // namespace mixclass::cli
