#pragma once

#include <functional>
#include <set>
#include <string>

#include "fssl/params.hpp"
#include "fssl/rng.hpp"

namespace fssl {

struct GradCheckConfig {
  double step = 1e-5;         // central-difference half width
  double denom_floor = 1e-3;  // protects the relative error near zero
  std::size_t max_coords = 0; // 0 checks every coordinate
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares `analytic` against central differences of `loss` evaluated on
// perturbed copies of `ps`. When max_coords is smaller than the total number
// of trainable scalars, a uniform sample without replacement is checked.
GradCheckResult finite_diff_check(
    const ParamSet& ps, const ParamSet& analytic,
    const std::set<ParamTag>& trainable,
    const std::function<double(const ParamSet&)>& loss,
    const GradCheckConfig& cfg, Rng& rng);

struct GradSuiteCase {
  std::string name;
  GradCheckResult result;
  double seconds = 0.0;
};

// Finite-difference comparisons for every primitive layer and for both
// composed training objectives (reconstruction through encoder+decoder,
// classification through encoder+classifier) on a one-clip input at
// simulation scale. Per-layer cases check every coordinate; the composed
// cases sample `composed_coords` of them (0 checks all, slowly).
std::vector<GradSuiteCase> model_gradient_checks(std::uint64_t seed,
                                                 std::size_t composed_coords);

}  // namespace fssl
