#pragma once

#include <functional>
#include <string>
#include <vector>

#include "partsmamba/autograd.hpp"

namespace partsmamba {

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
  std::string failure;  // set when the objective went non-finite
};

/// Scalar objective evaluated on a fresh tape; must bind every parameter
/// under test through `Tape::param`.
using Objective = std::function<Var(Tape&)>;

/// Compares tape gradients with central differences for every entry of
/// every parameter in `params`.
///
/// Relative error per entry is |analytic - numeric| / max(|analytic|,
/// |numeric|, denom_floor); the floor keeps entries whose true gradient is
/// zero from dividing rounding noise by zero.
GradCheckReport grad_check(const Objective& f, std::vector<Param*> params, double eps = 1e-5,
                           double tol = 1e-4, double denom_floor = 1e-6);

}  // namespace partsmamba
