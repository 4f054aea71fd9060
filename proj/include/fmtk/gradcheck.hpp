#pragma once

#include <functional>
#include <string>

#include "fmtk/autodiff.hpp"

namespace fmtk {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

using ScalarObjective = std::function<Var(const ForwardContext&)>;

// Compares tape gradients of f against central differences with step h.
// Error per scalar is |g_analytic - g_fd| / max(1, |g_fd|). Parameter values
// are restored bitwise before returning.
GradCheckReport finite_diff_check(const ScalarObjective& f, const ParameterSet& params, double h);

}  // namespace fmtk
