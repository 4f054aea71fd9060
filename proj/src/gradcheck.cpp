#include "fmtk/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace fmtk {
namespace {

double evaluate(const ScalarObjective& f) {
  const double v = f(ForwardContext{}).value().item();
  if (!std::isfinite(v)) throw NumericalError("finite_diff_check: objective is not finite");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarObjective& f, const ParameterSet& params, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");

  std::vector<Tensor> saved_grads;
  for (const auto& e : params) saved_grads.push_back(e.param->grad);

  params.zero_grad();
  {
    Tape tape(params);
    ForwardContext ctx;
    ctx.tape = &tape;
    Var loss = f(ctx);
    if (!std::isfinite(loss.value().item())) {
      throw NumericalError("finite_diff_check: objective is not finite");
    }
    tape.backward(loss);
  }

  GradCheckReport report;
  std::size_t k = 0;
  for (const auto& e : params) {
    Tensor& value = e.param->value;
    const Tensor analytic = e.param->grad;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value[i];
      value[i] = original + h;
      const double up = evaluate(f);
      value[i] = original - h;
      const double down = evaluate(f);
      value[i] = original;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
      if (err > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        if (err >= report.max_rel_error) {
          report.worst_parameter = e.name;
          report.worst_index = i;
        }
      }
      ++report.checked;
    }
    e.param->grad = saved_grads[k++];
  }
  return report;
}

}  // namespace fmtk
