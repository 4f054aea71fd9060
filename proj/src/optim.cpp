#include "fmtk/optim.hpp"

#include <cmath>

namespace fmtk {

void adam_step(const ParameterSet& params, AdamState& state, const AdamConfig& cfg,
               std::uint64_t t) {
  if (t == 0) throw ConfigError("adam_step: step count starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (const auto& e : params) {
    Parameter& p = *e.param;
    if (p.frozen) continue;
    auto [it, fresh] = state.moments.try_emplace(&p);
    if (fresh) {
      it->second.m = Tensor::zeros(p.value.shape());
      it->second.v = Tensor::zeros(p.value.shape());
    }
    auto m = it->second.m.array();
    auto v = it->second.v.array();
    const auto g = p.grad.array();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    p.value.array() -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
  }
}

}  // namespace fmtk
