#pragma once

#include <cstdint>
#include <unordered_map>

#include "fmtk/autodiff.hpp"

namespace fmtk {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers keyed by parameter identity.
struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::unordered_map<const Parameter*, Moments> moments;
};

// One bias-corrected Adam update at step t >= 1. Frozen entries are skipped
// and their moment buffers are never created.
void adam_step(const ParameterSet& params, AdamState& state, const AdamConfig& cfg,
               std::uint64_t t);

// Stateful wrapper that owns the step counter.
class Adam {
 public:
  Adam(ParameterSet params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {}

  void zero_grad() const { params_.zero_grad(); }
  void step() { adam_step(params_, state_, cfg_, ++t_); }

  std::uint64_t steps() const noexcept { return t_; }
  const ParameterSet& params() const noexcept { return params_; }

 private:
  ParameterSet params_;
  AdamConfig cfg_;
  AdamState state_;
  std::uint64_t t_ = 0;
};

}  // namespace fmtk
