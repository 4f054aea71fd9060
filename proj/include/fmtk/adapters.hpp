#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmtk/backbone.hpp"

namespace fmtk {

struct LoraConfig {
  std::size_t r = 8;
  double lora_alpha = 16.0;
  std::vector<std::string> target_modules{"q", "v"};
  double lora_dropout = 0.0;
  std::uint64_t seed = 0;

  json to_json() const;
  static LoraConfig from_json(const json& j);
};

// Low-rank update on named backbone linears:
//   y = W x + b + (alpha / r) * B (A drop(x))
// with A [r, d_in] seeded gaussian and B [d_out, r] zero at attach, so an
// untrained adapter leaves the host function unchanged. Host parameters are
// never part of this component's parameter set.
class LoraAdapter final : public Component, public LinearHook {
 public:
  struct Site {
    std::string path;
    std::size_t in_features;
    std::size_t out_features;
    Parameter a;
    Parameter b;
    std::optional<Tensor> unmerged_weight;
  };

  // Matches every target suffix against the final path segment of the
  // backbone's linears. Throws ConfigError listing the available paths when
  // a target matches nothing.
  static std::unique_ptr<LoraAdapter> attach(Backbone& backbone, LoraConfig cfg,
                                             std::string name = "lora");

  // Rebuilds an unbound adapter from a saved config; tensors are filled in
  // by the checkpoint loader.
  static std::unique_ptr<LoraAdapter> from_config(const json& cfg, std::string name);

  ComponentKind kind() const override { return ComponentKind::Adapter; }
  std::string type() const override { return "lora"; }
  json config() const override;
  ParameterSet parameters() override;

  std::optional<Var> delta(const std::string& path, const Var& x,
                           const ForwardContext& ctx) const override;

  // Folds scale * B A into the host weights; unmerge restores them bitwise.
  void merge(Backbone& backbone);
  void unmerge(Backbone& backbone);
  bool merged() const noexcept { return merged_; }

  // Throws ShapeError unless every site exists in backbone with equal dims.
  void check_compatible(Backbone& backbone) const;

  double scale() const noexcept { return cfg_.lora_alpha / static_cast<double>(cfg_.r); }
  const LoraConfig& cfg() const noexcept { return cfg_; }
  const std::vector<Site>& sites() const noexcept { return sites_; }
  std::vector<Site>& sites() noexcept { return sites_; }

 private:
  LoraAdapter(LoraConfig cfg, std::string name);
  void add_site(const std::string& path, std::size_t in, std::size_t out);

  LoraConfig cfg_;
  std::vector<Site> sites_;
  std::unordered_map<std::string, std::size_t> index_;
  bool merged_ = false;
};

}  // namespace fmtk
