#include "fmtk/adapters.hpp"

#include "fmtk/ops.hpp"
#include "fmtk/random.hpp"

namespace fmtk {
namespace {

std::string final_segment(const std::string& path) {
  const auto dot = path.rfind('.');
  return dot == std::string::npos ? path : path.substr(dot + 1);
}

void validate(const LoraConfig& cfg) {
  if (cfg.r < 1) throw ConfigError("lora: r must be >= 1");
  if (!(cfg.lora_alpha > 0.0)) throw ConfigError("lora: lora_alpha must be > 0");
  if (cfg.target_modules.empty()) throw ConfigError("lora: target_modules is empty");
  if (!(cfg.lora_dropout >= 0.0 && cfg.lora_dropout < 1.0)) {
    throw ConfigError("lora: lora_dropout must be in [0, 1)");
  }
}

}  // namespace

json LoraConfig::to_json() const {
  return {{"r", r},
          {"lora_alpha", lora_alpha},
          {"target_modules", target_modules},
          {"lora_dropout", lora_dropout},
          {"seed", seed}};
}

LoraConfig LoraConfig::from_json(const json& j) {
  LoraConfig c;
  c.r = j.value("r", c.r);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.target_modules = j.value("target_modules", c.target_modules);
  c.lora_dropout = j.value("lora_dropout", c.lora_dropout);
  c.seed = j.value("seed", c.seed);
  return c;
}

LoraAdapter::LoraAdapter(LoraConfig cfg, std::string name)
    : Component(std::move(name)), cfg_(std::move(cfg)) {
  validate(cfg_);
}

void LoraAdapter::add_site(const std::string& path, std::size_t in, std::size_t out) {
  CounterRng rng(cfg_.seed, stream_id(path + ".lora_A"));
  Tensor a({cfg_.r, in});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.02 * rng.normal(i);
  index_.emplace(path, sites_.size());
  sites_.push_back(Site{path, in, out, Parameter(std::move(a)),
                        Parameter(Tensor::zeros({out, cfg_.r})), std::nullopt});
}

std::unique_ptr<LoraAdapter> LoraAdapter::attach(Backbone& backbone, LoraConfig cfg,
                                                 std::string name) {
  std::unique_ptr<LoraAdapter> adapter(new LoraAdapter(std::move(cfg), std::move(name)));
  const auto linears = backbone.named_linears();
  std::vector<const NamedLinear*> matched;
  for (const auto& target : adapter->cfg_.target_modules) {
    bool any = false;
    for (const auto& l : linears) {
      if (final_segment(l.path) == target) {
        any = true;
        if (std::find(matched.begin(), matched.end(), &l) == matched.end()) matched.push_back(&l);
      }
    }
    if (!any) {
      std::string available;
      for (const auto& l : linears) available += (available.empty() ? "" : ", ") + l.path;
      throw ConfigError("lora target '" + target + "' matches no backbone linear; available: " +
                        available);
    }
  }
  // Keep the backbone's order regardless of target order.
  std::sort(matched.begin(), matched.end());
  adapter->sites_.reserve(matched.size());
  for (const auto* l : matched) adapter->add_site(l->path, l->in_features(), l->out_features());
  return adapter;
}

std::unique_ptr<LoraAdapter> LoraAdapter::from_config(const json& cfg, std::string name) {
  std::unique_ptr<LoraAdapter> adapter(new LoraAdapter(LoraConfig::from_json(cfg), std::move(name)));
  const auto& sites = cfg.at("sites");
  adapter->sites_.reserve(sites.size());
  for (const auto& s : sites) {
    adapter->add_site(s.at("path").get<std::string>(), s.at("in_features").get<std::size_t>(),
                      s.at("out_features").get<std::size_t>());
  }
  return adapter;
}

json LoraAdapter::config() const {
  json j = cfg_.to_json();
  json sites = json::array();
  for (const auto& s : sites_) {
    sites.push_back({{"path", s.path}, {"in_features", s.in_features}, {"out_features", s.out_features}});
  }
  j["sites"] = std::move(sites);
  return j;
}

ParameterSet LoraAdapter::parameters() {
  ParameterSet set;
  for (auto& s : sites_) {
    set.add(s.path + ".lora_A", s.a);
    set.add(s.path + ".lora_B", s.b);
  }
  return set;
}

std::optional<Var> LoraAdapter::delta(const std::string& path, const Var& x,
                                      const ForwardContext& ctx) const {
  if (merged_) return std::nullopt;
  const auto it = index_.find(path);
  if (it == index_.end()) return std::nullopt;
  // ctx.param takes a mutable Parameter only to record gradients into it.
  auto& site = const_cast<Site&>(sites_[it->second]);
  Var in = ctx.training && cfg_.lora_dropout > 0.0
               ? dropout(x, cfg_.lora_dropout, ctx.seed, stream_id(path), ctx.step)
               : x;
  Var low = linear(in, ctx.param(site.a));
  return fmtk::scale(linear(low, ctx.param(site.b)), scale());
}

void LoraAdapter::check_compatible(Backbone& backbone) const {
  for (const auto& s : sites_) {
    const NamedLinear l = backbone.linear(s.path);
    if (l.in_features() != s.in_features || l.out_features() != s.out_features) {
      throw ShapeError("lora site '" + s.path + "' is " + std::to_string(s.out_features) + "x" +
                       std::to_string(s.in_features) + " but the backbone linear is " +
                       std::to_string(l.out_features()) + "x" + std::to_string(l.in_features()));
    }
  }
}

void LoraAdapter::merge(Backbone& backbone) {
  if (merged_) throw StateError("lora adapter '" + name() + "' is already merged");
  check_compatible(backbone);
  for (auto& s : sites_) {
    Tensor& w = backbone.linear(s.path).weight->value;
    s.unmerged_weight = w;
    w.matrix().noalias() += scale() * (s.b.value.matrix() * s.a.value.matrix());
  }
  merged_ = true;
}

void LoraAdapter::unmerge(Backbone& backbone) {
  if (!merged_) throw StateError("lora adapter '" + name() + "' is not merged");
  for (auto& s : sites_) {
    backbone.linear(s.path).weight->value = std::move(*s.unmerged_weight);
    s.unmerged_weight.reset();
  }
  merged_ = false;
}

}  // namespace fmtk
