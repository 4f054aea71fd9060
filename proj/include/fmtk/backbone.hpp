#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "fmtk/core.hpp"

namespace fmtk {

// A linear site y = x Wᵀ + b inside a backbone, addressable by dotted path.
struct NamedLinear {
  std::string path;
  Parameter* weight;
  Parameter* bias;

  std::size_t in_features() const { return weight->value.dim(1); }
  std::size_t out_features() const { return weight->value.dim(0); }
};

// Extra contribution added to a named linear's output (LoRA plugs in here).
class LinearHook {
 public:
  virtual ~LinearHook() = default;
  // Returns the delta for the linear at `path` applied to input x, or
  // nothing when the hook does not touch that site.
  virtual std::optional<Var> delta(const std::string& path, const Var& x,
                                   const ForwardContext& ctx) const = 0;
};

struct EmbeddingShape {
  std::optional<std::size_t> channels;
  std::optional<std::size_t> tokens;
  std::size_t width = 0;
};

// Per-row patches fed to the backbone body.
struct PatchedSeries {
  Var patches;  // [B*C*T, p]
  std::size_t batch;
  std::size_t channels;
  std::size_t tokens;
};

class Backbone : public Component {
 public:
  using Component::Component;

  ComponentKind kind() const final { return ComponentKind::Backbone; }

  virtual std::size_t embed_dim() const = 0;
  virtual EmbeddingShape output_shape(const SeriesShape& in) const = 0;

  virtual PatchedSeries preprocess(const Var& x) const = 0;
  // Token features [B*C*T, E].
  virtual Var forward(const PatchedSeries& in, const ForwardContext& ctx,
                      const LinearHook* hook) = 0;
  virtual EmbeddingTensor postprocess(const Var& hidden, const PatchedSeries& in) const = 0;

  EmbeddingTensor run(const Var& x, const ForwardContext& ctx, const LinearHook* hook = nullptr) {
    PatchedSeries p = preprocess(x);
    return postprocess(forward(p, ctx, hook), p);
  }
  EmbeddingTensor run(const TimeSeriesBatch& batch, const LinearHook* hook = nullptr) {
    return run(Var(batch.values()), ForwardContext::eval(), hook);
  }

  // Every linear site in a stable order.
  virtual std::vector<NamedLinear> named_linears() = 0;
  NamedLinear linear(const std::string& path);
};

struct BackboneConfig {
  std::size_t patch_len = 16;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_mult = 4;
  // Rows in the positional table; series may use at most this many patches.
  std::size_t max_tokens = 64;
  std::uint64_t seed = 0;
  bool frozen = true;

  json to_json() const;
  static BackboneConfig from_json(const json& j);
};

// Seeded patch-embedding transformer encoder standing in for a pretrained
// time-series model: flatten channels, patchify, embed, add positions, then
// pre-layernorm blocks (MHA + GELU FFN, both residual).
class ReferenceBackbone final : public Backbone {
 public:
  explicit ReferenceBackbone(BackboneConfig cfg, std::string name = "reference_transformer");

  std::string type() const override { return "reference_transformer"; }
  json config() const override { return cfg_.to_json(); }
  ParameterSet parameters() override;

  std::size_t embed_dim() const override { return cfg_.embed_dim; }
  EmbeddingShape output_shape(const SeriesShape& in) const override;

  PatchedSeries preprocess(const Var& x) const override;
  Var forward(const PatchedSeries& in, const ForwardContext& ctx, const LinearHook* hook) override;
  EmbeddingTensor postprocess(const Var& hidden, const PatchedSeries& in) const override;

  std::vector<NamedLinear> named_linears() override;

  const BackboneConfig& cfg() const noexcept { return cfg_; }

  // Number of ReferenceBackbone objects constructed in this process.
  static std::uint64_t constructions() noexcept { return constructions_.load(); }

 private:
  struct Linear {
    Parameter weight;
    Parameter bias;
  };
  struct Norm {
    Parameter gain;
    Parameter shift;
  };
  struct Block {
    Norm ln1;
    Linear q, k, v, o;
    Norm ln2;
    Linear ffn_in, ffn_out;
  };

  Linear make_linear(const std::string& path, std::size_t in, std::size_t out) const;
  Var apply(const std::string& path, Linear& lin, const Var& x, const ForwardContext& ctx,
            const LinearHook* hook);

  BackboneConfig cfg_;
  Linear patch_embed_;
  Parameter pos_embed_;
  std::vector<Block> blocks_;
  std::vector<std::string> block_prefix_;

  static std::atomic<std::uint64_t> constructions_;
};

}  // namespace fmtk
