#include "fmtk/backbone.hpp"

#include "fmtk/ops.hpp"
#include "fmtk/random.hpp"

namespace fmtk {
namespace {

constexpr double kInitStd = 0.02;
constexpr double kNormEps = 1e-5;

Tensor gaussian(const Shape& shape, std::uint64_t seed, const std::string& path) {
  CounterRng rng(seed, stream_id(path));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = kInitStd * rng.normal(i);
  return t;
}

}  // namespace

std::atomic<std::uint64_t> ReferenceBackbone::constructions_{0};

NamedLinear Backbone::linear(const std::string& path) {
  for (auto& l : named_linears()) {
    if (l.path == path) return l;
  }
  throw RegistryError("backbone has no linear named '" + path + "'");
}

json BackboneConfig::to_json() const {
  return {{"patch_len", patch_len}, {"embed_dim", embed_dim},   {"num_layers", num_layers},
          {"num_heads", num_heads}, {"ffn_mult", ffn_mult},     {"max_tokens", max_tokens},
          {"seed", seed},           {"frozen", frozen}};
}

BackboneConfig BackboneConfig::from_json(const json& j) {
  BackboneConfig c;
  c.patch_len = j.value("patch_len", c.patch_len);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.seed = j.value("seed", c.seed);
  c.frozen = j.value("frozen", c.frozen);
  return c;
}

ReferenceBackbone::Linear ReferenceBackbone::make_linear(const std::string& path, std::size_t in,
                                                         std::size_t out) const {
  return Linear{Parameter(gaussian({out, in}, cfg_.seed, path + ".weight")),
                Parameter(Tensor::zeros({out}))};
}

ReferenceBackbone::ReferenceBackbone(BackboneConfig cfg, std::string name)
    : Backbone(std::move(name)), cfg_(cfg) {
  if (cfg_.patch_len < 1 || cfg_.embed_dim < 1 || cfg_.num_layers < 1 || cfg_.num_heads < 1 ||
      cfg_.ffn_mult < 1 || cfg_.max_tokens < 1) {
    throw ConfigError("backbone dims must all be >= 1");
  }
  if (cfg_.embed_dim % cfg_.num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(cfg_.embed_dim) +
                      " is not divisible by num_heads " + std::to_string(cfg_.num_heads));
  }
  const std::size_t E = cfg_.embed_dim;
  const std::size_t hidden = cfg_.ffn_mult * E;
  patch_embed_ = make_linear("patch_embed", cfg_.patch_len, E);
  pos_embed_ = Parameter(gaussian({cfg_.max_tokens, E}, cfg_.seed, "pos_embed"));
  blocks_.reserve(cfg_.num_layers);
  for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    block_prefix_.push_back(p);
    blocks_.push_back(Block{
        Norm{Parameter(Tensor({E}, 1.0)), Parameter(Tensor::zeros({E}))},
        make_linear(p + ".attn.q", E, E),
        make_linear(p + ".attn.k", E, E),
        make_linear(p + ".attn.v", E, E),
        make_linear(p + ".attn.o", E, E),
        Norm{Parameter(Tensor({E}, 1.0)), Parameter(Tensor::zeros({E}))},
        make_linear(p + ".ffn_in", E, hidden),
        make_linear(p + ".ffn_out", hidden, E),
    });
  }
  set_frozen(cfg_.frozen);
  constructions_.fetch_add(1);
}

ParameterSet ReferenceBackbone::parameters() {
  ParameterSet set;
  set.add("patch_embed.weight", patch_embed_.weight);
  set.add("patch_embed.bias", patch_embed_.bias);
  set.add("pos_embed", pos_embed_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    const std::string& p = block_prefix_[i];
    set.add(p + ".ln1.gain", b.ln1.gain);
    set.add(p + ".ln1.shift", b.ln1.shift);
    const std::pair<const char*, Linear*> attn[] = {{"q", &b.q}, {"k", &b.k}, {"v", &b.v}, {"o", &b.o}};
    for (auto [n, lin] : attn) {
      set.add(p + ".attn." + n + ".weight", lin->weight);
      set.add(p + ".attn." + n + ".bias", lin->bias);
    }
    set.add(p + ".ln2.gain", b.ln2.gain);
    set.add(p + ".ln2.shift", b.ln2.shift);
    set.add(p + ".ffn_in.weight", b.ffn_in.weight);
    set.add(p + ".ffn_in.bias", b.ffn_in.bias);
    set.add(p + ".ffn_out.weight", b.ffn_out.weight);
    set.add(p + ".ffn_out.bias", b.ffn_out.bias);
  }
  return set;
}

std::vector<NamedLinear> ReferenceBackbone::named_linears() {
  std::vector<NamedLinear> out;
  out.push_back({"patch_embed", &patch_embed_.weight, &patch_embed_.bias});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    const std::string& p = block_prefix_[i];
    out.push_back({p + ".attn.q", &b.q.weight, &b.q.bias});
    out.push_back({p + ".attn.k", &b.k.weight, &b.k.bias});
    out.push_back({p + ".attn.v", &b.v.weight, &b.v.bias});
    out.push_back({p + ".attn.o", &b.o.weight, &b.o.bias});
    out.push_back({p + ".ffn_in", &b.ffn_in.weight, &b.ffn_in.bias});
    out.push_back({p + ".ffn_out", &b.ffn_out.weight, &b.ffn_out.bias});
  }
  return out;
}

EmbeddingShape ReferenceBackbone::output_shape(const SeriesShape& in) const {
  EmbeddingShape out{in.channels, std::nullopt, cfg_.embed_dim};
  if (in.length) {
    if (*in.length % cfg_.patch_len != 0) {
      throw ShapeError("patch_len " + std::to_string(cfg_.patch_len) +
                       " does not divide series length " + std::to_string(*in.length));
    }
    out.tokens = *in.length / cfg_.patch_len;
    if (*out.tokens > cfg_.max_tokens) {
      throw ShapeError(std::to_string(*out.tokens) + " patches exceed max_tokens " +
                       std::to_string(cfg_.max_tokens));
    }
  }
  return out;
}

PatchedSeries ReferenceBackbone::preprocess(const Var& x) const {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("backbone expects [B, C, L], got " + to_string(s));
  if (!x.value().all_finite()) throw InputError("backbone input contains non-finite values");
  const std::size_t tokens = *output_shape({s[1], s[2]}).tokens;
  Var rows = flatten_channels(x);
  return {reshape(rows, {s[0] * s[1] * tokens, cfg_.patch_len}), s[0], s[1], tokens};
}

Var ReferenceBackbone::apply(const std::string& path, Linear& lin, const Var& x,
                             const ForwardContext& ctx, const LinearHook* hook) {
  Var y = fmtk::linear(x, ctx.param(lin.weight), ctx.param(lin.bias));
  if (hook) {
    if (auto d = hook->delta(path, x, ctx)) y = add(y, *d);
  }
  return y;
}

Var ReferenceBackbone::forward(const PatchedSeries& in, const ForwardContext& ctx,
                               const LinearHook* hook) {
  Var h = apply("patch_embed", patch_embed_, in.patches, ctx, hook);
  h = add_positional(h, ctx.param(pos_embed_), in.tokens);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    const std::string& p = block_prefix_[i];
    Var a = layernorm(h, ctx.param(b.ln1.gain), ctx.param(b.ln1.shift), kNormEps);
    Var q = apply(p + ".attn.q", b.q, a, ctx, hook);
    Var k = apply(p + ".attn.k", b.k, a, ctx, hook);
    Var v = apply(p + ".attn.v", b.v, a, ctx, hook);
    Var att = attention(q, k, v, in.tokens, cfg_.num_heads);
    h = add(h, apply(p + ".attn.o", b.o, att, ctx, hook));
    Var f = layernorm(h, ctx.param(b.ln2.gain), ctx.param(b.ln2.shift), kNormEps);
    f = gelu(apply(p + ".ffn_in", b.ffn_in, f, ctx, hook));
    h = add(h, apply(p + ".ffn_out", b.ffn_out, f, ctx, hook));
  }
  return h;
}

EmbeddingTensor ReferenceBackbone::postprocess(const Var& hidden, const PatchedSeries& in) const {
  return unflatten_channels(reshape(hidden, {in.batch * in.channels, in.tokens, cfg_.embed_dim}),
                            in.batch, in.channels);
}

}  // namespace fmtk
