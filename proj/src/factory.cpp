#include "fmtk/factory.hpp"

#include "fmtk/adapters.hpp"
#include "fmtk/backbone.hpp"
#include "fmtk/decoders.hpp"
#include "fmtk/encoders.hpp"

namespace fmtk {
namespace {

template <typename T>
T required(const json& cfg, const char* key, const std::string& type) {
  if (!cfg.contains(key)) throw ConfigError(type + " config is missing '" + key + "'");
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(type + " config field '" + key + "': " + e.what());
  }
}

}  // namespace

const std::vector<ComponentType>& component_types() {
  static const std::vector<ComponentType> types = {
      {ComponentKind::Encoder, "identity", "passthrough"},
      {ComponentKind::Encoder, "linear_channel_combiner", "learned C_in -> C_out channel mixing"},
      {ComponentKind::Encoder, "window", "sliding context windows"},
      {ComponentKind::Backbone, "reference_transformer", "seeded patch transformer encoder"},
      {ComponentKind::Adapter, "lora", "low-rank adapters on named linears"},
      {ComponentKind::Decoder, "mlp", "two-layer MLP head (gradient mode)"},
      {ComponentKind::Decoder, "ridge", "closed-form ridge regression (fit mode)"},
      {ComponentKind::Decoder, "svm", "one-vs-rest linear SVM (fit mode)"},
      {ComponentKind::Decoder, "knn", "k-nearest-neighbour vote (fit mode)"},
      {ComponentKind::Decoder, "logistic", "multinomial logistic regression (fit mode)"},
  };
  return types;
}

std::shared_ptr<Component> make_component(ComponentKind kind, const std::string& type,
                                          const json& cfg, const std::string& name) {
  const std::string who = std::string(to_string(kind)) + " '" + type + "'";
  switch (kind) {
    case ComponentKind::Encoder:
      if (type == "identity") return std::make_shared<IdentityEncoder>(name);
      if (type == "linear_channel_combiner") {
        return std::make_shared<LinearChannelCombiner>(
            LinearChannelCombinerConfig{required<std::size_t>(cfg, "num_channels", who),
                                        required<std::size_t>(cfg, "new_num_channels", who)},
            name);
      }
      if (type == "window") {
        return std::make_shared<WindowEncoder>(
            WindowConfig{required<std::size_t>(cfg, "window_len", who), cfg.value("stride", std::size_t{1})},
            name);
      }
      break;
    case ComponentKind::Backbone:
      if (type == "reference_transformer") {
        return std::make_shared<ReferenceBackbone>(BackboneConfig::from_json(cfg), name);
      }
      break;
    case ComponentKind::Adapter:
      if (type == "lora") return LoraAdapter::from_config(cfg, name);
      break;
    case ComponentKind::Decoder:
      if (type == "mlp") {
        return std::make_shared<MLPDecoder>(
            MLPDecoderConfig{required<std::size_t>(cfg, "input_dim", who),
                             required<std::size_t>(cfg, "output_dim", who),
                             required<std::size_t>(cfg, "hidden_dim", who),
                             cfg.value("seed", std::uint64_t{0})},
            name);
      }
      if (type == "ridge") {
        return std::make_shared<RidgeDecoder>(
            RidgeConfig{required<std::size_t>(cfg, "input_dim", who), cfg.value("output_dim", std::size_t{1}),
                        cfg.value("lambda", 1.0), cfg.value("fit_intercept", true)},
            name, cfg.value("fitted", false));
      }
      if (type == "knn") {
        return std::make_shared<KnnDecoder>(
            KnnConfig{required<std::size_t>(cfg, "input_dim", who),
                      required<std::size_t>(cfg, "num_classes", who), cfg.value("k", std::size_t{5}),
                      cfg.value("standardize", true)},
            name, cfg.value("num_exemplars", std::size_t{0}));
      }
      if (type == "logistic") {
        return std::make_shared<LogisticDecoder>(
            LogisticConfig{required<std::size_t>(cfg, "input_dim", who),
                           required<std::size_t>(cfg, "num_classes", who), cfg.value("lr", 0.5),
                           cfg.value("epochs", std::size_t{500}), cfg.value("standardize", true)},
            name, cfg.value("fitted", false));
      }
      if (type == "svm") {
        return std::make_shared<LinearSvmDecoder>(
            SvmConfig{required<std::size_t>(cfg, "input_dim", who),
                      required<std::size_t>(cfg, "num_classes", who), cfg.value("c", 1.0),
                      cfg.value("lr", 0.01), cfg.value("epochs", std::size_t{200}),
                      cfg.value("standardize", true)},
            name, cfg.value("fitted", false));
      }
      break;
  }
  std::string known;
  for (const auto& t : component_types()) {
    if (t.kind == kind) known += (known.empty() ? "" : ", ") + t.type;
  }
  throw ConfigError("unknown " + std::string(to_string(kind)) + " type '" + type + "' (known: " +
                    known + ")");
}

}  // namespace fmtk
