#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

#include "fmtk/autodiff.hpp"

namespace fmtk {

using json = nlohmann::json;

enum class ComponentKind : std::uint8_t { Encoder = 0, Backbone = 1, Adapter = 2, Decoder = 3 };

std::string_view to_string(ComponentKind kind);
ComponentKind parse_component_kind(std::string_view name);

enum class TaskKind { Regression, Classification, Forecasting };

std::string_view to_string(TaskKind task);
TaskKind parse_task_kind(std::string_view name);

// Raw multichannel input [B, C, L] with optional targets ([B, D] reals or
// [B] integer labels) and an optional {0,1} mask shaped like values.
class TimeSeriesBatch {
 public:
  TimeSeriesBatch(Tensor values, std::optional<Tensor> targets = std::nullopt,
                  std::optional<Tensor> mask = std::nullopt);

  const Tensor& values() const noexcept { return values_; }
  const std::optional<Tensor>& targets() const noexcept { return targets_; }
  const std::optional<Tensor>& mask() const noexcept { return mask_; }

  std::size_t batch() const noexcept { return values_.dim(0); }
  std::size_t channels() const noexcept { return values_.dim(1); }
  std::size_t length() const noexcept { return values_.dim(2); }

 private:
  Tensor values_;
  std::optional<Tensor> targets_;
  std::optional<Tensor> mask_;
};

enum class EmbeddingLayout { TokenResolved, Pooled };

// Backbone output: [B, C, T, E] when token-resolved, [B, C, E] when pooled.
class EmbeddingTensor {
 public:
  EmbeddingTensor(Var data, EmbeddingLayout layout);
  EmbeddingTensor(Tensor data, EmbeddingLayout layout)
      : EmbeddingTensor(Var(std::move(data)), layout) {}

  const Var& var() const noexcept { return data_; }
  const Tensor& tensor() const noexcept { return data_.value(); }
  EmbeddingLayout layout() const noexcept { return layout_; }

  std::size_t batch() const noexcept { return tensor().dim(0); }
  std::size_t channels() const noexcept { return tensor().dim(1); }
  std::size_t tokens() const noexcept {
    return layout_ == EmbeddingLayout::TokenResolved ? tensor().dim(2) : 1;
  }
  std::size_t width() const noexcept { return tensor().shape().back(); }

 private:
  Var data_;
  EmbeddingLayout layout_;
};

// [B, C, L] -> [B*C, L]; row b*C + c holds input[b, c, :].
Tensor flatten_channels(const TimeSeriesBatch& batch);
Var flatten_channels(const Var& values);

// [B*C, T, E] -> [B, C, T, E].
EmbeddingTensor unflatten_channels(const Var& emb, std::size_t batch, std::size_t channels);
inline EmbeddingTensor unflatten_channels(const Tensor& emb, std::size_t batch,
                                          std::size_t channels) {
  return unflatten_channels(Var(emb), batch, channels);
}

// Mean over the token axis: [B, C, T, E] -> [B, C, E].
EmbeddingTensor pool_tokens(const EmbeddingTensor& emb);

// Declared series dims used for activation-time dry runs; unknown dims stay
// empty and are checked once data arrives.
struct SeriesShape {
  std::optional<std::size_t> channels;
  std::optional<std::size_t> length;
};

// Uniform contract shared by encoders, backbones, adapters and decoders.
// parameters() lists every persisted tensor; trainable_parameters() is the
// subset an optimizer may update when this component is trained.
class Component {
 public:
  explicit Component(std::string name) : name_(std::move(name)) {}
  Component(const Component&) = delete;
  Component& operator=(const Component&) = delete;
  virtual ~Component() = default;

  virtual ComponentKind kind() const = 0;
  // Registered type id, e.g. "mlp" or "linear_channel_combiner".
  virtual std::string type() const = 0;
  // Everything needed to rebuild the component minus its tensors.
  virtual json config() const = 0;
  virtual ParameterSet parameters() = 0;

  ParameterSet trainable_parameters() { return parameters().trainable(); }

  virtual void set_frozen(bool frozen);
  bool frozen() const noexcept { return frozen_; }

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

 protected:
  bool frozen_ = false;

 private:
  std::string name_;
};

}  // namespace fmtk
