#include "fmtk/core.hpp"

#include "fmtk/kernels.hpp"
#include "fmtk/ops.hpp"

namespace fmtk {

std::string_view to_string(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::Encoder: return "encoder";
    case ComponentKind::Backbone: return "backbone";
    case ComponentKind::Adapter: return "adapter";
    case ComponentKind::Decoder: return "decoder";
  }
  return "unknown";
}

ComponentKind parse_component_kind(std::string_view name) {
  if (name == "encoder") return ComponentKind::Encoder;
  if (name == "backbone") return ComponentKind::Backbone;
  if (name == "adapter") return ComponentKind::Adapter;
  if (name == "decoder") return ComponentKind::Decoder;
  throw ConfigError("unknown component kind '" + std::string(name) +
                    "' (valid: encoder, backbone, adapter, decoder)");
}

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::Regression: return "regression";
    case TaskKind::Classification: return "classification";
    case TaskKind::Forecasting: return "forecasting";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "regression") return TaskKind::Regression;
  if (name == "classification") return TaskKind::Classification;
  if (name == "forecasting") return TaskKind::Forecasting;
  throw ConfigError("unknown task '" + std::string(name) +
                    "' (valid: regression, classification, forecasting)");
}

TimeSeriesBatch::TimeSeriesBatch(Tensor values, std::optional<Tensor> targets,
                                 std::optional<Tensor> mask)
    : values_(std::move(values)), targets_(std::move(targets)), mask_(std::move(mask)) {
  if (values_.rank() != 3 || values_.dim(0) == 0 || values_.dim(1) == 0 || values_.dim(2) == 0) {
    throw ShapeError("time series batch must be [B, C, L] with all dims >= 1, got " +
                     to_string(values_.shape()));
  }
  if (!values_.all_finite()) throw InputError("time series batch contains non-finite values");
  if (mask_) {
    if (mask_->shape() != values_.shape()) {
      throw ShapeError("mask shape " + to_string(mask_->shape()) + " differs from values " +
                       to_string(values_.shape()));
    }
    for (double m : mask_->values()) {
      if (m != 0.0 && m != 1.0) throw InputError("mask entries must be 0 or 1");
    }
  }
  if (targets_) {
    if (targets_->rank() == 0 || targets_->dim(0) != values_.dim(0)) {
      throw ShapeError("targets " + to_string(targets_->shape()) + " need leading dimension " +
                       std::to_string(values_.dim(0)));
    }
    if (!targets_->all_finite()) throw InputError("targets contain non-finite values");
  }
}

EmbeddingTensor::EmbeddingTensor(Var data, EmbeddingLayout layout)
    : data_(std::move(data)), layout_(layout) {
  const Tensor& t = data_.value();
  const std::size_t want = layout_ == EmbeddingLayout::TokenResolved ? 4 : 3;
  if (t.rank() != want) {
    throw LayoutError(std::string(layout_ == EmbeddingLayout::TokenResolved ? "token-resolved"
                                                                             : "pooled") +
                      " embedding must have rank " + std::to_string(want) + ", got " +
                      to_string(t.shape()));
  }
  for (std::size_t d : t.shape()) {
    if (d == 0) throw ShapeError("embedding dims must be >= 1, got " + to_string(t.shape()));
  }
}

Tensor flatten_channels(const TimeSeriesBatch& batch) {
  return batch.values().reshaped({batch.batch() * batch.channels(), batch.length()});
}

Var flatten_channels(const Var& values) {
  const Shape& s = values.shape();
  if (s.size() != 3) throw ShapeError("flatten_channels expects [B, C, L], got " + to_string(s));
  return reshape(values, {s[0] * s[1], s[2]});
}

EmbeddingTensor unflatten_channels(const Var& emb, std::size_t batch, std::size_t channels) {
  const Shape& s = emb.shape();
  if (s.size() != 3) {
    throw ShapeError("unflatten_channels expects [B*C, T, E], got " + to_string(s));
  }
  if (s[0] != batch * channels) {
    throw ShapeError("unflatten_channels: expected leading dim " + std::to_string(batch) + "*" +
                     std::to_string(channels) + " = " + std::to_string(batch * channels) +
                     ", got " + std::to_string(s[0]));
  }
  return EmbeddingTensor(reshape(emb, {batch, channels, s[1], s[2]}),
                         EmbeddingLayout::TokenResolved);
}

EmbeddingTensor pool_tokens(const EmbeddingTensor& emb) {
  if (emb.layout() != EmbeddingLayout::TokenResolved) {
    throw LayoutError("pool_tokens needs a token-resolved embedding");
  }
  const Shape& s = emb.tensor().shape();
  Var pooled = mean_row_groups(emb.var(), s[2]);
  return EmbeddingTensor(reshape(pooled, {s[0], s[1], s[3]}), EmbeddingLayout::Pooled);
}

void Component::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (const auto& e : parameters()) e.param->frozen = frozen;
}

}  // namespace fmtk
