#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "fmtk/adapters.hpp"
#include "fmtk/backbone.hpp"
#include "fmtk/decoders.hpp"
#include "fmtk/encoders.hpp"
#include "fmtk/metrics.hpp"
#include "fmtk/optim.hpp"

namespace fmtk {

enum class LossKind { Mse, CrossEntropy, Hinge };

std::string_view to_string(LossKind loss);
LossKind parse_loss_kind(std::string_view name);

struct TaskConfig {
  TaskKind task = TaskKind::Regression;
  LossKind loss = LossKind::Mse;
  double lr = 1e-3;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double hinge_margin = 1.0;

  // Throws ConfigError when the loss does not fit the task or epochs == 0.
  void validate() const;
  AdamConfig adam() const { return AdamConfig{lr}; }

  json to_json() const;
  static TaskConfig from_json(const json& j);
};

struct TrainReport {
  DecoderMode mode = DecoderMode::Gradient;
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
  double elapsed_s = 0.0;
  std::vector<RunMetrics> metrics;
};

struct PredictResult {
  std::optional<Tensor> targets;
  // [N, output_dim] for regression/forecasting, labels [N] for classification.
  Tensor predictions;
  std::vector<double> batch_latency_s;
};

enum class PipelineMode { Train, Eval };

// Backbone plus optional encoder/adapter/decoder slots, with a registry of
// staged components that can be swapped in without touching the backbone.
//
// One writer at a time: add_*, load_*, train and save take an exclusive lock;
// predict and forward_eval share it.
class Pipeline {
 public:
  explicit Pipeline(std::shared_ptr<Backbone> backbone, SeriesShape input = {});

  // Registers the component under its name; load = true also activates it.
  // Activation runs a symbolic shape check first and throws ShapeError
  // without registering anything when the chain would be invalid.
  std::string add_encoder(std::shared_ptr<Encoder> encoder, bool load = true);
  std::string add_decoder(std::shared_ptr<Decoder> decoder, bool load = true);
  std::string add_adapter(const LoraConfig& cfg, std::string name = "lora", bool load = true);
  std::string add_adapter(std::shared_ptr<LoraAdapter> adapter, bool load = true);
  // Dispatches on kind; backbones are rejected.
  std::string add_component(std::shared_ptr<Component> component, bool load = true);
  std::string add_from_file(const std::filesystem::path& path, ComponentKind expected,
                            bool load = true);

  // Activate a registered component; returns the swap wall time in seconds.
  double load_encoder(const std::string& name);
  double load_adapter(const std::string& name);
  double load_decoder(const std::string& name);
  void unload_encoder();
  void unload_adapter();

  TrainReport train(std::span<const TimeSeriesBatch> data, const std::vector<std::string>& parts,
                    const TaskConfig& cfg);
  PredictResult predict(std::span<const TimeSeriesBatch> data, const TaskConfig& cfg);

  // Raw decoder output for one batch through the active chain.
  Var forward(const Var& values, const ForwardContext& ctx);
  Tensor forward_eval(const Tensor& values);
  // Decoder input features [B, F] for a batch, computed in eval mode.
  Tensor features(const Tensor& values);

  void save_component(ComponentKind kind, const std::string& name,
                      const std::filesystem::path& path) const;

  Backbone& backbone() noexcept { return *backbone_; }
  const std::shared_ptr<Backbone>& backbone_ptr() const noexcept { return backbone_; }
  Encoder* encoder() const noexcept { return encoder_.get(); }
  LoraAdapter* adapter() const noexcept { return adapter_.get(); }
  Decoder* decoder() const noexcept { return decoder_.get(); }
  std::shared_ptr<Component> component(ComponentKind kind, const std::string& name) const;
  std::vector<std::string> registered(ComponentKind kind) const;
  std::size_t registry_size() const noexcept { return registry_.size(); }

  // Union of trainable_parameters() over the named parts.
  ParameterSet trainable_parameters(const std::vector<std::string>& parts);

  PipelineMode mode() const noexcept { return mode_; }
  const SeriesShape& input_shape() const noexcept { return input_; }

  void set_metrics(std::shared_ptr<MetricsCollector> metrics) { metrics_ = std::move(metrics); }
  MetricsCollector* metrics() const noexcept { return metrics_.get(); }

  static const std::vector<std::string>& part_names();

 private:
  using Key = std::pair<ComponentKind, std::string>;

  void validate_chain(const Encoder* encoder, const LoraAdapter* adapter,
                      const Decoder* decoder) const;
  std::shared_ptr<Component> lookup(ComponentKind kind, const std::string& name) const;
  void register_component(std::shared_ptr<Component> component);
  Component* part(const std::string& name) const;
  Var forward_locked(const Var& values, const ForwardContext& ctx);

  std::shared_ptr<Backbone> backbone_;
  SeriesShape input_;
  std::shared_ptr<Encoder> encoder_;
  std::shared_ptr<LoraAdapter> adapter_;
  std::shared_ptr<Decoder> decoder_;
  std::map<Key, std::shared_ptr<Component>> registry_;
  PipelineMode mode_ = PipelineMode::Eval;
  std::shared_ptr<MetricsCollector> metrics_;
  mutable std::shared_mutex mutex_;
};

// Stacks tensors along axis 0.
Tensor concat_rows(const std::vector<Tensor>& parts);

// Task loss of raw decoder output against batch targets.
Var task_loss(const Var& output, const Tensor& targets, const TaskConfig& cfg);

}  // namespace fmtk
