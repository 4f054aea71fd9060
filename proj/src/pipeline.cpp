#include "fmtk/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <mutex>
#include <set>

#include "fmtk/error.hpp"
#include "fmtk/losses.hpp"
#include "fmtk/ops.hpp"
#include "fmtk/serialize.hpp"

namespace fmtk {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string_view to_string(LossKind loss) {
  switch (loss) {
    case LossKind::Mse: return "mse";
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::Hinge: return "hinge";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "mse") return LossKind::Mse;
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  if (name == "hinge") return LossKind::Hinge;
  throw ConfigError("unknown loss '" + std::string(name) + "' (expected mse, cross_entropy, hinge)");
}

void TaskConfig::validate() const {
  bool classification = task == TaskKind::Classification;
  if (classification && loss == LossKind::Mse)
    throw ConfigError("classification needs cross_entropy or hinge loss, got mse");
  if (!classification && loss != LossKind::Mse)
    throw ConfigError(std::string(fmtk::to_string(task)) + " needs mse loss, got " +
                      std::string(fmtk::to_string(loss)));
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
}

json TaskConfig::to_json() const {
  return json{{"task", std::string(fmtk::to_string(task))},
              {"loss", std::string(fmtk::to_string(loss))},
              {"lr", lr},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"seed", seed},
              {"hinge_margin", hinge_margin}};
}

TaskConfig TaskConfig::from_json(const json& j) {
  TaskConfig c;
  try {
    if (j.contains("task")) c.task = parse_task_kind(j.at("task").get<std::string>());
    c.loss = c.task == TaskKind::Classification ? LossKind::CrossEntropy : LossKind::Mse;
    if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.hinge_margin = j.value("hinge_margin", c.hinge_margin);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("task config: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) return Tensor(Shape{0});
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(),
                                                shape.begin() + 1))
      throw ShapeError("concat_rows: " + to_string(p.shape()) + " vs " + to_string(shape));
    rows += p.dim(0);
  }
  shape[0] = rows;
  Tensor out(shape);
  double* dst = out.data();
  for (const auto& p : parts) {
    std::memcpy(dst, p.data(), p.bytes());
    dst += p.size();
  }
  return out;
}

Var task_loss(const Var& output, const Tensor& targets, const TaskConfig& cfg) {
  switch (cfg.loss) {
    case LossKind::Mse:
      if (targets.size() != output.value().size())
        throw ShapeError("targets " + to_string(targets.shape()) + " do not match output " +
                         to_string(output.shape()));
      return mse(output, targets);
    case LossKind::CrossEntropy:
      return cross_entropy(output, labels_from(targets, output.value().cols()));
    case LossKind::Hinge: {
      std::size_t k = output.value().cols() == 1 ? 2 : output.value().cols();
      return hinge(output, labels_from(targets, k), cfg.hinge_margin);
    }
  }
  throw ConfigError("unknown loss");
}

Pipeline::Pipeline(std::shared_ptr<Backbone> backbone, SeriesShape input)
    : backbone_(std::move(backbone)), input_(input) {
  if (!backbone_) throw ConfigError("pipeline needs a backbone");
}

const std::vector<std::string>& Pipeline::part_names() {
  static const std::vector<std::string> names{"encoder", "backbone", "adapter", "decoder"};
  return names;
}

void Pipeline::validate_chain(const Encoder* encoder, const LoraAdapter* adapter,
                              const Decoder* decoder) const {
  SeriesShape shape = input_;
  if (encoder) shape = encoder->output_shape(shape);
  EmbeddingShape emb = backbone_->output_shape(shape);
  if (adapter) adapter->check_compatible(*backbone_);
  if (!decoder) return;
  std::size_t e = emb.width;
  if (emb.channels) {
    std::size_t f = *emb.channels * e;
    if (decoder->input_dim() != f)
      throw ShapeError("decoder '" + decoder->name() + "' expects input_dim " +
                       std::to_string(decoder->input_dim()) + " but the chain produces " +
                       std::to_string(*emb.channels) + " channels x " + std::to_string(e) +
                       " embed_dim = " + std::to_string(f));
  } else if (e == 0 || decoder->input_dim() % e != 0) {
    throw ShapeError("decoder '" + decoder->name() + "' input_dim " +
                     std::to_string(decoder->input_dim()) + " is not a multiple of embed_dim " +
                     std::to_string(e));
  }
}

std::shared_ptr<Component> Pipeline::lookup(ComponentKind kind, const std::string& name) const {
  auto it = registry_.find({kind, name});
  if (it == registry_.end()) {
    std::vector<std::string> known;
    for (const auto& [key, _] : registry_)
      if (key.first == kind) known.push_back(key.second);
    throw RegistryError("no " + std::string(to_string(kind)) + " named '" + name +
                        "' is registered (known: " + (known.empty() ? "none" : join(known)) + ")");
  }
  return it->second;
}

void Pipeline::register_component(std::shared_ptr<Component> component) {
  Key key{component->kind(), component->name()};
  if (registry_.count(key))
    throw RegistryError(std::string(to_string(key.first)) + " '" + key.second +
                        "' is already registered");
  registry_.emplace(std::move(key), std::move(component));
}

std::string Pipeline::add_encoder(std::shared_ptr<Encoder> encoder, bool load) {
  if (!encoder) throw ConfigError("add_encoder: null encoder");
  std::unique_lock lock(mutex_);
  if (load) validate_chain(encoder.get(), adapter_.get(), decoder_.get());
  register_component(encoder);
  if (load) encoder_ = encoder;
  return encoder->name();
}

std::string Pipeline::add_decoder(std::shared_ptr<Decoder> decoder, bool load) {
  if (!decoder) throw ConfigError("add_decoder: null decoder");
  std::unique_lock lock(mutex_);
  if (load) validate_chain(encoder_.get(), adapter_.get(), decoder.get());
  register_component(decoder);
  if (load) decoder_ = decoder;
  return decoder->name();
}

std::string Pipeline::add_adapter(const LoraConfig& cfg, std::string name, bool load) {
  std::shared_ptr<LoraAdapter> adapter = LoraAdapter::attach(*backbone_, cfg, std::move(name));
  return add_adapter(std::move(adapter), load);
}

std::string Pipeline::add_adapter(std::shared_ptr<LoraAdapter> adapter, bool load) {
  if (!adapter) throw ConfigError("add_adapter: null adapter");
  std::unique_lock lock(mutex_);
  adapter->check_compatible(*backbone_);
  if (load) validate_chain(encoder_.get(), adapter.get(), decoder_.get());
  register_component(adapter);
  if (load) adapter_ = adapter;
  return adapter->name();
}

std::string Pipeline::add_component(std::shared_ptr<Component> component, bool load) {
  if (!component) throw ConfigError("add_component: null component");
  switch (component->kind()) {
    case ComponentKind::Encoder:
      return add_encoder(std::dynamic_pointer_cast<Encoder>(component), load);
    case ComponentKind::Decoder:
      return add_decoder(std::dynamic_pointer_cast<Decoder>(component), load);
    case ComponentKind::Adapter:
      return add_adapter(std::dynamic_pointer_cast<LoraAdapter>(component), load);
    case ComponentKind::Backbone:
      break;
  }
  throw ConfigError("a pipeline holds exactly one backbone; construct a new pipeline instead");
}

std::string Pipeline::add_from_file(const std::filesystem::path& path, ComponentKind expected,
                                    bool load) {
  return add_component(load_component(path, expected), load);
}

double Pipeline::load_encoder(const std::string& name) {
  std::unique_lock lock(mutex_);
  return measure_swap(metrics_.get(), "encoder:" + name, [&] {
    auto enc = std::static_pointer_cast<Encoder>(lookup(ComponentKind::Encoder, name));
    validate_chain(enc.get(), adapter_.get(), decoder_.get());
    encoder_ = std::move(enc);
  }).wall_time_s;
}

double Pipeline::load_adapter(const std::string& name) {
  std::unique_lock lock(mutex_);
  return measure_swap(metrics_.get(), "adapter:" + name, [&] {
    auto ad = std::static_pointer_cast<LoraAdapter>(lookup(ComponentKind::Adapter, name));
    validate_chain(encoder_.get(), ad.get(), decoder_.get());
    adapter_ = std::move(ad);
  }).wall_time_s;
}

double Pipeline::load_decoder(const std::string& name) {
  std::unique_lock lock(mutex_);
  return measure_swap(metrics_.get(), "decoder:" + name, [&] {
    auto dec = std::static_pointer_cast<Decoder>(lookup(ComponentKind::Decoder, name));
    validate_chain(encoder_.get(), adapter_.get(), dec.get());
    decoder_ = std::move(dec);
  }).wall_time_s;
}

void Pipeline::unload_encoder() {
  std::unique_lock lock(mutex_);
  validate_chain(nullptr, adapter_.get(), decoder_.get());
  encoder_.reset();
}

void Pipeline::unload_adapter() {
  std::unique_lock lock(mutex_);
  adapter_.reset();
}

std::shared_ptr<Component> Pipeline::component(ComponentKind kind, const std::string& name) const {
  std::shared_lock lock(mutex_);
  return lookup(kind, name);
}

std::vector<std::string> Pipeline::registered(ComponentKind kind) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [key, _] : registry_)
    if (key.first == kind) out.push_back(key.second);
  return out;
}

Component* Pipeline::part(const std::string& name) const {
  if (name == "encoder") return encoder_.get();
  if (name == "backbone") return backbone_.get();
  if (name == "adapter") return adapter_.get();
  if (name == "decoder") return decoder_.get();
  throw ConfigError("unknown part '" + name + "' (expected one of " + join(part_names()) + ")");
}

ParameterSet Pipeline::trainable_parameters(const std::vector<std::string>& parts) {
  if (parts.empty())
    throw ConfigError("parts_to_train is empty (expected some of " + join(part_names()) + ")");
  std::set<std::string> seen;
  ParameterSet out;
  for (const auto& name : parts) {
    Component* c = part(name);
    if (!seen.insert(name).second) continue;
    if (!c) throw MissingComponentError("parts_to_train lists '" + name + "' but no " + name +
                                        " is active");
    out.extend(c->trainable_parameters(), name + ".");
  }
  return out;
}

Var Pipeline::forward_locked(const Var& values, const ForwardContext& ctx) {
  if (!decoder_) throw MissingComponentError("no decoder is active");
  EncodedSeries enc = encoder_ ? encoder_->run(values, ctx) : EncodedSeries{values, 1};
  EmbeddingTensor emb = backbone_->run(enc.values, ctx, adapter_.get());
  Var feats = decoder_->preprocess(emb);
  if (enc.group > 1) feats = mean_row_groups(feats, enc.group);
  return decoder_->forward(feats, ctx);
}

Var Pipeline::forward(const Var& values, const ForwardContext& ctx) {
  std::shared_lock lock(mutex_);
  return forward_locked(values, ctx);
}

Tensor Pipeline::forward_eval(const Tensor& values) {
  std::shared_lock lock(mutex_);
  return forward_locked(Var::view(values), ForwardContext::eval()).value();
}

Tensor Pipeline::features(const Tensor& values) {
  std::shared_lock lock(mutex_);
  if (!decoder_) throw MissingComponentError("no decoder is active");
  ForwardContext ctx = ForwardContext::eval();
  EncodedSeries enc = encoder_ ? encoder_->run(Var::view(values), ctx)
                               : EncodedSeries{Var::view(values), 1};
  EmbeddingTensor emb = backbone_->run(enc.values, ctx, adapter_.get());
  Var feats = decoder_->preprocess(emb);
  if (enc.group > 1) feats = mean_row_groups(feats, enc.group);
  return feats.value();
}

TrainReport Pipeline::train(std::span<const TimeSeriesBatch> data,
                            const std::vector<std::string>& parts, const TaskConfig& cfg) {
  cfg.validate();
  if (!decoder_) throw MissingComponentError("training needs an active decoder");
  if (!decoder_->supports(cfg.task))
    throw ConfigError("decoder '" + decoder_->name() + "' (" + decoder_->type() +
                      ") does not support " + std::string(to_string(cfg.task)));
  for (const auto& b : data)
    if (!b.targets()) throw InputError("training batch has no targets");

  TrainReport report;
  report.mode = decoder_->mode();
  auto start = std::chrono::steady_clock::now();

  if (report.mode == DecoderMode::Fit) {
    for (const auto& p : parts) {
      part(p);
      if (p != "decoder")
        throw ConfigError("decoder '" + decoder_->name() + "' is fitted in closed form and "
                          "cannot backpropagate into '" + p + "'; train it with parts [decoder]");
    }
    if (parts.empty())
      throw ConfigError("parts_to_train is empty (expected some of " + join(part_names()) + ")");
    RunMetrics m = time_phase(metrics_.get(), Phase::Finetune, "fit:" + decoder_->name(), [&] {
      std::vector<Tensor> feats, targets;
      for (const auto& b : data) {
        feats.push_back(features(b.values()));
        targets.push_back(*b.targets());
      }
      std::unique_lock lock(mutex_);
      mode_ = PipelineMode::Train;
      decoder_->fit(concat_rows(feats), concat_rows(targets));
      mode_ = PipelineMode::Eval;
    }, data.size());
    report.metrics.push_back(m);
    report.elapsed_s = seconds_since(start);
    return report;
  }

  ParameterSet params = trainable_parameters(parts);
  if (params.empty())
    throw ConfigError("nothing to train: parts [" + join(parts) +
                      "] have no trainable parameters");

  std::unique_lock lock(mutex_);
  mode_ = PipelineMode::Train;
  Adam adam(params, cfg.adam());
  try {
    RunMetrics outer = time_phase(metrics_.get(), Phase::Finetune, "train", [&] {
      for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0.0;
        RunMetrics em = time_phase(metrics_.get(), Phase::Finetune,
                                   "epoch " + std::to_string(epoch), [&] {
          for (const auto& b : data) {
            adam.zero_grad();
            Tape tape(params);
            ForwardContext ctx{&tape, true, cfg.seed, report.steps};
            Var out = forward_locked(Var::view(b.values()), ctx);
            Var loss = task_loss(out, *b.targets(), cfg);
            if (!std::isfinite(loss.value().item()))
              throw NumericalError("training loss became non-finite at epoch " +
                                   std::to_string(epoch));
            total += loss.value().item();
            tape.backward(loss);
            adam.step();
            ++report.steps;
          }
        }, data.size());
        report.metrics.push_back(em);
        report.epoch_losses.push_back(data.empty() ? 0.0 : total / data.size());
      }
    }, data.size() * cfg.epochs);
    report.metrics.push_back(outer);
  } catch (...) {
    mode_ = PipelineMode::Eval;
    throw;
  }
  mode_ = PipelineMode::Eval;
  report.elapsed_s = seconds_since(start);
  return report;
}

PredictResult Pipeline::predict(std::span<const TimeSeriesBatch> data, const TaskConfig& cfg) {
  std::shared_lock lock(mutex_);
  if (!decoder_) throw MissingComponentError("prediction needs an active decoder");
  if (!decoder_->fitted())
    throw StateError("decoder '" + decoder_->name() + "' has not been fitted");
  PredictResult result;
  std::vector<Tensor> preds, targets;
  bool all_targets = !data.empty();
  preds.reserve(data.size());
  targets.reserve(data.size());
  result.batch_latency_s.reserve(data.size());
  auto run = [&] {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& b = data[i];
      auto t0 = std::chrono::steady_clock::now();
      auto body = [&] {
        Var out = forward_locked(Var::view(b.values()), ForwardContext::eval());
        preds.push_back(decoder_->postprocess(out, cfg.task));
      };
      if (metrics_)
        time_phase(metrics_.get(), Phase::Predict, "batch " + std::to_string(i), body, 1);
      else
        body();
      result.batch_latency_s.push_back(seconds_since(t0));
      if (b.targets())
        targets.push_back(*b.targets());
      else
        all_targets = false;
    }
  };
  if (metrics_)
    time_phase(metrics_.get(), Phase::Predict, "predict", run, data.size());
  else
    run();
  result.predictions = concat_rows(preds);
  if (all_targets) result.targets = concat_rows(targets);
  return result;
}

void Pipeline::save_component(ComponentKind kind, const std::string& name,
                              const std::filesystem::path& path) const {
  std::shared_ptr<Component> c;
  if (kind == ComponentKind::Backbone) {
    if (backbone_->name() != name)
      throw RegistryError("backbone is named '" + backbone_->name() + "', not '" + name + "'");
    c = backbone_;
  } else {
    c = component(kind, name);
  }
  fmtk::save_component(*c, path);
}

}  // namespace fmtk
