#include "fmtk/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>

#include "fmtk/error.hpp"
#include "fmtk/factory.hpp"
#include "fmtk/ops.hpp"

namespace fmtk {

namespace {

// Re-raises toolkit errors with the config section that caused them,
// keeping the dynamic type so callers can still map it to an exit code.
template <typename F>
auto in_section(const std::string& where, F&& f) {
  auto wrap = [&](const std::exception& e) { return where + ": " + e.what(); };
  try {
    return f();
  } catch (const LayoutError& e) {
    throw LayoutError(wrap(e));
  } catch (const ShapeError& e) {
    throw ShapeError(wrap(e));
  } catch (const ConfigError& e) {
    throw ConfigError(wrap(e));
  } catch (const RegistryError& e) {
    throw RegistryError(wrap(e));
  } catch (const InputError& e) {
    throw InputError(wrap(e));
  } catch (const json::exception& e) {
    throw ConfigError(wrap(e));
  }
}

ComponentSpec parse_spec(const json& j, const char* section) {
  if (!j.is_object() || !j.contains("type"))
    throw ConfigError(std::string(section) + ": expected an object with a 'type' field");
  ComponentSpec s;
  s.type = j.at("type").get<std::string>();
  s.config = j.value("config", json::object());
  if (!s.config.is_object()) throw ConfigError(std::string(section) + ".config must be an object");
  s.name = j.value("name", s.type);
  return s;
}

double seconds(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

bool decoder_type_is_fit(const std::string& type) { return type != "mlp"; }

std::vector<TimeSeriesBatch> cycle_batches(const std::vector<TimeSeriesBatch>& src, std::size_t n) {
  std::vector<TimeSeriesBatch> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(src[i % src.size()]);
  return out;
}

ParameterSet manual_parameters(const std::vector<std::string>& parts, Pipeline& p) {
  ParameterSet out;
  for (const auto& name : parts) {
    Component* c = name == "encoder"    ? static_cast<Component*>(p.encoder())
                   : name == "backbone" ? static_cast<Component*>(&p.backbone())
                   : name == "adapter"  ? static_cast<Component*>(p.adapter())
                                        : static_cast<Component*>(p.decoder());
    out.extend(c->trainable_parameters(), name + ".");
  }
  return out;
}

std::vector<double> manual_train(Pipeline& p, std::span<const TimeSeriesBatch> data,
                                 const std::vector<std::string>& parts, const TaskConfig& cfg) {
  ParameterSet params = manual_parameters(parts, p);
  Adam adam(params, cfg.adam());
  std::vector<double> losses;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& b : data) {
      adam.zero_grad();
      Tape tape(params);
      ForwardContext ctx{&tape, true, cfg.seed, step};
      Var out = manual_forward(p.encoder(), p.backbone(), p.adapter(), *p.decoder(),
                               Var::view(b.values()), ctx);
      Var loss = task_loss(out, *b.targets(), cfg);
      total += loss.value().item();
      tape.backward(loss);
      adam.step();
      ++step;
    }
    losses.push_back(total / data.size());
  }
  return losses;
}

Tensor manual_predict(Pipeline& p, std::span<const TimeSeriesBatch> data, TaskKind task) {
  std::vector<Tensor> preds;
  preds.reserve(data.size());
  for (const auto& b : data) {
    Var out = manual_forward(p.encoder(), p.backbone(), p.adapter(), *p.decoder(),
                             Var::view(b.values()), ForwardContext::eval());
    preds.push_back(p.decoder()->postprocess(out, task));
  }
  return concat_rows(preds);
}

bool same_parameters(Pipeline& a, Pipeline& b, const std::vector<std::string>& parts) {
  ParameterSet pa = manual_parameters(parts, a), pb = manual_parameters(parts, b);
  if (pa.size() != pb.size()) return false;
  auto ib = pb.begin();
  for (auto ia = pa.begin(); ia != pa.end(); ++ia, ++ib)
    if (!bitwise_equal(ia->param->value, ib->param->value)) return false;
  return true;
}

void finish_phase(PhaseOverhead& ph, const std::vector<double>& pipe, const std::vector<double>& manual) {
  ph.pipeline_s = *std::min_element(pipe.begin(), pipe.end());
  ph.manual_s = *std::min_element(manual.begin(), manual.end());
  for (double t : pipe) ph.pipeline_mean_s += t / pipe.size();
  for (double t : manual) ph.manual_mean_s += t / manual.size();
}

}  // namespace

json ComponentSpec::to_json() const { return {{"type", type}, {"config", config}, {"name", name}}; }

json ExperimentConfig::to_json() const {
  json j{{"name", name},
         {"seed", seed},
         {"backbone", backbone.to_json()},
         {"decoder", decoder.to_json()},
         {"task", task.to_json()},
         {"parts_to_train", parts_to_train},
         {"dataset", dataset.to_json()},
         {"metrics", metrics}};
  if (encoder) j["encoder"] = encoder->to_json();
  if (adapter) {
    json a = adapter->to_json();
    a["name"] = adapter_name;
    j["adapter"] = a;
  }
  return j;
}

ExperimentConfig ExperimentConfig::from_json(json j, std::optional<std::uint64_t> seed) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  if (seed) j["seed"] = *seed;
  ExperimentConfig c;
  c.name = in_section("name", [&] { return j.value("name", c.name); });
  c.seed = in_section("seed", [&] { return j.value("seed", std::uint64_t{0}); });
  c.backbone = in_section("backbone", [&] {
    return BackboneConfig::from_json(j.value("backbone", json::object()));
  });
  if (!j.contains("dataset")) throw ConfigError("dataset: section is required");
  c.dataset = in_section("dataset", [&] { return DatasetSpec::from_json(j.at("dataset")); });

  c.task = in_section("task", [&] {
    json t = j.value("task", json::object());
    if (!t.contains("task")) t["task"] = std::string(to_string(c.dataset.task()));
    if (!t.contains("seed")) t["seed"] = c.seed;
    TaskConfig tc = TaskConfig::from_json(t);
    if (tc.task != c.dataset.task())
      throw ConfigError("task '" + std::string(to_string(tc.task)) + "' does not match dataset '" +
                        c.dataset.generator + "' (" + std::string(to_string(c.dataset.task())) + ")");
    return tc;
  });

  SeriesShape series{c.dataset.channels, c.dataset.length};
  if (j.contains("encoder") && !j.at("encoder").is_null()) {
    c.encoder = in_section("encoder", [&] { return parse_spec(j.at("encoder"), "encoder"); });
    if (c.encoder->type == "linear_channel_combiner" && !c.encoder->config.contains("num_channels"))
      c.encoder->config["num_channels"] = c.dataset.channels;
    series = in_section("encoder", [&] {
      auto enc = std::static_pointer_cast<Encoder>(
          make_component(ComponentKind::Encoder, c.encoder->type, c.encoder->config, c.encoder->name));
      return enc->output_shape(series);
    });
  }

  if (j.contains("adapter") && !j.at("adapter").is_null()) {
    in_section("adapter", [&] {
      json a = j.at("adapter");
      if (!a.is_object()) throw ConfigError("expected an object");
      c.adapter_name = a.value("name", c.adapter_name);
      if (!a.contains("seed")) a["seed"] = c.seed;
      c.adapter = LoraConfig::from_json(a);
    });
  }

  if (!j.contains("decoder")) throw ConfigError("decoder: section is required");
  c.decoder = in_section("decoder", [&] {
    ComponentSpec d = parse_spec(j.at("decoder"), "decoder");
    json& cfg = d.config;
    if (!cfg.contains("input_dim") && series.channels)
      cfg["input_dim"] = *series.channels * c.backbone.embed_dim;
    if (d.type == "mlp") {
      if (!cfg.contains("output_dim")) cfg["output_dim"] = c.dataset.output_dim();
      if (!cfg.contains("hidden_dim")) cfg["hidden_dim"] = 64;
      if (!cfg.contains("seed")) cfg["seed"] = c.seed;
    } else if (d.type == "ridge") {
      if (!cfg.contains("output_dim")) cfg["output_dim"] = c.dataset.output_dim();
    } else if (!cfg.contains("num_classes")) {
      cfg["num_classes"] = c.dataset.output_dim();
    }
    return d;
  });

  c.parts_to_train = in_section("parts_to_train", [&] {
    return j.value("parts_to_train", c.parts_to_train);
  });
  c.metrics = in_section("metrics", [&] { return j.value("metrics", true); });
  c.output_dir = in_section("output_dir", [&] { return j.value("output_dir", std::string()); });
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return in_section(path.string(), [&] { return from_json(std::move(j), seed); });
}

std::unique_ptr<Pipeline> build_pipeline(const ExperimentConfig& cfg) {
  auto backbone = in_section("backbone", [&] { return std::make_shared<ReferenceBackbone>(cfg.backbone); });
  auto pipe = std::make_unique<Pipeline>(backbone, SeriesShape{cfg.dataset.channels, cfg.dataset.length});
  if (cfg.encoder) {
    in_section("encoder", [&] {
      pipe->add_component(make_component(ComponentKind::Encoder, cfg.encoder->type,
                                         cfg.encoder->config, cfg.encoder->name));
    });
  }
  if (cfg.adapter) in_section("adapter", [&] { pipe->add_adapter(*cfg.adapter, cfg.adapter_name); });
  in_section("decoder", [&] {
    pipe->add_component(make_component(ComponentKind::Decoder, cfg.decoder.type, cfg.decoder.config,
                                       cfg.decoder.name));
  });
  return pipe;
}

double accuracy(const Tensor& predicted, const Tensor& labels) {
  if (predicted.size() != labels.size())
    throw ShapeError("accuracy: " + to_string(predicted.shape()) + " vs " + to_string(labels.shape()));
  if (labels.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double mean_absolute_error(const Tensor& predictions, const Tensor& targets) {
  if (predictions.size() != targets.size())
    throw ShapeError("mae: " + to_string(predictions.shape()) + " vs " + to_string(targets.shape()));
  if (targets.size() == 0) return 0.0;
  return (predictions.array() - targets.array()).abs().mean();
}

std::string tensor_digest(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = reinterpret_cast<const unsigned char*>(t.data());
  for (std::size_t i = 0; i < t.bytes(); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json ExperimentResult::results_json() const {
  return {{"config", config},
          {"metric", {{"name", metric_name}, {"value", metric_value}}},
          {"train", {{"mode", train.mode == DecoderMode::Fit ? "fit" : "gradient"},
                     {"epoch_losses", train.epoch_losses},
                     {"steps", train.steps}}},
          {"predictions", {{"count", predict.predictions.rank() ? predict.predictions.dim(0) : 0},
                           {"shape", predict.predictions.shape()},
                           {"digest", tensor_digest(predict.predictions)}}}};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult r;
  r.config = cfg.to_json();
  auto pipe = build_pipeline(cfg);
  std::shared_ptr<MetricsCollector> collector;
  if (cfg.metrics) {
    collector = std::make_shared<MetricsCollector>();
    pipe->set_metrics(collector);
  }
  Dataset data = generate_dataset(cfg.dataset, cfg.seed);
  auto train = make_batches(data.train_x, data.train_y, cfg.task.batch_size);
  auto test = make_batches(data.test_x, data.test_y, cfg.task.batch_size);

  r.train = in_section("parts_to_train", [&] { return pipe->train(train, cfg.parts_to_train, cfg.task); });
  r.predict = pipe->predict(test, cfg.task);
  if (cfg.task.task == TaskKind::Classification) {
    r.metric_name = "accuracy";
    r.metric_value = accuracy(r.predict.predictions, *r.predict.targets);
  } else {
    r.metric_name = "mae";
    r.metric_value = mean_absolute_error(r.predict.predictions, *r.predict.targets);
  }
  if (collector) r.metrics = collector->records();

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream out(cfg.output_dir / "results.json");
    out << r.results_json().dump(2) << '\n';
    if (!out) throw Error("failed writing " + (cfg.output_dir / "results.json").string());
    if (collector) {
      export_metrics(r.metrics, MetricsFormat::Jsonl, cfg.output_dir / "metrics.jsonl");
      export_metrics(r.metrics, MetricsFormat::Csv, cfg.output_dir / "metrics.csv");
    }
  }
  return r;
}

const char* const kBenchCsvHeader =
    "task,backbone,encoder,adapter,decoder,metric_name,metric_value,seed,"
    "phase,wall_time_s,peak_mem_bytes,resident_bytes,energy_j,batch_count,timestamp,failed";

std::vector<BenchRow> run_bench(const json& suite, const std::filesystem::path& base_dir,
                                const std::filesystem::path& output_dir,
                                std::optional<std::uint64_t> seed, std::optional<bool> metrics) {
  if (!suite.is_object() || !suite.contains("experiments") || !suite.at("experiments").is_array())
    throw ConfigError("bench suite needs an 'experiments' array");
  std::vector<BenchRow> rows;
  std::size_t index = 0;
  for (const auto& entry : suite.at("experiments")) {
    ExperimentConfig cfg;
    if (entry.is_string()) {
      std::filesystem::path p = entry.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      cfg = ExperimentConfig::load(p, seed);
    } else {
      cfg = in_section("experiments[" + std::to_string(index) + "]",
                       [&] { return ExperimentConfig::from_json(entry, seed); });
    }
    if (metrics) cfg.metrics = *metrics;
    cfg.output_dir = output_dir / (std::to_string(index) + "_" + cfg.name);
    rows.push_back({cfg, run_experiment(cfg)});
    ++index;
  }
  write_bench_csv(rows, output_dir / "bench.csv");
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << kBenchCsvHeader << '\n';
  char value[32];
  for (const auto& row : rows) {
    const auto& c = row.config;
    std::snprintf(value, sizeof value, "%.17g", row.result.metric_value);
    out << to_string(c.task.task) << ',' << c.backbone.embed_dim << "d" << c.backbone.num_layers
        << "l_p" << c.backbone.patch_len << ',' << (c.encoder ? c.encoder->type : "none") << ','
        << (c.adapter ? "lora_r" + std::to_string(c.adapter->r) : "none") << ',' << c.decoder.type
        << ',' << row.result.metric_name << ',' << value << ',' << c.seed << ',';
    // The run's top-level predict phase stands for the row.
    auto it = std::find_if(row.result.metrics.begin(), row.result.metrics.end(), [](const RunMetrics& m) {
      return m.phase == Phase::Predict && m.depth == 0;
    });
    if (it != row.result.metrics.end())
      out << metrics_csv_row(*it);
    else
      out << ",,,,,,,";
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

Var manual_forward(Encoder* encoder, Backbone& backbone, LoraAdapter* adapter, Decoder& decoder,
                   const Var& values, const ForwardContext& ctx) {
  EncodedSeries enc = encoder ? encoder->run(values, ctx) : EncodedSeries{values, 1};
  EmbeddingTensor emb = backbone.run(enc.values, ctx, adapter);
  Var feats = decoder.preprocess(emb);
  if (enc.group > 1) feats = mean_row_groups(feats, enc.group);
  return decoder.forward(feats, ctx);
}

json OverheadReport::to_json() const {
  auto phase = [](const PhaseOverhead& p) {
    return json{{"pipeline_s", p.pipeline_s},   {"manual_s", p.manual_s},
                {"pipeline_mean_s", p.pipeline_mean_s}, {"manual_mean_s", p.manual_mean_s},
                {"ratio", p.ratio()}};
  };
  return {{"finetune", phase(finetune)},
          {"predict", phase(predict)},
          {"finetune_bitwise_equal", finetune_bitwise_equal},
          {"predict_bitwise_equal", predict_bitwise_equal}};
}

OverheadReport compare_overhead(const ExperimentConfig& cfg, const OverheadOptions& options) {
  if (decoder_type_is_fit(cfg.decoder.type))
    throw ConfigError("compare needs a gradient-mode decoder (mlp), got '" + cfg.decoder.type + "'");
  if (options.repetitions == 0 || options.predict_batches == 0)
    throw ConfigError("compare needs at least one repetition and one batch");
  ExperimentConfig quiet = cfg;
  quiet.metrics = false;
  Dataset data = generate_dataset(cfg.dataset, cfg.seed);
  auto train = make_batches(data.train_x, data.train_y, cfg.task.batch_size);
  auto test = cycle_batches(make_batches(data.test_x, data.test_y, cfg.task.batch_size),
                            options.predict_batches);

  OverheadReport report;
  std::vector<double> pipe_t, manual_t;
  for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
    auto a = build_pipeline(quiet);
    auto b = build_pipeline(quiet);
    std::vector<double> la, lb;
    auto run_pipe = [&] {
      auto t0 = std::chrono::steady_clock::now();
      la = a->train(train, cfg.parts_to_train, cfg.task).epoch_losses;
      pipe_t.push_back(seconds(t0, std::chrono::steady_clock::now()));
    };
    auto run_manual = [&] {
      auto t0 = std::chrono::steady_clock::now();
      lb = manual_train(*b, train, cfg.parts_to_train, cfg.task);
      manual_t.push_back(seconds(t0, std::chrono::steady_clock::now()));
    };
    if (rep % 2 == 0) {
      run_pipe();
      run_manual();
    } else {
      run_manual();
      run_pipe();
    }
    if (la != lb || !same_parameters(*a, *b, cfg.parts_to_train))
      throw NumericalError("pipeline and manual training diverged at repetition " + std::to_string(rep));
  }
  report.finetune_bitwise_equal = true;
  finish_phase(report.finetune, pipe_t, manual_t);

  auto p = build_pipeline(quiet);
  p->train(train, cfg.parts_to_train, cfg.task);
  pipe_t.clear();
  manual_t.clear();
  Tensor reference = manual_predict(*p, test, cfg.task.task);
  // Alternate the two paths over short chunks so slow drift in machine speed
  // lands on both sides equally.
  constexpr std::size_t kChunk = 50;
  const std::span<const TimeSeriesBatch> all(test);
  for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
    double pipe_s = 0.0, manual_s = 0.0;
    std::vector<Tensor> pp, mp;
    for (std::size_t begin = 0, chunk = 0; begin < all.size(); begin += kChunk, ++chunk) {
      auto part = all.subspan(begin, std::min(kChunk, all.size() - begin));
      auto run_pipe = [&] {
        auto t0 = std::chrono::steady_clock::now();
        pp.push_back(p->predict(part, cfg.task).predictions);
        pipe_s += seconds(t0, std::chrono::steady_clock::now());
      };
      auto run_manual = [&] {
        auto t0 = std::chrono::steady_clock::now();
        mp.push_back(manual_predict(*p, part, cfg.task.task));
        manual_s += seconds(t0, std::chrono::steady_clock::now());
      };
      if ((rep + chunk) % 2 == 0) {
        run_pipe();
        run_manual();
      } else {
        run_manual();
        run_pipe();
      }
    }
    pipe_t.push_back(pipe_s);
    manual_t.push_back(manual_s);
    Tensor pipe_all = concat_rows(pp), manual_all = concat_rows(mp);
    if (!bitwise_equal(pipe_all, manual_all) || !bitwise_equal(pipe_all, reference))
      throw NumericalError("pipeline and manual predictions differ at repetition " + std::to_string(rep));
  }
  report.predict_bitwise_equal = true;
  finish_phase(report.predict, pipe_t, manual_t);
  return report;
}

}  // namespace fmtk
