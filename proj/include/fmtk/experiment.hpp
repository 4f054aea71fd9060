#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fmtk/datasets.hpp"
#include "fmtk/pipeline.hpp"

namespace fmtk {

struct ComponentSpec {
  std::string type;
  json config = json::object();
  std::string name;

  json to_json() const;
};

// One experiment, fully determined by this document and `seed`. Missing
// decoder dims are derived from the chain (input_dim = C'*E) and the task
// (output_dim / num_classes); missing decoder/adapter seeds follow `seed`.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  std::optional<ComponentSpec> encoder;
  std::optional<LoraConfig> adapter;
  std::string adapter_name = "lora";
  ComponentSpec decoder;
  TaskConfig task;
  std::vector<std::string> parts_to_train{"decoder"};
  DatasetSpec dataset;
  bool metrics = true;
  std::filesystem::path output_dir;

  // Resolved form with canonical key order.
  json to_json() const;
  static ExperimentConfig from_json(json j, std::optional<std::uint64_t> seed = std::nullopt);
  static ExperimentConfig load(const std::filesystem::path& path,
                               std::optional<std::uint64_t> seed = std::nullopt);
};

// Builds the backbone and every configured component and activates them,
// which runs the symbolic shape checks. No data is touched.
std::unique_ptr<Pipeline> build_pipeline(const ExperimentConfig& cfg);

double accuracy(const Tensor& predicted_labels, const Tensor& labels);
double mean_absolute_error(const Tensor& predictions, const Tensor& targets);
// Hex FNV-1a digest of the raw tensor bytes.
std::string tensor_digest(const Tensor& t);

struct ExperimentResult {
  std::string metric_name;
  double metric_value = 0.0;
  TrainReport train;
  PredictResult predict;
  std::vector<RunMetrics> metrics;
  json config;

  // Everything except timings; identical across runs with the same seed.
  json results_json() const;
};

// Writes results.json (and metrics.jsonl / metrics.csv when metrics are on)
// into cfg.output_dir unless it is empty.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

extern const char* const kBenchCsvHeader;

struct BenchRow {
  ExperimentConfig config;
  ExperimentResult result;
};

// Suite document: {"name": ..., "experiments": [path or inline config, ...]}.
// Relative paths resolve against `base_dir`. Each experiment writes into
// output_dir/<index>_<name>; the combined table goes to output_dir/bench.csv.
std::vector<BenchRow> run_bench(const json& suite, const std::filesystem::path& base_dir,
                                const std::filesystem::path& output_dir,
                                std::optional<std::uint64_t> seed, std::optional<bool> metrics);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path);

struct OverheadOptions {
  std::size_t repetitions = 5;
  std::size_t predict_batches = 1000;
};

struct PhaseOverhead {
  double pipeline_s = 0.0;  // best of the repetitions
  double manual_s = 0.0;
  double pipeline_mean_s = 0.0;
  double manual_mean_s = 0.0;
  double ratio() const { return manual_s > 0.0 ? pipeline_s / manual_s : 0.0; }
};

struct OverheadReport {
  PhaseOverhead finetune;
  PhaseOverhead predict;
  bool finetune_bitwise_equal = false;
  bool predict_bitwise_equal = false;

  json to_json() const;
};

// Pipeline-mediated vs hand-chained execution on identical seeds and data.
// Throws NumericalError when the two paths disagree in any bit.
OverheadReport compare_overhead(const ExperimentConfig& cfg, const OverheadOptions& options = {});

// Decoder output through explicitly chained components, no pipeline.
Var manual_forward(Encoder* encoder, Backbone& backbone, LoraAdapter* adapter, Decoder& decoder,
                   const Var& values, const ForwardContext& ctx);

}  // namespace fmtk
