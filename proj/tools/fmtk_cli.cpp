#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fmtk/error.hpp"
#include "fmtk/experiment.hpp"
#include "fmtk/factory.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3 };

std::optional<bool> metrics_flag(const std::string& value) {
  if (value.empty()) return std::nullopt;
  return value == "on";
}

int run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& output,
        const std::string& metrics) {
  auto cfg = fmtk::ExperimentConfig::load(config, seed);
  if (!output.empty()) cfg.output_dir = output;
  if (auto m = metrics_flag(metrics)) cfg.metrics = *m;
  auto result = fmtk::run_experiment(cfg);
  std::cout << cfg.name << ' ' << result.metric_name << ' ' << result.metric_value << '\n';
  if (!cfg.output_dir.empty()) std::cout << "results: " << (cfg.output_dir / "results.json").string() << '\n';
  return kOk;
}

int bench(const std::string& suite_path, std::optional<std::uint64_t> seed, const std::string& output,
          const std::string& metrics) {
  std::ifstream in(suite_path);
  if (!in) throw fmtk::ConfigError("cannot open suite " + suite_path);
  fmtk::json suite;
  try {
    suite = fmtk::json::parse(in);
  } catch (const fmtk::json::exception& e) {
    throw fmtk::ConfigError(suite_path + ": " + e.what());
  }
  std::filesystem::path base = std::filesystem::path(suite_path).parent_path();
  std::filesystem::path out = output.empty() ? std::filesystem::path(suite.value("output_dir", "bench_out"))
                                            : std::filesystem::path(output);
  auto rows = fmtk::run_bench(suite, base, out, seed, metrics_flag(metrics));
  for (const auto& r : rows)
    std::cout << r.config.name << ' ' << r.result.metric_name << ' ' << r.result.metric_value << '\n';
  std::cout << "table: " << (out / "bench.csv").string() << '\n';
  return kOk;
}

int compare(const std::string& config, std::optional<std::uint64_t> seed, std::size_t reps,
            std::size_t batches) {
  auto cfg = fmtk::ExperimentConfig::load(config, seed);
  auto report = fmtk::compare_overhead(cfg, {reps, batches});
  std::cout << report.to_json().dump(2) << '\n';
  return kOk;
}

int list() {
  for (const auto& t : fmtk::component_types())
    std::cout << fmtk::to_string(t.kind) << '\t' << t.type << '\t' << t.summary << '\n';
  return kOk;
}

int validate(const std::string& config) {
  auto cfg = fmtk::ExperimentConfig::load(config);
  fmtk::build_pipeline(cfg);
  std::cout << "ok: " << cfg.name << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmtk: compose, train and benchmark time-series model pipelines", "fmtk"};
  app.require_subcommand(1);

  std::string config, output, metrics, suite;
  std::optional<std::uint64_t> seed;
  std::size_t reps = 5, batches = 1000;

  auto* run_cmd = app.add_subcommand("run", "run one experiment");
  run_cmd->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", seed, "override the config seed");
  run_cmd->add_option("--output", output, "output directory");
  run_cmd->add_option("--metrics", metrics, "metrics collection")->check(CLI::IsMember({"on", "off"}));

  auto* bench_cmd = app.add_subcommand("bench", "run a suite and write a combined CSV table");
  bench_cmd->add_option("--suite,--config", suite, "suite JSON")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--seed", seed, "override every experiment seed");
  bench_cmd->add_option("--output", output, "output directory");
  bench_cmd->add_option("--metrics", metrics, "metrics collection")->check(CLI::IsMember({"on", "off"}));

  auto* compare_cmd = app.add_subcommand("compare", "pipeline vs hand-chained overhead");
  compare_cmd->add_option("--config", config, "experiment JSON with an mlp decoder")
      ->required()
      ->check(CLI::ExistingFile);
  compare_cmd->add_option("--seed", seed, "override the config seed");
  compare_cmd->add_option("--reps", reps, "repetitions per path")->check(CLI::PositiveNumber);
  compare_cmd->add_option("--batches", batches, "predict batches")->check(CLI::PositiveNumber);

  auto* list_cmd = app.add_subcommand("list", "list component types");

  auto* validate_cmd = app.add_subcommand("validate", "shape-check a config without running it");
  validate_cmd->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    if (code == 0) return kOk;
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (run_cmd->parsed()) return run(config, seed, output, metrics);
    if (bench_cmd->parsed()) return bench(suite, seed, output, metrics);
    if (compare_cmd->parsed()) return compare(config, seed, reps, batches);
    if (list_cmd->parsed()) return list();
    if (validate_cmd->parsed()) return validate(config);
  } catch (const fmtk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fmtk::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kConfig;
  } catch (const fmtk::RegistryError& e) {
    std::cerr << "registry error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  std::cerr << app.help();
  return kUsage;
}
