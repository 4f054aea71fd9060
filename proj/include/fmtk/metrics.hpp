#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fmtk/memory.hpp"

namespace fmtk {

enum class Phase { Finetune, Predict, LoadComponent, Swap };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view name);

struct RunMetrics {
  Phase phase = Phase::Predict;
  std::string label;
  std::uint64_t id = 0;
  std::optional<std::uint64_t> parent;
  std::size_t depth = 0;
  double wall_time_s = 0.0;
  // High-water mark of tracked tensor bytes during the phase.
  std::size_t peak_mem_bytes = 0;
  std::optional<std::size_t> resident_bytes;
  std::optional<double> energy_j;
  std::size_t batch_count = 0;
  // Wall-clock seconds since the Unix epoch at phase start; ordering only.
  double timestamp = 0.0;
  bool failed = false;

  bool operator==(const RunMetrics&) const = default;
};

// Cumulative energy counter. Readings never decrease; an unavailable probe
// produces no energy fields at all.
class EnergyProbe {
 public:
  virtual ~EnergyProbe() = default;
  virtual bool available() const = 0;
  virtual std::optional<double> read() = 0;
};

class NullEnergyProbe final : public EnergyProbe {
 public:
  bool available() const override { return false; }
  std::optional<double> read() override { return std::nullopt; }
};

// Reads a cumulative counter from a text file and multiplies it by `scale`
// to get joules (e.g. a powercap energy_uj file with scale 1e-6, or a file
// written by a test).
class FileEnergyProbe final : public EnergyProbe {
 public:
  explicit FileEnergyProbe(std::filesystem::path path, double scale = 1.0)
      : path_(std::move(path)), scale_(scale) {}

  bool available() const override;
  std::optional<double> read() override;

 private:
  std::filesystem::path path_;
  double scale_;
  double last_ = 0.0;
};

// Append-only, thread-safe record sink.
class MetricsCollector {
 public:
  explicit MetricsCollector(std::shared_ptr<EnergyProbe> probe = nullptr,
                            bool sample_resident = true)
      : probe_(std::move(probe)), sample_resident_(sample_resident) {}

  std::uint64_t next_id() { return next_id_.fetch_add(1) + 1; }
  void append(RunMetrics record);
  std::vector<RunMetrics> records() const;
  void clear();

  EnergyProbe* probe() const noexcept { return probe_.get(); }
  bool sample_resident() const noexcept { return sample_resident_; }

 private:
  std::shared_ptr<EnergyProbe> probe_;
  bool sample_resident_;
  std::atomic<std::uint64_t> next_id_{0};
  mutable std::mutex mutex_;
  std::vector<RunMetrics> records_;
};

namespace detail {

// Open phase on the current thread. Inner phases nest under the innermost
// open one; resident memory and energy are sampled for top-level phases only.
class PhaseRecorder {
 public:
  PhaseRecorder(MetricsCollector* sink, Phase phase, std::string label);
  PhaseRecorder(const PhaseRecorder&) = delete;
  PhaseRecorder& operator=(const PhaseRecorder&) = delete;
  ~PhaseRecorder();

  RunMetrics finish(bool failed, std::size_t batch_count);

 private:
  MetricsCollector* sink_;
  RunMetrics record_;
  std::chrono::steady_clock::time_point start_;
  std::optional<double> energy_start_;
  PeakMemoryScope memory_;
  bool open_ = true;
};

}  // namespace detail

// Runs thunk inside a timed, memory-tracked phase. Returns (result, record)
// or just the record for void thunks. A throwing thunk still emits a record
// with failed = true before the exception propagates. `sink` may be null,
// in which case the record is only returned.
template <typename Thunk>
auto time_phase(MetricsCollector* sink, Phase phase, std::string label, Thunk&& thunk,
                std::size_t batch_count = 0) {
  detail::PhaseRecorder rec(sink, phase, std::move(label));
  using Result = std::invoke_result_t<Thunk&>;
  try {
    if constexpr (std::is_void_v<Result>) {
      thunk();
      return rec.finish(false, batch_count);
    } else {
      Result r = thunk();
      RunMetrics m = rec.finish(false, batch_count);
      return std::pair<Result, RunMetrics>(std::move(r), std::move(m));
    }
  } catch (...) {
    rec.finish(true, batch_count);
    throw;
  }
}

// Same record as time_phase; named for call sites that care about memory.
template <typename Thunk>
RunMetrics track_peak_memory(MetricsCollector* sink, Phase phase, std::string label, Thunk&& thunk) {
  return time_phase(sink, phase, std::move(label), [&] { thunk(); });
}

// Times only the swap itself; failures are recorded then rethrown.
template <typename Thunk>
RunMetrics measure_swap(MetricsCollector* sink, std::string label, Thunk&& swap) {
  return time_phase(sink, Phase::Swap, std::move(label), [&] { swap(); });
}

enum class MetricsFormat { Jsonl, Csv };

void export_metrics(const std::vector<RunMetrics>& records, MetricsFormat format,
                    const std::filesystem::path& path);
std::vector<RunMetrics> read_metrics_jsonl(const std::filesystem::path& path);

// Fixed CSV header: phase,wall_time_s,peak_mem_bytes,resident_bytes,energy_j,
// batch_count,timestamp,failed
extern const char* const kMetricsCsvHeader;

// One CSV line (no newline) in kMetricsCsvHeader column order.
std::string metrics_csv_row(const RunMetrics& record);

}  // namespace fmtk
