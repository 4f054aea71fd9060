#include "fmtk/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "fmtk/error.hpp"

namespace fmtk {
namespace {

thread_local std::vector<std::uint64_t> open_phases;

double unix_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* const kMetricsCsvHeader =
    "phase,wall_time_s,peak_mem_bytes,resident_bytes,energy_j,batch_count,timestamp,failed";

std::string metrics_csv_row(const RunMetrics& r) {
  std::ostringstream out;
  out << to_string(r.phase) << ',' << format_double(r.wall_time_s) << ',' << r.peak_mem_bytes << ','
      << (r.resident_bytes ? std::to_string(*r.resident_bytes) : "") << ','
      << (r.energy_j ? format_double(*r.energy_j) : "") << ',' << r.batch_count << ','
      << format_double(r.timestamp) << ',' << (r.failed ? "true" : "false");
  return out.str();
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::Finetune: return "finetune";
    case Phase::Predict: return "predict";
    case Phase::LoadComponent: return "load_component";
    case Phase::Swap: return "swap";
  }
  return "unknown";
}

Phase parse_phase(std::string_view name) {
  if (name == "finetune") return Phase::Finetune;
  if (name == "predict") return Phase::Predict;
  if (name == "load_component") return Phase::LoadComponent;
  if (name == "swap") return Phase::Swap;
  throw FormatError("unknown metrics phase '" + std::string(name) + "'");
}

bool FileEnergyProbe::available() const { return std::filesystem::is_regular_file(path_); }

std::optional<double> FileEnergyProbe::read() {
  std::ifstream in(path_);
  double raw = 0.0;
  if (!(in >> raw)) return std::nullopt;
  last_ = std::max(last_, raw * scale_);
  return last_;
}

void MetricsCollector::append(RunMetrics record) {
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(record));
}

std::vector<RunMetrics> MetricsCollector::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

void MetricsCollector::clear() {
  std::lock_guard lock(mutex_);
  records_.clear();
}

namespace detail {

PhaseRecorder::PhaseRecorder(MetricsCollector* sink, Phase phase, std::string label)
    : sink_(sink) {
  record_.phase = phase;
  record_.label = std::move(label);
  record_.id = sink_ ? sink_->next_id() : 0;
  if (!open_phases.empty()) record_.parent = open_phases.back();
  record_.depth = open_phases.size();
  record_.timestamp = unix_seconds();
  open_phases.push_back(record_.id);
  if (record_.depth == 0 && sink_ && sink_->probe() && sink_->probe()->available()) {
    energy_start_ = sink_->probe()->read();
  }
  start_ = std::chrono::steady_clock::now();
}

PhaseRecorder::~PhaseRecorder() {
  if (open_) finish(true, 0);
}

RunMetrics PhaseRecorder::finish(bool failed, std::size_t batch_count) {
  if (!open_) return record_;
  record_.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  record_.peak_mem_bytes = memory_.finish();
  open_ = false;
  open_phases.pop_back();
  record_.failed = failed;
  record_.batch_count = batch_count;
  if (record_.depth == 0 && sink_) {
    if (sink_->sample_resident()) {
      if (const std::size_t rss = resident_set_bytes()) record_.resident_bytes = rss;
    }
    if (energy_start_) {
      if (auto end = sink_->probe()->read()) record_.energy_j = *end - *energy_start_;
    }
  }
  if (sink_) sink_->append(record_);
  return record_;
}

}  // namespace detail

void export_metrics(const std::vector<RunMetrics>& records, MetricsFormat format,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open metrics file " + path.string() + " for writing");
  if (format == MetricsFormat::Jsonl) {
    for (const auto& r : records) {
      nlohmann::ordered_json j;
      j["phase"] = to_string(r.phase);
      j["label"] = r.label;
      j["id"] = r.id;
      if (r.parent) j["parent"] = *r.parent;
      j["depth"] = r.depth;
      j["wall_time_s"] = r.wall_time_s;
      j["peak_mem_bytes"] = r.peak_mem_bytes;
      if (r.resident_bytes) j["resident_bytes"] = *r.resident_bytes;
      if (r.energy_j) j["energy_j"] = *r.energy_j;
      j["batch_count"] = r.batch_count;
      j["timestamp"] = r.timestamp;
      j["failed"] = r.failed;
      out << j.dump() << '\n';
    }
  } else {
    out << kMetricsCsvHeader << '\n';
    for (const auto& r : records) out << metrics_csv_row(r) << '\n';
  }
  out.flush();
  if (!out) throw Error("failed writing metrics file " + path.string());
}

std::vector<RunMetrics> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open metrics file " + path.string());
  std::vector<RunMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    RunMetrics r;
    r.phase = parse_phase(j.at("phase").get<std::string>());
    r.label = j.at("label").get<std::string>();
    r.id = j.at("id").get<std::uint64_t>();
    if (j.contains("parent")) r.parent = j.at("parent").get<std::uint64_t>();
    r.depth = j.at("depth").get<std::size_t>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.peak_mem_bytes = j.at("peak_mem_bytes").get<std::size_t>();
    if (j.contains("resident_bytes")) r.resident_bytes = j.at("resident_bytes").get<std::size_t>();
    if (j.contains("energy_j")) r.energy_j = j.at("energy_j").get<double>();
    r.batch_count = j.at("batch_count").get<std::size_t>();
    r.timestamp = j.at("timestamp").get<double>();
    r.failed = j.at("failed").get<bool>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fmtk
