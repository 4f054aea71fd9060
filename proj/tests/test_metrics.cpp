#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "fmtk/error.hpp"
#include "fmtk/metrics.hpp"
#include "fmtk/tensor.hpp"

using namespace fmtk;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fmtk_metrics_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::string> lines_of(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("empty thunk is fast") {
  RunMetrics r = time_phase(nullptr, Phase::Predict, "noop", [] {});
  CHECK(r.wall_time_s >= 0.0);
  CHECK(r.wall_time_s < 0.01);
  CHECK(!r.failed);
}

TEST_CASE("sleep is timed within 20 percent") {
  RunMetrics r = time_phase(nullptr, Phase::Predict, "sleep",
                            [] { std::this_thread::sleep_for(std::chrono::milliseconds(100)); });
  CHECK(r.wall_time_s >= 0.08);
  CHECK(r.wall_time_s <= 0.12);
}

TEST_CASE("returned values pass through") {
  MetricsCollector sink;
  auto [value, rec] = time_phase(&sink, Phase::Finetune, "v", [] { return 42; }, 3);
  CHECK(value == 42);
  CHECK(rec.batch_count == 3);
  REQUIRE(sink.records().size() == 1);
  CHECK(sink.records()[0] == rec);
}

TEST_CASE("throwing thunk is recorded as failed") {
  MetricsCollector sink;
  CHECK_THROWS_AS(time_phase(&sink, Phase::Predict, "boom", [] { throw std::runtime_error("x"); }),
                  std::runtime_error);
  auto recs = sink.records();
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].failed);
  CHECK(recs[0].label == "boom");
  RunMetrics after = time_phase(&sink, Phase::Predict, "ok", [] {});
  CHECK(after.depth == 0);
}

TEST_CASE("peak memory bounds a known allocation") {
  const std::size_t eight_mb = 8u << 20;
  std::size_t baseline = AllocationTracker::instance().live_bytes();
  RunMetrics r = track_peak_memory(nullptr, Phase::Predict, "alloc", [&] {
    Tensor t(Shape{eight_mb / sizeof(double)});
    t[0] = 1.0;
  });
  CHECK(r.peak_mem_bytes >= baseline + eight_mb);
  CHECK(r.peak_mem_bytes < baseline + 2 * eight_mb);
}

TEST_CASE("sequential allocations do not add up in the peak") {
  const std::size_t eight_mb = 8u << 20;
  std::size_t baseline = AllocationTracker::instance().live_bytes();
  RunMetrics r = track_peak_memory(nullptr, Phase::Predict, "seq", [&] {
    for (int i = 0; i < 4; ++i) {
      Tensor t(Shape{eight_mb / sizeof(double)});
      t[1] = 2.0;
    }
  });
  CHECK(r.peak_mem_bytes >= baseline + eight_mb);
  CHECK(r.peak_mem_bytes < baseline + 2 * eight_mb);
}

TEST_CASE("nested phases") {
  MetricsCollector sink;
  const std::size_t mb = 1u << 20;
  RunMetrics outer = time_phase(&sink, Phase::Finetune, "outer", [&] {
    for (int i = 0; i < 3; ++i) {
      time_phase(&sink, Phase::Finetune, "inner " + std::to_string(i), [&] {
        Tensor t(Shape{mb / sizeof(double)});
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      });
    }
  });
  auto recs = sink.records();
  REQUIRE(recs.size() == 4);
  double inner_total = 0.0;
  for (const auto& r : recs) {
    if (r.label == "outer") continue;
    CHECK(r.depth == 1);
    REQUIRE(r.parent);
    CHECK(*r.parent == outer.id);
    CHECK(r.wall_time_s <= outer.wall_time_s);
    CHECK(r.peak_mem_bytes <= outer.peak_mem_bytes);
    CHECK(!r.resident_bytes);
    inner_total += r.wall_time_s;
  }
  CHECK(inner_total <= outer.wall_time_s);
  CHECK(outer.depth == 0);
  CHECK(!outer.parent);
}

TEST_CASE("jsonl round trip") {
  MetricsCollector sink(std::make_shared<NullEnergyProbe>());
  time_phase(&sink, Phase::Predict, "a", [] {}, 2);
  time_phase(&sink, Phase::Finetune, "b", [&] { time_phase(&sink, Phase::Finetune, "c", [] {}); });
  measure_swap(&sink, "decoder:x", [] {});
  auto recs = sink.records();
  export_metrics(recs, MetricsFormat::Jsonl, temp_path("m.jsonl"));
  CHECK(read_metrics_jsonl(temp_path("m.jsonl")) == recs);
  for (const auto& line : lines_of(temp_path("m.jsonl"))) CHECK(line.find("energy_j") == std::string::npos);
}

TEST_CASE("empty export") {
  export_metrics({}, MetricsFormat::Jsonl, temp_path("empty.jsonl"));
  CHECK(std::filesystem::file_size(temp_path("empty.jsonl")) == 0);
  CHECK(read_metrics_jsonl(temp_path("empty.jsonl")).empty());
  export_metrics({}, MetricsFormat::Csv, temp_path("empty.csv"));
  auto lines = lines_of(temp_path("empty.csv"));
  REQUIRE(lines.size() == 1);
  CHECK(lines[0] == kMetricsCsvHeader);
}

TEST_CASE("csv layout") {
  CHECK(std::string(kMetricsCsvHeader) ==
        "phase,wall_time_s,peak_mem_bytes,resident_bytes,energy_j,batch_count,timestamp,failed");
  RunMetrics r;
  r.phase = Phase::Swap;
  r.wall_time_s = 0.5;
  r.peak_mem_bytes = 10;
  r.batch_count = 0;
  r.timestamp = 2.0;
  r.failed = true;
  CHECK(metrics_csv_row(r) == "swap,0.5,10,,,0,2,true");
  r.energy_j = 1.25;
  r.resident_bytes = 4096;
  r.failed = false;
  CHECK(metrics_csv_row(r) == "swap,0.5,10,4096,1.25,0,2,false");
  export_metrics({r, r}, MetricsFormat::Csv, temp_path("m.csv"));
  CHECK(lines_of(temp_path("m.csv")).size() == 3);
}

TEST_CASE("file energy probe") {
  auto path = temp_path("energy.txt");
  std::filesystem::remove(path);
  FileEnergyProbe probe(path, 1e-6);
  CHECK(!probe.available());
  CHECK(!probe.read());
  std::ofstream(path) << 5000000;
  CHECK(probe.available());
  CHECK(*probe.read() == doctest::Approx(5.0));
  std::ofstream(path) << 1000000;
  CHECK(*probe.read() == doctest::Approx(5.0));

  std::ofstream(path) << 2000000;
  auto shared = std::make_shared<FileEnergyProbe>(path, 1e-6);
  MetricsCollector sink(shared);
  RunMetrics r = time_phase(&sink, Phase::Predict, "e", [&] { std::ofstream(path) << 3500000; });
  REQUIRE(r.energy_j);
  CHECK(*r.energy_j == doctest::Approx(1.5));
  CHECK(*r.energy_j >= 0.0);
}

TEST_CASE("absent probe leaves energy empty") {
  MetricsCollector sink(std::make_shared<NullEnergyProbe>());
  RunMetrics r = time_phase(&sink, Phase::Predict, "n", [] {});
  CHECK(!r.energy_j);
  CHECK(metrics_csv_row(r).find(",,") != std::string::npos);
}

TEST_CASE("swap records") {
  MetricsCollector sink;
  RunMetrics ok = measure_swap(&sink, "decoder:a", [] {});
  CHECK(ok.phase == Phase::Swap);
  CHECK(!ok.failed);
  CHECK_THROWS(measure_swap(&sink, "decoder:b", [] { throw RegistryError("nope"); }));
  auto recs = sink.records();
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].failed);
  CHECK(recs[1].label == "decoder:b");
}

TEST_CASE("phase names") {
  for (Phase p : {Phase::Finetune, Phase::Predict, Phase::LoadComponent, Phase::Swap})
    CHECK(parse_phase(to_string(p)) == p);
  CHECK_THROWS_AS(parse_phase("train"), FormatError);
}

TEST_CASE("collector is thread safe") {
  MetricsCollector sink;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 50; ++i) time_phase(&sink, Phase::Predict, "t", [] {});
    });
  for (auto& th : threads) th.join();
  auto recs = sink.records();
  CHECK(recs.size() == 200);
  std::set<std::uint64_t> ids;
  for (const auto& r : recs) {
    ids.insert(r.id);
    CHECK(r.depth == 0);
  }
  CHECK(ids.size() == 200);
}
