#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnx/data.hpp"
#include "cnx/model.hpp"
#include "cnx/profiler.hpp"
#include "cnx/structured.hpp"

namespace cnx {

enum class StageKind { kDhspgPrune, kExtract, kL1Unstructured, kRandomUnstructured, kDynamicQuantize };

const char* stage_name(StageKind k);

struct Stage {
  StageKind kind = StageKind::kExtract;
  DhspgConfig dhspg;         // kDhspgPrune
  double frac_linear = 0.0;  // unstructured stages
  double frac_conv = 0.0;
  std::uint64_t seed = 0;    // kRandomUnstructured
};

// "synthetic" (generated in memory) or a CIFAR-10 binary directory. Sizes
// cap how many records are used; 0 keeps everything.
struct DataSpec {
  std::string source = "synthetic";
  std::int64_t train_size = 5000;
  std::int64_t test_size = 1000;
  std::uint64_t seed = 0;

  // "synthetic", "synthetic:N" or "synthetic:N:SEED", otherwise a directory.
  static DataSpec parse(const std::string& arg);
  nlohmann::json to_json() const;
};

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const DataSpec& spec);

struct PipelineSpec {
  std::vector<Stage> stages;
  std::optional<DataSpec> data;
  std::int64_t eval_batch_size = 256;
  Convention convention = Convention::kFp32Only;

  static PipelineSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // At least one stage; extract needs an earlier dhspg_prune with no
  // dynamic_quantize in between; dynamic_quantize at most once and never
  // before dhspg_prune.
  void validate() const;
};

struct Reductions {
  double size_pct = 0.0;
  double params_pct = 0.0;
  double macs_pct = 0.0;
  std::optional<double> accuracy_delta_points;
};

// 100 * (1 - after / before) under `c`; accuracy delta is after - before.
Reductions compare(const Profile& before, const Profile& after, Convention c);
Reductions compare(const Profile& before, const Profile& after);

struct StageResult {
  std::string name;
  Profile profile;
  nlohmann::ordered_json details;
  double seconds = 0.0;
};

// Reductions are never stored; they are recomputed from the profiles
// whenever the report is rendered.
struct CompressionReport {
  nlohmann::json config;
  Profile before;
  std::vector<StageResult> stages;
  bool complete = true;
  std::string error;
  int error_exit_code = 0;

  const Profile& after() const { return stages.empty() ? before : stages.back().profile; }
};

struct PipelineResult {
  CompressionReport report;
  Model model;  // after the last successful stage
};

// Runs the stages on a copy of `model`, profiling after each one. A failing
// stage stops the run and marks the report incomplete.
PipelineResult run_pipeline(const PipelineSpec& spec, const Model& model, const Dataset* train, const Dataset* eval);

enum class ReportFormat { kJson, kMarkdown, kCsv };

ReportFormat report_format_from_name(const std::string& name);

nlohmann::ordered_json to_json(const Reductions& r, Convention c);
nlohmann::ordered_json to_json(const CompressionReport& r, bool include_timing = true);
CompressionReport report_from_json(const nlohmann::json& j);
std::string emit_report(const CompressionReport& r, ReportFormat f, bool include_timing = true);

struct LatencyStats {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  int iters = 0;
};

// Single-image forward latency after `warmup` untimed runs.
LatencyStats measure_latency(const Model& model, int warmup, int iters, std::uint64_t seed = 0);

}  // namespace cnx
