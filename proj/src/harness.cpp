#include "cnx/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <random>

#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "cnx/quant.hpp"
#include "cnx/unstructured.hpp"

namespace cnx {

namespace {

constexpr std::array<std::pair<StageKind, const char*>, 5> kStageNames{{
    {StageKind::kDhspgPrune, "dhspg_prune"},
    {StageKind::kExtract, "extract"},
    {StageKind::kL1Unstructured, "l1_unstructured"},
    {StageKind::kRandomUnstructured, "random_unstructured"},
    {StageKind::kDynamicQuantize, "dynamic_quantize"},
}};

StageKind stage_from_name(const std::string& name) {
  for (const auto& [k, n] : kStageNames) {
    if (name == n) return k;
  }
  throw ConfigError(fmt::format("unknown pipeline stage '{}'", name));
}

double pct_drop(double before, double after) { return before == 0.0 ? 0.0 : 100.0 * (1.0 - after / before); }

}  // namespace

const char* stage_name(StageKind k) {
  for (const auto& [kind, n] : kStageNames) {
    if (kind == k) return n;
  }
  return "?";
}

DataSpec DataSpec::parse(const std::string& arg) {
  DataSpec d;
  if (arg.rfind("synthetic", 0) != 0) {
    d.source = arg;
    d.train_size = 0;
    d.test_size = 0;
    return d;
  }
  const auto rest = arg.substr(9);
  if (rest.empty()) return d;
  try {
    if (rest[0] != ':') throw std::invalid_argument("separator");
    const auto second = rest.find(':', 1);
    d.train_size = std::stoll(rest.substr(1, second == std::string::npos ? std::string::npos : second - 1));
    if (second != std::string::npos) d.seed = std::stoull(rest.substr(second + 1));
  } catch (const std::exception&) {
    throw UsageError(fmt::format("bad data argument '{}' (expected a directory or synthetic[:N[:SEED]])", arg));
  }
  if (d.train_size <= 0) throw UsageError("synthetic dataset size must be positive");
  d.test_size = std::max<std::int64_t>(d.train_size / 5, 100);
  return d;
}

nlohmann::json DataSpec::to_json() const {
  return {{"source", source}, {"train_size", train_size}, {"test_size", test_size}, {"seed", seed}};
}

LoadedData load_data(const DataSpec& spec) {
  if (spec.source == "synthetic") {
    return {synthetic(spec.train_size, kCifarClasses, spec.seed, Split::kTrain),
            synthetic(spec.test_size, kCifarClasses, spec.seed + 1, Split::kTest)};
  }
  auto c = load_cifar10(spec.source);
  if (spec.train_size > 0) c.train = c.train.head(spec.train_size);
  if (spec.test_size > 0) c.test = c.test.head(spec.test_size);
  return {std::move(c.train), std::move(c.test)};
}

PipelineSpec PipelineSpec::from_json(const nlohmann::json& j) {
  PipelineSpec s;
  try {
    for (const auto& st : j.at("stages")) {
      Stage stage;
      stage.kind = stage_from_name(st.at("type").get<std::string>());
      switch (stage.kind) {
        case StageKind::kDhspgPrune:
          stage.dhspg = DhspgConfig::from_json(st.value("config", nlohmann::json::object()));
          break;
        case StageKind::kL1Unstructured:
        case StageKind::kRandomUnstructured:
          stage.frac_linear = st.at("frac_linear").get<double>();
          stage.frac_conv = st.at("frac_conv").get<double>();
          stage.seed = st.value("seed", std::uint64_t{0});
          for (double f : {stage.frac_linear, stage.frac_conv}) {
            if (!(f >= 0.0 && f <= 1.0)) throw ConfigError(fmt::format("pruning fraction {} outside [0, 1]", f));
          }
          break;
        default:
          break;
      }
      s.stages.push_back(stage);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      DataSpec ds;
      ds.source = d.value("source", ds.source);
      ds.train_size = d.value("train_size", ds.train_size);
      ds.test_size = d.value("test_size", ds.test_size);
      ds.seed = d.value("seed", ds.seed);
      s.data = ds;
    }
    s.eval_batch_size = j.value("eval_batch_size", s.eval_batch_size);
    s.convention = convention_from_name(j.value("convention", std::string("fp32_only")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad pipeline spec: {}", e.what()));
  } catch (const UsageError& e) {
    throw ConfigError(fmt::format("bad pipeline spec: {}", e.what()));
  }
  s.validate();
  return s;
}

nlohmann::json PipelineSpec::to_json() const {
  nlohmann::json stages_j = nlohmann::json::array();
  for (const auto& st : stages) {
    nlohmann::json sj{{"type", stage_name(st.kind)}};
    if (st.kind == StageKind::kDhspgPrune) sj["config"] = st.dhspg.to_json();
    if (st.kind == StageKind::kL1Unstructured || st.kind == StageKind::kRandomUnstructured) {
      sj["frac_linear"] = st.frac_linear;
      sj["frac_conv"] = st.frac_conv;
      if (st.kind == StageKind::kRandomUnstructured) sj["seed"] = st.seed;
    }
    stages_j.push_back(sj);
  }
  nlohmann::json j{{"stages", stages_j}, {"eval_batch_size", eval_batch_size}, {"convention", convention_name(convention)}};
  if (data) j["data"] = data->to_json();
  return j;
}

void PipelineSpec::validate() const {
  if (stages.empty()) throw ConfigError("pipeline needs at least one stage");
  if (eval_batch_size <= 0) throw ConfigError("eval_batch_size must be positive");
  bool pruned = false, quantized = false;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    switch (stages[i].kind) {
      case StageKind::kDhspgPrune:
        if (quantized) throw ConfigError(fmt::format("stage {}: dhspg_prune cannot follow dynamic_quantize", i));
        pruned = true;
        break;
      case StageKind::kExtract:
        if (!pruned) throw ConfigError(fmt::format("stage {}: extract must follow dhspg_prune", i));
        if (quantized) throw ConfigError(fmt::format("stage {}: extract cannot follow dynamic_quantize", i));
        break;
      case StageKind::kDynamicQuantize:
        if (quantized) throw ConfigError(fmt::format("stage {}: dynamic_quantize may appear only once", i));
        quantized = true;
        break;
      default:
        break;
    }
  }
}

Reductions compare(const Profile& before, const Profile& after, Convention c) {
  const auto& b = c == Convention::kAll ? before.all_counts : before.counts;
  const auto& a = c == Convention::kAll ? after.all_counts : after.counts;
  if (c != Convention::kAll && (before.convention != c || after.convention != c)) {
    throw UsageError("compare: profiles were taken under a different counting convention");
  }
  Reductions r;
  r.size_pct = pct_drop(static_cast<double>(before.size_bytes), static_cast<double>(after.size_bytes));
  r.params_pct = pct_drop(static_cast<double>(b.params), static_cast<double>(a.params));
  r.macs_pct = pct_drop(static_cast<double>(b.macs), static_cast<double>(a.macs));
  if (before.accuracy_pct && after.accuracy_pct) r.accuracy_delta_points = *after.accuracy_pct - *before.accuracy_pct;
  return r;
}

Reductions compare(const Profile& before, const Profile& after) {
  if (before.convention != after.convention) throw UsageError("compare: profiles use different counting conventions");
  return compare(before, after, before.convention);
}

PipelineResult run_pipeline(const PipelineSpec& spec, const Model& model, const Dataset* train, const Dataset* eval) {
  spec.validate();
  PipelineResult res{{}, model};
  auto& rep = res.report;
  rep.config = spec.to_json();
  rep.before = profile(model, eval, spec.convention, spec.eval_batch_size);
  std::vector<PruneGroup> groups;
  for (const auto& st : spec.stages) {
    const auto t0 = std::chrono::steady_clock::now();
    StageResult sr;
    sr.name = stage_name(st.kind);
    sr.details = nlohmann::ordered_json::object();
    try {
      Model next;
      switch (st.kind) {
        case StageKind::kDhspgPrune: {
          if (!train) throw UsageError("dhspg_prune needs training data");
          groups = partition_pzigs(analyze_dependencies(res.model), res.model);
          auto r = dhspg_train(res.model, groups, *train, st.dhspg);
          sr.details["groups"] = groups.size();
          sr.details["zero_groups"] = r.redundant.size();
          sr.details["warmup_steps"] = r.warmup_steps;
          sr.details["total_steps"] = r.total_steps;
          sr.details["forced_projections"] = r.forced_projections;
          auto losses = nlohmann::ordered_json::array();
          for (const auto& e : r.epochs) losses.push_back(e.mean_loss);
          sr.details["epoch_loss"] = losses;
          sr.details["warnings"] = r.warnings;
          next = std::move(r.model);
          break;
        }
        case StageKind::kExtract:
          next = extract_subnetwork(res.model, groups);
          sr.details["widths"] = to_json(pruned_architecture(res.model, next));
          break;
        case StageKind::kL1Unstructured:
        case StageKind::kRandomUnstructured: {
          const auto masks = st.kind == StageKind::kL1Unstructured
                                 ? l1_mask(res.model, st.frac_linear, st.frac_conv)
                                 : random_mask(res.model, st.frac_linear, st.frac_conv, st.seed);
          sr.details["masked_weights"] = masks.zeros();
          next = apply_masks(res.model, masks);
          break;
        }
        case StageKind::kDynamicQuantize: {
          next = quantize_model(res.model);
          std::int64_t q = 0;
          for (const auto& n : next.param_names()) q += next.is_quantized(n);
          sr.details["quantized_tensors"] = q;
          break;
        }
      }
      sr.profile = profile(next, eval, spec.convention, spec.eval_batch_size);
      res.model = std::move(next);
    } catch (const std::exception& e) {
      rep.complete = false;
      rep.error = fmt::format("stage {} ({}): {}", rep.stages.size(), sr.name, e.what());
      rep.error_exit_code = exit_code(e);
      return res;
    }
    sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.stages.push_back(std::move(sr));
  }
  return res;
}

ReportFormat report_format_from_name(const std::string& name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  if (name == "csv") return ReportFormat::kCsv;
  throw UsageError(fmt::format("unknown report format '{}'", name));
}

nlohmann::ordered_json to_json(const Reductions& r, Convention c) {
  nlohmann::ordered_json j;
  j["convention"] = convention_name(c);
  j["size_pct"] = r.size_pct;
  j["params_pct"] = r.params_pct;
  j["macs_pct"] = r.macs_pct;
  j["accuracy_delta_points"] =
      r.accuracy_delta_points ? nlohmann::ordered_json(*r.accuracy_delta_points) : nlohmann::ordered_json(nullptr);
  return j;
}

nlohmann::ordered_json to_json(const CompressionReport& r, bool include_timing) {
  nlohmann::ordered_json j;
  j["format"] = "cnx-report/1";
  j["complete"] = r.complete;
  j["error"] = r.complete ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.error);
  j["error_exit_code"] = r.error_exit_code;
  j["config"] = r.config;
  j["before"] = to_json(r.before);
  auto stages = nlohmann::ordered_json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"name", s.name}, {"profile", to_json(s.profile)}, {"details", s.details}});
  }
  j["stages"] = stages;
  j["after"] = to_json(r.after());
  j["reductions"] = to_json(compare(r.before, r.after()), r.before.convention);
  j["reductions_all"] = to_json(compare(r.before, r.after(), Convention::kAll), Convention::kAll);
  if (include_timing) {
    auto t = nlohmann::ordered_json::array();
    double total = 0.0;
    for (const auto& s : r.stages) {
      t.push_back(s.seconds);
      total += s.seconds;
    }
    j["timing"] = {{"stage_seconds", t}, {"total_seconds", total}};
  }
  return j;
}

CompressionReport report_from_json(const nlohmann::json& j) {
  CompressionReport r;
  try {
    r.complete = j.at("complete").get<bool>();
    if (!r.complete) r.error = j.at("error").get<std::string>();
    r.error_exit_code = j.value("error_exit_code", 0);
    r.config = j.at("config");
    r.before = profile_from_json(j.at("before"));
    const auto* timing = j.contains("timing") ? &j.at("timing").at("stage_seconds") : nullptr;
    std::size_t i = 0;
    for (const auto& s : j.at("stages")) {
      StageResult sr;
      sr.name = s.at("name").get<std::string>();
      sr.profile = profile_from_json(s.at("profile"));
      sr.details = s.at("details");
      if (timing) sr.seconds = timing->at(i).get<double>();
      r.stages.push_back(std::move(sr));
      ++i;
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(fmt::format("bad report JSON: {}", e.what()));
  }
  return r;
}

namespace {

std::string acc_cell(const std::optional<double>& a) { return a ? fmt::format("{:.2f}", *a) : "n/a"; }

std::string markdown(const CompressionReport& r) {
  const auto conv = convention_name(r.before.convention);
  std::string s = fmt::format("## Compression report ({} counts, M = 2^20)\n\n", conv);
  if (!r.complete) s += fmt::format("**Incomplete:** {}\n\n", r.error);
  s += "| Model | Accuracy (%) | Size (MB) | Params (M) | MACs (M) | Non-zero params (M) |\n";
  s += "|---|---|---|---|---|---|\n";
  auto row = [&](const std::string& name, const Profile& p) {
    s += fmt::format("| {} | {} | {:.2f} | {:.2f} | {:.2f} | {:.2f} |\n", name, acc_cell(p.accuracy_pct), p.size_mb(),
                     p.params_m(), p.macs_m(), p.nonzero_params_m());
  };
  row("Full", r.before);
  for (const auto& st : r.stages) row(st.name, st.profile);
  const auto red = compare(r.before, r.after());
  s += "\n| Accuracy change | Size reduction | Params reduction | MACs reduction |\n|---|---|---|---|\n";
  s += fmt::format("| {} | {:.2f}% | {:.2f}% | {:.2f}% |\n",
                   red.accuracy_delta_points ? fmt::format("{:+.2f}", *red.accuracy_delta_points) : "n/a",
                   red.size_pct, red.params_pct, red.macs_pct);
  return s;
}

std::string csv(const CompressionReport& r, bool include_timing) {
  std::string s =
      "stage,index,accuracy_pct,size_bytes,size_mb,params_m,macs_m,nonzero_params_m,convention,size_reduction_pct,"
      "params_reduction_pct,macs_reduction_pct,accuracy_delta_points";
  s += include_timing ? ",seconds\n" : "\n";
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    const auto& st = r.stages[i];
    const auto& p = st.profile;
    const auto red = compare(r.before, p);
    s += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{},{:.2f},{:.2f},{:.2f},{}", st.name, i,
                     p.accuracy_pct ? fmt::format("{:.2f}", *p.accuracy_pct) : "", p.size_bytes, p.size_mb(),
                     p.params_m(), p.macs_m(), p.nonzero_params_m(), convention_name(p.convention), red.size_pct,
                     red.params_pct, red.macs_pct,
                     red.accuracy_delta_points ? fmt::format("{:.2f}", *red.accuracy_delta_points) : "");
    s += include_timing ? fmt::format(",{:.3f}\n", st.seconds) : "\n";
  }
  return s;
}

}  // namespace

std::string emit_report(const CompressionReport& r, ReportFormat f, bool include_timing) {
  switch (f) {
    case ReportFormat::kJson: return to_json(r, include_timing).dump(2) + "\n";
    case ReportFormat::kMarkdown: return markdown(r);
    case ReportFormat::kCsv: return csv(r, include_timing);
  }
  throw InternalError("unknown report format");
}

LatencyStats measure_latency(const Model& model, int warmup, int iters, std::uint64_t seed) {
  if (iters <= 0) throw UsageError("latency: timed iterations must be positive");
  if (warmup < 0) throw UsageError("latency: warmup iterations must be >= 0");
  Shape shape{1};
  shape.insert(shape.end(), model.meta.input_shape.begin(), model.meta.input_shape.end());
  Tensor x = Tensor::zeros(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (auto& v : x.data()) v = dist(rng);
  for (int i = 0; i < warmup; ++i) forward(model, x);
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    forward(model, x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  LatencyStats s;
  s.iters = iters;
  for (double v : ms) s.mean_ms += v;
  s.mean_ms /= static_cast<double>(iters);
  std::sort(ms.begin(), ms.end());
  // nearest-rank percentiles
  auto pct = [&](double p) { return ms[static_cast<std::size_t>(std::ceil(p * iters) - 1)]; };
  s.p50_ms = pct(0.50);
  s.p95_ms = pct(0.95);
  return s;
}

}  // namespace cnx
