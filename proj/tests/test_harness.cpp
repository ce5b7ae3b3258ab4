#include <doctest.h>

#include <fmt/format.h>

#include "cnx/convnext.hpp"
#include "cnx/errors.hpp"
#include "cnx/harness.hpp"
#include "cnx/serialize.hpp"
#include "support.hpp"

using namespace cnx;
using namespace cnx::testing;

namespace {

Profile fake(double size_mb, double params_m, double macs_m, std::optional<double> acc = std::nullopt) {
  Profile p;
  p.size_bytes = static_cast<std::uint64_t>(size_mb * kMega);
  p.counts.params = static_cast<std::int64_t>(params_m * kMega);
  p.counts.macs = static_cast<std::int64_t>(macs_m * kMega);
  p.counts.nonzero_params = p.counts.params;
  p.all_counts = p.counts;
  p.accuracy_pct = acc;
  p.input_shape = {1, 3, 32, 32};
  return p;
}

PipelineSpec spec_of(const std::string& json) { return PipelineSpec::from_json(nlohmann::json::parse(json)); }

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("compare reproduces the reduction arithmetic") {
  const auto r = compare(fake(188.89, 47.16, 169.28, 92.86), fake(19.39, 2.15, 7.27, 92.93));
  // the tabulated 89.74 comes from unrounded sizes; 188.89 -> 19.39 gives 89.735
  CHECK(std::fabs(r.size_pct - 89.74) <= 0.01);
  CHECK(fmt::format("{:.2f}", r.params_pct) == "95.44");
  CHECK(fmt::format("{:.2f}", r.macs_pct) == "95.71");
  REQUIRE(r.accuracy_delta_points.has_value());
  CHECK(*r.accuracy_delta_points == doctest::Approx(0.07));

  const auto same = compare(fake(10, 1, 1, 50), fake(10, 1, 1, 50));
  CHECK(same.size_pct == 0.0);
  CHECK(same.params_pct == 0.0);
  CHECK(same.macs_pct == 0.0);
  CHECK(*same.accuracy_delta_points == 0.0);
  CHECK_FALSE(compare(fake(10, 1, 1), fake(5, 1, 1, 40)).accuracy_delta_points.has_value());

  auto all = fake(1, 1, 1);
  all.convention = Convention::kAll;
  CHECK_THROWS_AS(compare(fake(1, 1, 1), all), UsageError);
}

TEST_CASE("pipeline spec parsing and validation") {
  const auto s = spec_of(R"({"stages": [{"type": "dhspg_prune", "config": {"target_group_sparsity": 0.4}},
                                        {"type": "extract"}, {"type": "dynamic_quantize"}],
                             "convention": "fp32_only", "eval_batch_size": 128})");
  REQUIRE(s.stages.size() == 3);
  CHECK(s.stages[0].dhspg.target_group_sparsity == 0.4);
  CHECK(s.eval_batch_size == 128);
  CHECK(PipelineSpec::from_json(s.to_json()).to_json() == s.to_json());

  CHECK_THROWS_AS(spec_of(R"({"stages": []})").validate(), ConfigError);
  CHECK_THROWS_AS(spec_of(R"({"stages": [{"type": "extract"}]})").validate(), ConfigError);
  CHECK_THROWS_AS(spec_of(R"({"stages": [{"type": "dynamic_quantize"}, {"type": "dynamic_quantize"}]})").validate(),
                  ConfigError);
  CHECK_THROWS_AS(spec_of(R"({"stages": [{"type": "dhspg_prune"}, {"type": "dynamic_quantize"}, {"type": "extract"}]})")
                      .validate(),
                  ConfigError);
  CHECK_THROWS_AS(spec_of(R"({"stages": [{"type": "prune_everything"}]})"), ConfigError);
  CHECK_THROWS_AS(spec_of(R"({"stages": [{"type": "l1_unstructured", "frac_linear": "x"}]})"), ConfigError);
  CHECK_THROWS_AS(spec_of(R"({"stages": [{"type": "l1_unstructured", "frac_linear": 1.5, "frac_conv": 0}]})"),
                  ConfigError);

  const auto d = DataSpec::parse("synthetic:500:7");
  CHECK(d.source == "synthetic");
  CHECK(d.train_size == 500);
  CHECK(d.test_size == 100);
  CHECK(d.seed == 7);
  CHECK(DataSpec::parse("/data/cifar").source == "/data/cifar");
  CHECK_THROWS_AS(DataSpec::parse("synthetic:abc"), UsageError);
}

TEST_CASE("empty-effect pipeline: before equals after") {
  Model m = build_convnext(convnext_preset("micro"), 1);
  const auto ds = synthetic(30, 10, 2);
  const auto res = run_pipeline(spec_of(R"({"stages": [{"type": "l1_unstructured", "frac_linear": 0, "frac_conv": 0}]})"),
                                m, nullptr, &ds);
  REQUIRE(res.report.complete);
  CHECK(res.report.after() == res.report.before);
  CHECK(serialize(res.model) == serialize(m));
  const auto j = to_json(res.report, false);
  CHECK(j["reductions"]["size_pct"] == 0.0);
}

TEST_CASE("quantize + l1 pipeline: report renders in every format") {
  const Model m = build_convnext(convnext_preset("micro"), 1);
  const auto ds = synthetic(30, 10, 2);
  const auto spec = spec_of(R"({"stages": [{"type": "l1_unstructured", "frac_linear": 0.3, "frac_conv": 0.3},
                                           {"type": "dynamic_quantize"}]})");
  const auto res = run_pipeline(spec, m, nullptr, &ds);
  const auto& rep = res.report;
  REQUIRE(rep.complete);
  REQUIRE(rep.stages.size() == 2);
  CHECK(rep.stages[1].profile.size_bytes < rep.stages[0].profile.size_bytes);
  CHECK(rep.stages[0].profile.counts.nonzero_params < rep.before.counts.nonzero_params);

  // json -> parse -> re-emit is byte-identical, with and without timing
  for (bool timing : {true, false}) {
    const auto text = emit_report(rep, ReportFormat::kJson, timing);
    const auto back = report_from_json(nlohmann::json::parse(text));
    CHECK(emit_report(back, ReportFormat::kJson, timing) == text);
  }
  // reductions are recomputable from the embedded profiles
  const auto j = nlohmann::json::parse(emit_report(rep, ReportFormat::kJson));
  const double before = j["before"]["size_bytes"].get<double>(), after = j["after"]["size_bytes"].get<double>();
  CHECK(j["reductions"]["size_pct"].get<double>() == 100.0 * (1.0 - after / before));

  const auto md = emit_report(rep, ReportFormat::kMarkdown);
  CHECK(count(md, "| Full |") == 1);
  CHECK(count(md, "| l1_unstructured |") == 1);
  CHECK(count(md, "| dynamic_quantize |") == 1);
  CHECK(count(md, "%") == 4);  // header "(%)" plus three reductions
  CHECK(md.find(fmt::format("{:.2f}%", compare(rep.before, rep.after()).size_pct)) != std::string::npos);

  const auto csv = emit_report(rep, ReportFormat::kCsv);
  CHECK(count(csv, "\n") == 3);
  CHECK(report_format_from_name("md") == ReportFormat::kMarkdown);
  CHECK_THROWS_AS(report_format_from_name("xml"), UsageError);
}

TEST_CASE("a failing stage leaves an incomplete report") {
  const Model m = build_convnext(convnext_preset("micro"), 1);
  CHECK_THROWS_AS(spec_of(R"({"stages": [{"type": "dynamic_quantize"}, {"type": "dhspg_prune"}]})"), ConfigError);
  const auto res = run_pipeline(spec_of(R"({"stages": [{"type": "l1_unstructured", "frac_linear": 0.2, "frac_conv": 0},
                                                      {"type": "dhspg_prune"}]})"),
                                m, nullptr, nullptr);
  CHECK_FALSE(res.report.complete);
  CHECK(res.report.stages.size() == 1);
  CHECK(res.report.error_exit_code == 1);
  CHECK(res.report.error.find("dhspg_prune") != std::string::npos);
  const auto j = to_json(res.report);
  CHECK(j["complete"] == false);
  CHECK(emit_report(res.report, ReportFormat::kMarkdown).find("Incomplete") != std::string::npos);
}

TEST_CASE("pipelines are deterministic apart from timing") {
  const Model m = build_convnext(convnext_preset("micro"), 1);
  const auto train = synthetic(64, 10, 3);
  const auto test = synthetic(32, 10, 4);
  const auto spec = spec_of(R"({"stages": [
      {"type": "dhspg_prune", "config": {"target_group_sparsity": 0.3, "train": {"batch_size": 32}}},
      {"type": "extract"}, {"type": "random_unstructured", "frac_linear": 0.2, "frac_conv": 0.1, "seed": 5},
      {"type": "dynamic_quantize"}]})");
  const auto a = run_pipeline(spec, m, &train, &test);
  const auto b = run_pipeline(spec, m, &train, &test);
  REQUIRE(a.report.complete);
  CHECK(emit_report(a.report, ReportFormat::kJson, false) == emit_report(b.report, ReportFormat::kJson, false));
  CHECK(a.report.stages[1].profile.size_bytes < a.report.stages[0].profile.size_bytes);
  CHECK(a.report.stages[3].profile.size_bytes < a.report.stages[2].profile.size_bytes);
  // extraction never costs accuracy
  CHECK(*a.report.stages[1].profile.accuracy_pct == *a.report.stages[0].profile.accuracy_pct);
}

TEST_CASE("latency statistics") {
  const Model m = build_convnext(convnext_preset("micro"), 1);
  CHECK_THROWS_AS(measure_latency(m, 1, 0), UsageError);
  CHECK_THROWS_AS(measure_latency(m, -1, 1), UsageError);
  const auto s = measure_latency(m, 1, 5);
  CHECK(s.iters == 5);
  CHECK(s.p50_ms > 0.0);
  CHECK(s.p50_ms <= s.p95_ms);
}
