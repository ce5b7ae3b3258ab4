// cnxc: train, profile and compress ConvNeXt models.
#include <CLI11.hpp>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "cnx/convnext.hpp"
#include "cnx/errors.hpp"
#include "cnx/harness.hpp"
#include "cnx/profiler.hpp"
#include "cnx/serialize.hpp"
#include "cnx/train.hpp"
#include "cnx/unstructured.hpp"

namespace {

using namespace cnx;

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError(fmt::format("cannot open {}", path));
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) throw UsageError(fmt::format("cannot write {}", path));
}

ReportFormat format_for(const std::string& path) {
  if (path.ends_with(".md")) return ReportFormat::kMarkdown;
  if (path.ends_with(".csv")) return ReportFormat::kCsv;
  return ReportFormat::kJson;
}

std::pair<double, double> parse_pair(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) {
      const double v = std::stod(s);
      return {v, v};
    }
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw UsageError(fmt::format("expected FRAC_LINEAR,FRAC_CONV, got '{}'", s));
  }
}

NormalizationConfig norm_from(const std::string& path) {
  return path.empty() ? NormalizationConfig{} : NormalizationConfig::from_json(read_json(path));
}

void print_profile(const Profile& p) {
  fmt::print("accuracy_pct      {}\n", p.accuracy_pct ? fmt::format("{:.2f}", *p.accuracy_pct) : "n/a");
  fmt::print("size              {} bytes ({:.2f} MB)\n", p.size_bytes, p.size_mb());
  fmt::print("params  [{}]  {} ({:.2f} M)\n", convention_name(p.convention), p.counts.params, p.params_m());
  fmt::print("macs    [{}]  {} ({:.2f} M)\n", convention_name(p.convention), p.counts.macs, p.macs_m());
  fmt::print("nonzero [{}]  {} ({:.2f} M)\n", convention_name(p.convention), p.counts.nonzero_params,
             p.nonzero_params_m());
  fmt::print("params/macs/nonzero [all]  {} / {} / {}\n", p.all_counts.params, p.all_counts.macs,
             p.all_counts.nonzero_params);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ConvNeXt compression toolkit"};
  app.require_subcommand(1);
  std::string norm_path;
  app.add_option("--norm", norm_path, "Normalization constants (JSON with mean/std)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config");
  std::string config_path, data_arg, out_path;
  int epochs = -1;
  std::uint64_t seed = 0;
  train_cmd->add_option("--config", config_path, "Model (and optional training) config JSON")->required();
  train_cmd->add_option("--data", data_arg, "CIFAR-10 directory or synthetic[:N[:SEED]]")->required();
  train_cmd->add_option("--epochs", epochs, "Epochs (overrides the config)");
  train_cmd->add_option("--seed", seed, "Initialization and shuffling seed");
  train_cmd->add_option("--out", out_path, "Output .cxm")->required();

  // profile
  auto* profile_cmd = app.add_subcommand("profile", "Report accuracy, size, params, MACs and non-zero params");
  std::string model_path, convention = "fp32_only", json_path;
  profile_cmd->add_option("--model", model_path)->required();
  profile_cmd->add_option("--data", data_arg, "Evaluation data; accuracy is skipped without it");
  profile_cmd->add_option("--convention", convention)->check(CLI::IsMember({"fp32_only", "all"}));
  profile_cmd->add_option("--json", json_path, "Write the profile as JSON");

  // compress
  auto* compress_cmd = app.add_subcommand("compress", "Run a compression pipeline");
  std::string pipeline_path, l1_arg, random_arg, report_path;
  double oto_target = -1.0;
  bool quantize = false;
  compress_cmd->add_option("--model", model_path)->required();
  compress_cmd->add_option("--pipeline", pipeline_path, "Pipeline spec JSON");
  compress_cmd->add_option("--oto-target", oto_target, "DHSPG group sparsity, followed by extraction");
  compress_cmd->add_option("--l1", l1_arg, "L1 unstructured fractions FRAC_LINEAR,FRAC_CONV");
  compress_cmd->add_option("--random", random_arg, "Random unstructured fractions FRAC_LINEAR,FRAC_CONV");
  compress_cmd->add_flag("--quantize", quantize, "Dynamic int8 quantization of linear layers");
  compress_cmd->add_option("--epochs", epochs, "DHSPG training epochs for --oto-target");
  compress_cmd->add_option("--seed", seed, "Seed for DHSPG and random masks");
  compress_cmd->add_option("--data", data_arg, "Training/evaluation data (overrides the spec)");
  compress_cmd->add_option("--convention", convention)->check(CLI::IsMember({"fp32_only", "all"}));
  compress_cmd->add_option("--out", out_path, "Compressed .cxm")->required();
  compress_cmd->add_option("--report", report_path, "Report path (.json, .md or .csv)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Unstructured pruning grid over linear x conv fractions");
  std::string method = "l1", fracs = "0.1:0.9:0.1", fracs_conv;
  sweep_cmd->add_option("--model", model_path)->required();
  sweep_cmd->add_option("--method", method)->check(CLI::IsMember({"l1", "random"}));
  sweep_cmd->add_option("--fracs", fracs, "a:b:step for linear layers (and conv unless --fracs-conv)");
  sweep_cmd->add_option("--fracs-conv", fracs_conv, "a:b:step for conv layers");
  sweep_cmd->add_option("--data", data_arg, "Evaluation data; accuracy is skipped without it");
  sweep_cmd->add_option("--seed", seed);
  sweep_cmd->add_option("--out", out_path, "Grid CSV")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy on the test split");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--data", data_arg)->required();

  // latency
  auto* latency_cmd = app.add_subcommand("latency", "Single-image forward latency");
  int warmup = 10, iters = 100;
  latency_cmd->add_option("--model", model_path)->required();
  latency_cmd->add_option("--warmup", warmup);
  latency_cmd->add_option("--iters", iters);

  // compare
  auto* compare_cmd = app.add_subcommand("compare", "Reductions between two profile JSON files");
  std::string before_path, after_path;
  compare_cmd->add_option("--before", before_path)->required();
  compare_cmd->add_option("--after", after_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const auto norm = norm_from(norm_path);
    if (*train_cmd) {
      const auto cfg_json = read_json(config_path);
      const auto model_cfg = convnext_config_from_json(cfg_json.contains("model") ? cfg_json.at("model") : cfg_json);
      TrainConfig tc = cfg_json.contains("train") ? TrainConfig::from_json(cfg_json.at("train")) : TrainConfig{};
      if (epochs >= 0) tc.epochs = epochs;
      tc.seed = seed;
      tc.norm = norm;
      const auto data = load_data(DataSpec::parse(data_arg));
      Model m = build_convnext(model_cfg, seed);
      for (const auto& e : train(m, data.train, tc)) {
        fmt::print("epoch {:>3}  loss {:.4f}  train_acc {:.2f}%\n", e.epoch + 1, e.mean_loss, e.train_accuracy_pct);
      }
      fmt::print("test_acc {:.2f}%\n", evaluate(m, data.test, 256, norm));
      save(m, out_path);
    } else if (*profile_cmd) {
      const auto m = load(model_path);
      std::optional<LoadedData> data;
      if (!data_arg.empty()) data = load_data(DataSpec::parse(data_arg));
      const auto p = profile(m, data ? &data->test : nullptr, convention_from_name(convention), 256, norm);
      print_profile(p);
      if (!json_path.empty()) write_text(json_path, to_json(p).dump(2) + "\n");
    } else if (*compress_cmd) {
      PipelineSpec spec;
      if (!pipeline_path.empty()) {
        spec = PipelineSpec::from_json(read_json(pipeline_path));
      } else {
        if (oto_target >= 0.0) {
          Stage s;
          s.kind = StageKind::kDhspgPrune;
          s.dhspg.target_group_sparsity = oto_target;
          s.dhspg.train.epochs = epochs >= 0 ? epochs : 1;
          s.dhspg.train.seed = seed;
          s.dhspg.train.norm = norm;
          s.dhspg.validate();
          spec.stages.push_back(s);
          spec.stages.push_back({StageKind::kExtract});
        }
        if (!l1_arg.empty()) {
          Stage s{StageKind::kL1Unstructured};
          std::tie(s.frac_linear, s.frac_conv) = parse_pair(l1_arg);
          spec.stages.push_back(s);
        }
        if (!random_arg.empty()) {
          Stage s{StageKind::kRandomUnstructured};
          std::tie(s.frac_linear, s.frac_conv) = parse_pair(random_arg);
          s.seed = seed;
          spec.stages.push_back(s);
        }
        if (quantize) spec.stages.push_back({StageKind::kDynamicQuantize});
        spec.convention = convention_from_name(convention);
        if (spec.stages.empty()) throw UsageError("compress needs --pipeline or at least one stage flag");
      }
      if (!data_arg.empty()) spec.data = DataSpec::parse(data_arg);
      spec.validate();
      std::optional<LoadedData> data;
      if (spec.data) data = load_data(*spec.data);
      const auto m = load(model_path);
      auto res = run_pipeline(spec, m, data ? &data->train : nullptr, data ? &data->test : nullptr);
      if (!report_path.empty()) write_text(report_path, emit_report(res.report, format_for(report_path)));
      std::cout << emit_report(res.report, ReportFormat::kMarkdown);
      if (!res.report.complete) {
        fmt::print(stderr, "error: {}\n", res.report.error);
        return res.report.error_exit_code;
      }
      save(res.model, out_path);
    } else if (*sweep_cmd) {
      const auto m = load(model_path);
      std::optional<LoadedData> data;
      if (!data_arg.empty()) data = load_data(DataSpec::parse(data_arg));
      const auto fl = parse_fracs(fracs);
      const auto fc = fracs_conv.empty() ? fl : parse_fracs(fracs_conv);
      const auto rows = sweep(m, data ? &data->test : nullptr, fl, fc, method_from_name(method), seed);
      write_text(out_path, sweep_csv(rows));
      fmt::print("{} grid points written to {}\n", rows.size(), out_path);
    } else if (*eval_cmd) {
      const auto m = load(model_path);
      const auto data = load_data(DataSpec::parse(data_arg));
      fmt::print("{:.2f}\n", evaluate(m, data.test, 256, norm));
    } else if (*latency_cmd) {
      const auto m = load(model_path);
      const auto s = measure_latency(m, warmup, iters);
      fmt::print("mean_ms {:.3f}\np50_ms {:.3f}\np95_ms {:.3f}\niters {}\n", s.mean_ms, s.p50_ms, s.p95_ms, s.iters);
    } else if (*compare_cmd) {
      const auto before = profile_from_json(read_json(before_path));
      const auto after = profile_from_json(read_json(after_path));
      nlohmann::ordered_json out;
      out["reductions"] = to_json(compare(before, after), before.convention);
      out["reductions_all"] = to_json(compare(before, after, Convention::kAll), Convention::kAll);
      fmt::print("{}\n", out.dump(2));
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return 3;
  }
  return 0;
}
