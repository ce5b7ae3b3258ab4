#include "cnx/profiler.hpp"

#include <fmt/format.h>

#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "cnx/kernels.hpp"
#include "cnx/serialize.hpp"

namespace cnx {

const char* convention_name(Convention c) { return c == Convention::kFp32Only ? "fp32_only" : "all"; }

Convention convention_from_name(const std::string& name) {
  if (name == "fp32_only") return Convention::kFp32Only;
  if (name == "all") return Convention::kAll;
  throw UsageError(fmt::format("unknown counting convention '{}' (expected fp32_only or all)", name));
}

std::int64_t count_params(const Model& model, Convention c) {
  std::int64_t n = 0;
  for (const auto& name : model.param_names()) {
    if (c == Convention::kFp32Only && model.is_quantized(name)) continue;
    n += numel(model.param_shape(name));
  }
  return n;
}

std::int64_t count_macs(const Model& model, const Shape& input, Convention c) {
  const auto shapes = infer_shapes(model, input);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto& n = model.nodes[i];
    const auto& out = shapes[i];
    switch (n.kind) {
      case NodeKind::kConv2d: {
        if (c == Convention::kFp32Only && model.is_quantized(n.param("weight"))) break;
        const auto& a = n.conv();
        // N * H' * W' * O * (kh * kw * C / groups)
        total += out[0] * out[2] * out[3] * a.out_channels *
                 (static_cast<std::int64_t>(a.kernel) * a.kernel * a.in_channels / a.groups);
        break;
      }
      case NodeKind::kLinear: {
        if (c == Convention::kFp32Only && model.is_quantized(n.param("weight"))) break;
        const auto& a = n.lin();
        const auto axis = static_cast<std::size_t>(a.axis < 0 ? a.axis + static_cast<int>(out.size()) : a.axis);
        std::int64_t positions = 1;
        for (std::size_t d = 0; d < out.size(); ++d) positions *= d == axis ? 1 : out[d];
        total += positions * a.in_features * a.out_features;
        break;
      }
      case NodeKind::kLayerNorm:
      case NodeKind::kGelu:
      case NodeKind::kGlobalAvgPool:
      case NodeKind::kResidualAdd:
      case NodeKind::kFlatten:
        break;
      default:
        throw InternalError(fmt::format("count_macs: node {} has an unknown kind", n.id));
    }
  }
  return total;
}

std::uint64_t model_size_bytes(const Model& model) { return serialized_size(model); }

std::int64_t count_nonzero(const Model& model, Convention c) {
  std::int64_t n = 0;
  for (const auto& name : model.param_names()) {
    if (model.is_quantized(name)) {
      if (c == Convention::kFp32Only) continue;
      n += model.quantized(name).values.count_nonzero();
    } else {
      n += model.fp32(name).count_nonzero();
    }
  }
  return n;
}

double evaluate(const Model& model, const Dataset& ds, std::int64_t batch_size, const NormalizationConfig& norm) {
  if (ds.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  BatchIterator it(ds, batch_size, std::nullopt, norm);
  Batch b;
  std::int64_t correct = 0;
  while (it.next(b)) {
    const auto pred = argmax_rows(forward(model, b.images));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

Profile profile(const Model& model, const Dataset* ds, Convention c, std::int64_t batch_size,
                const NormalizationConfig& norm) {
  Profile p;
  p.convention = c;
  p.input_shape = {1};
  p.input_shape.insert(p.input_shape.end(), model.meta.input_shape.begin(), model.meta.input_shape.end());
  p.size_bytes = model_size_bytes(model);
  p.counts = {count_params(model, c), count_macs(model, p.input_shape, c), count_nonzero(model, c)};
  p.all_counts = {count_params(model, Convention::kAll), count_macs(model, p.input_shape, Convention::kAll),
                  count_nonzero(model, Convention::kAll)};
  if (ds) p.accuracy_pct = evaluate(model, *ds, batch_size, norm);
  return p;
}

nlohmann::ordered_json to_json(const Profile& p) {
  nlohmann::ordered_json j;
  j["accuracy_pct"] = p.accuracy_pct ? nlohmann::ordered_json(*p.accuracy_pct) : nlohmann::ordered_json(nullptr);
  j["size_bytes"] = p.size_bytes;
  j["size_mb"] = p.size_mb();
  j["params_m"] = p.params_m();
  j["macs_m"] = p.macs_m();
  j["nonzero_params_m"] = p.nonzero_params_m();
  j["counting_convention"] = convention_name(p.convention);
  j["unit"] = "2^20";
  j["input_shape"] = p.input_shape;
  j["counts"] = {{"params", p.counts.params}, {"macs", p.counts.macs}, {"nonzero_params", p.counts.nonzero_params}};
  j["all"] = {{"params", p.all_counts.params},
              {"macs", p.all_counts.macs},
              {"nonzero_params", p.all_counts.nonzero_params}};
  return j;
}

Profile profile_from_json(const nlohmann::json& j) {
  Profile p;
  try {
    if (!j.at("accuracy_pct").is_null()) p.accuracy_pct = j.at("accuracy_pct").get<double>();
    p.size_bytes = j.at("size_bytes").get<std::uint64_t>();
    p.convention = convention_from_name(j.at("counting_convention").get<std::string>());
    p.input_shape = j.at("input_shape").get<Shape>();
    const auto& c = j.at("counts");
    p.counts = {c.at("params").get<std::int64_t>(), c.at("macs").get<std::int64_t>(),
                c.at("nonzero_params").get<std::int64_t>()};
    const auto& a = j.at("all");
    p.all_counts = {a.at("params").get<std::int64_t>(), a.at("macs").get<std::int64_t>(),
                    a.at("nonzero_params").get<std::int64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(fmt::format("bad profile JSON: {}", e.what()));
  }
  return p;
}

}  // namespace cnx
