#include "cnx/executor.hpp"

#include <fmt/format.h>

#include "cnx/errors.hpp"
#include "cnx/kernels.hpp"
#include "cnx/quant.hpp"

namespace cnx {

namespace {

Conv2dParams conv_params(const ConvAttrs& a) { return {a.stride, a.padding, a.groups}; }

void check_input(const Model& model, const Shape& x) {
  Shape want{x.empty() ? 0 : x[0]};
  want.insert(want.end(), model.meta.input_shape.begin(), model.meta.input_shape.end());
  if (x != want || x[0] <= 0) {
    throw DimensionError(fmt::format("model {} expects input [N, {}], got {}", model.meta.config_name,
                                     shape_str(model.meta.input_shape).substr(1), shape_str(x)));
  }
}

// Maps node ids to positions so inputs can be looked up in O(1).
std::unordered_map<int, std::size_t> id_index(const Model& model) {
  std::unordered_map<int, std::size_t> idx;
  for (std::size_t i = 0; i < model.nodes.size(); ++i) idx[model.nodes[i].id] = i;
  return idx;
}

}  // namespace

std::vector<Shape> infer_shapes(const Model& model, const Shape& input) {
  check_input(model, input);
  const auto idx = id_index(model);
  std::vector<Shape> shapes(model.nodes.size());
  auto in_shape = [&](int id) -> const Shape& { return id == kGraphInput ? input : shapes[idx.at(id)]; };
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto& n = model.nodes[i];
    const Shape& x = in_shape(n.inputs.at(0));
    switch (n.kind) {
      case NodeKind::kConv2d: {
        const auto& a = n.conv();
        shapes[i] = conv2d_output_shape(x, {a.out_channels, a.in_channels / a.groups, a.kernel, a.kernel},
                                        conv_params(a));
        break;
      }
      case NodeKind::kLinear: {
        const auto& a = n.lin();
        const auto v = axis_view(x, a.axis);
        if (v.features != a.in_features) {
          throw DimensionError(fmt::format("node {} ({}): expects {} input features, got {}", n.id, n.name,
                                           a.in_features, v.features));
        }
        shapes[i] = x;
        const auto ax = a.axis < 0 ? a.axis + static_cast<int>(x.size()) : a.axis;
        shapes[i][static_cast<std::size_t>(ax)] = a.out_features;
        break;
      }
      case NodeKind::kLayerNorm: {
        const auto v = axis_view(x, n.norm().axis);
        if (v.features != n.norm().features) {
          throw DimensionError(fmt::format("node {} ({}): normalizes {} features, got {}", n.id, n.name,
                                           n.norm().features, v.features));
        }
        shapes[i] = x;
        break;
      }
      case NodeKind::kGelu:
        shapes[i] = x;
        break;
      case NodeKind::kGlobalAvgPool:
        if (x.size() != 4) throw DimensionError(fmt::format("node {}: pooling needs rank 4, got {}", n.id, shape_str(x)));
        shapes[i] = {x[0], x[1]};
        break;
      case NodeKind::kResidualAdd:
        if (x != in_shape(n.inputs.at(1))) {
          throw DimensionError(fmt::format("node {} ({}): residual shapes {} and {} differ", n.id, n.name,
                                           shape_str(x), shape_str(in_shape(n.inputs.at(1)))));
        }
        shapes[i] = x;
        break;
      case NodeKind::kFlatten:
        shapes[i] = {x[0], numel(x) / x[0]};
        break;
    }
  }
  return shapes;
}

Tensor forward(const Model& model, const Tensor& x) {
  check_input(model, x.shape());
  const auto idx = id_index(model);
  const std::size_t count = model.nodes.size();
  // remaining reads per node, so activations can be released early
  std::vector<int> pending(count, 0);
  for (const auto& n : model.nodes) {
    for (int in : n.inputs) {
      if (in != kGraphInput) ++pending[idx.at(in)];
    }
  }
  std::vector<Tensor> values(count);
  auto get = [&](int id) -> const Tensor& { return id == kGraphInput ? x : values[idx.at(id)]; };
  auto release = [&](const LayerNode& n) {
    for (int in : n.inputs) {
      if (in != kGraphInput && --pending[idx.at(in)] == 0) values[idx.at(in)] = Tensor();
    }
  };
  auto bias_of = [&](const LayerNode& n) -> const Tensor* {
    return n.has_param("bias") ? &model.fp32(n.param("bias")) : nullptr;
  };

  for (std::size_t i = 0; i < count; ++i) {
    const auto& n = model.nodes[i];
    const Tensor& in = get(n.inputs.at(0));
    switch (n.kind) {
      case NodeKind::kConv2d:
        values[i] = conv2d(in, model.fp32(n.param("weight")), bias_of(n), conv_params(n.conv()));
        break;
      case NodeKind::kLinear: {
        const auto& wname = n.param("weight");
        if (model.is_quantized(wname)) {
          values[i] = qlinear_forward(in, model.quantized(wname), bias_of(n), n.lin().axis);
        } else {
          values[i] = linear(in, model.fp32(wname), bias_of(n), n.lin().axis);
        }
        break;
      }
      case NodeKind::kLayerNorm:
        values[i] = layer_norm(in, model.fp32(n.param("weight")), model.fp32(n.param("bias")), n.norm().eps,
                               n.norm().axis);
        break;
      case NodeKind::kGelu:
        values[i] = gelu(in);
        break;
      case NodeKind::kGlobalAvgPool:
        values[i] = global_avg_pool(in);
        break;
      case NodeKind::kResidualAdd:
        values[i] = add(in, get(n.inputs.at(1)));
        break;
      case NodeKind::kFlatten:
        values[i] = in.reshaped({in.dim(0), in.size() / in.dim(0)});
        break;
    }
    release(n);
  }
  return std::move(values.back());
}

ParamVars bind_params(Tape& tape, const Model& model, bool requires_grad) {
  ParamVars vars;
  for (const auto& name : model.param_names()) {
    if (model.is_quantized(name)) continue;
    vars.emplace(name, tape.leaf(model.fp32(name), requires_grad));
  }
  return vars;
}

Var forward(Tape& tape, const Model& model, Var x, const ParamVars& params) {
  check_input(model, tape.value(x).shape());
  const auto idx = id_index(model);
  std::vector<Var> values(model.nodes.size());
  auto get = [&](int id) { return id == kGraphInput ? x : values[idx.at(id)]; };
  auto param = [&](const LayerNode& n, const std::string& role) -> Var {
    if (!n.has_param(role)) return Var{};
    const auto& name = n.param(role);
    auto it = params.find(name);
    if (it == params.end()) {
      throw UsageError(fmt::format("parameter {} is not bound on the tape (quantized models cannot be trained)", name));
    }
    return it->second;
  };
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto& n = model.nodes[i];
    const Var in = get(n.inputs.at(0));
    switch (n.kind) {
      case NodeKind::kConv2d:
        values[i] = tape.conv2d(in, param(n, "weight"), param(n, "bias"), conv_params(n.conv()));
        break;
      case NodeKind::kLinear:
        values[i] = tape.linear(in, param(n, "weight"), param(n, "bias"), n.lin().axis);
        break;
      case NodeKind::kLayerNorm:
        values[i] = tape.layer_norm(in, param(n, "weight"), param(n, "bias"), n.norm().eps, n.norm().axis);
        break;
      case NodeKind::kGelu:
        values[i] = tape.gelu(in);
        break;
      case NodeKind::kGlobalAvgPool:
        values[i] = tape.global_avg_pool(in);
        break;
      case NodeKind::kResidualAdd:
        values[i] = tape.add(in, get(n.inputs.at(1)));
        break;
      case NodeKind::kFlatten: {
        const auto& s = tape.value(in).shape();
        values[i] = tape.reshape(in, {s[0], numel(s) / s[0]});
        break;
      }
    }
  }
  return values.back();
}

}  // namespace cnx
