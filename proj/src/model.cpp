#include "cnx/model.hpp"

#include <algorithm>
#include <array>
#include <fmt/format.h>
#include <set>

#include "cnx/errors.hpp"

namespace cnx {

namespace {

constexpr std::array<std::pair<NodeKind, const char*>, 7> kKindNames{{
    {NodeKind::kConv2d, "Conv2d"},
    {NodeKind::kLinear, "Linear"},
    {NodeKind::kLayerNorm, "LayerNorm"},
    {NodeKind::kGelu, "GELU"},
    {NodeKind::kGlobalAvgPool, "GlobalAvgPool"},
    {NodeKind::kResidualAdd, "ResidualAdd"},
    {NodeKind::kFlatten, "Flatten"},
}};

void expect_shape(const Model& m, const LayerNode& n, const std::string& role, const Shape& want) {
  if (!n.has_param(role)) throw InternalError(fmt::format("node {} ({}) lacks '{}' parameter", n.id, n.name, role));
  const auto& name = n.param(role);
  if (!m.has_param(name)) throw InternalError(fmt::format("node {} references missing parameter {}", n.id, name));
  const auto& got = m.param_shape(name);
  if (got != want) {
    throw InternalError(fmt::format("parameter {} has shape {}, node {} attributes imply {}", name, shape_str(got),
                                    n.id, shape_str(want)));
  }
}

}  // namespace

const char* kind_name(NodeKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

NodeKind kind_from_name(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  throw InputError(fmt::format("unknown node kind '{}'", name));
}

const std::string& LayerNode::param(const std::string& role) const {
  auto it = param_refs.find(role);
  if (it == param_refs.end()) throw InternalError(fmt::format("node {} ({}) has no '{}' parameter", id, name, role));
  return it->second;
}

void Model::add_param(std::string name, Tensor value) {
  if (has_param(name)) throw InternalError(fmt::format("duplicate parameter {}", name));
  if (!value.is_float()) throw InternalError(fmt::format("parameter {} must be float32", name));
  value.drop_grad();
  order_.push_back(name);
  index_.emplace(std::move(name), Slot{std::move(value)});
}

bool Model::is_quantized(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InternalError(fmt::format("unknown parameter {}", name));
  return std::holds_alternative<QuantizedTensor>(it->second.data);
}

Tensor& Model::fp32(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InternalError(fmt::format("unknown parameter {}", name));
  if (auto* t = std::get_if<Tensor>(&it->second.data)) return *t;
  throw InternalError(fmt::format("parameter {} is quantized", name));
}

const Tensor& Model::fp32(const std::string& name) const { return const_cast<Model*>(this)->fp32(name); }

const QuantizedTensor& Model::quantized(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InternalError(fmt::format("unknown parameter {}", name));
  if (auto* q = std::get_if<QuantizedTensor>(&it->second.data)) return *q;
  throw InternalError(fmt::format("parameter {} is not quantized", name));
}

const Shape& Model::param_shape(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InternalError(fmt::format("unknown parameter {}", name));
  if (auto* t = std::get_if<Tensor>(&it->second.data)) return t->shape();
  return std::get<QuantizedTensor>(it->second.data).values.shape();
}

void Model::set_fp32(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InternalError(fmt::format("unknown parameter {}", name));
  value.drop_grad();
  it->second.data = std::move(value);
}

void Model::set_quantized(const std::string& name, QuantizedTensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InternalError(fmt::format("unknown parameter {}", name));
  if (value.values.is_float()) throw InternalError(fmt::format("quantized parameter {} must hold int8", name));
  it->second.data = std::move(value);
}

void Model::remove_param(const std::string& name) {
  if (index_.erase(name) == 0) throw InternalError(fmt::format("unknown parameter {}", name));
  order_.erase(std::find(order_.begin(), order_.end(), name));
}

std::vector<std::string> Model::fp32_param_names() const {
  std::vector<std::string> out;
  for (const auto& n : order_) {
    if (!is_quantized(n)) out.push_back(n);
  }
  return out;
}

std::size_t Model::node_index(int id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < nodes.size() && nodes[static_cast<std::size_t>(id)].id == id) {
    return static_cast<std::size_t>(id);
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  throw InternalError(fmt::format("no node with id {}", id));
}

const LayerNode& Model::node(int id) const { return nodes[node_index(id)]; }

std::vector<int> Model::consumers(int id) const {
  std::vector<int> out;
  for (const auto& n : nodes) {
    if (std::find(n.inputs.begin(), n.inputs.end(), id) != n.inputs.end()) out.push_back(n.id);
  }
  return out;
}

void Model::validate() const {
  if (nodes.empty()) throw InternalError("model has no nodes");
  std::set<int> seen;
  std::set<std::string> referenced;
  for (const auto& n : nodes) {
    if (seen.count(n.id)) throw InternalError(fmt::format("duplicate node id {}", n.id));
    for (int in : n.inputs) {
      if (in != kGraphInput && !seen.count(in)) {
        throw InternalError(fmt::format("node {} reads {} which is not an earlier node", n.id, in));
      }
    }
    seen.insert(n.id);
    const std::size_t want_inputs = n.kind == NodeKind::kResidualAdd ? 2 : 1;
    if (n.inputs.size() != want_inputs) {
      throw InternalError(fmt::format("node {} ({}) has {} inputs, expected {}", n.id, kind_name(n.kind),
                                      n.inputs.size(), want_inputs));
    }
    switch (n.kind) {
      case NodeKind::kConv2d: {
        if (!std::holds_alternative<ConvAttrs>(n.attrs)) throw InternalError(fmt::format("node {} lacks conv attrs", n.id));
        const auto& a = n.conv();
        if (a.groups < 1 || a.in_channels % a.groups || a.out_channels % a.groups) {
          throw InternalError(fmt::format("node {}: groups {} do not divide channels", n.id, a.groups));
        }
        expect_shape(*this, n, "weight", {a.out_channels, a.in_channels / a.groups, a.kernel, a.kernel});
        if (a.bias) expect_shape(*this, n, "bias", {a.out_channels});
        break;
      }
      case NodeKind::kLinear: {
        if (!std::holds_alternative<LinearAttrs>(n.attrs)) throw InternalError(fmt::format("node {} lacks linear attrs", n.id));
        const auto& a = n.lin();
        expect_shape(*this, n, "weight", {a.out_features, a.in_features});
        if (a.bias) expect_shape(*this, n, "bias", {a.out_features});
        break;
      }
      case NodeKind::kLayerNorm: {
        if (!std::holds_alternative<NormAttrs>(n.attrs)) throw InternalError(fmt::format("node {} lacks norm attrs", n.id));
        expect_shape(*this, n, "weight", {n.norm().features});
        expect_shape(*this, n, "bias", {n.norm().features});
        break;
      }
      default:
        if (!n.param_refs.empty()) throw InternalError(fmt::format("node {} ({}) cannot own parameters", n.id, n.name));
    }
    for (const auto& [role, name] : n.param_refs) referenced.insert(name);
  }
  for (const auto& name : order_) {
    if (!referenced.count(name)) throw InternalError(fmt::format("parameter {} is not referenced by any node", name));
  }
  int terminals = 0;
  const LayerNode* terminal = nullptr;
  for (const auto& n : nodes) {
    if (consumers(n.id).empty()) {
      ++terminals;
      terminal = &n;
    }
  }
  if (terminals != 1) throw InternalError(fmt::format("model has {} terminal nodes, expected 1", terminals));
  if (terminal->kind != NodeKind::kLinear || terminal->lin().out_features != meta.num_classes) {
    throw InternalError(fmt::format("terminal node {} must be a Linear with {} outputs", terminal->id, meta.num_classes));
  }
  if (terminal != &nodes.back()) throw InternalError("terminal node must be last in order");
}

}  // namespace cnx
