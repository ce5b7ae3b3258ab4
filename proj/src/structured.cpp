#include "cnx/structured.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>
#include <numeric>
#include <set>

#include "cnx/errors.hpp"
#include "cnx/executor.hpp"

namespace cnx {

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      auto& p = parent[static_cast<std::size_t>(x)];
      p = parent[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  }
  // keeps the smaller index as root so group numbering follows graph order
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
  }
};

int normalized_axis(int axis, std::size_t rank) { return axis < 0 ? axis + static_cast<int>(rank) : axis; }

}  // namespace

DependencyGraph analyze_dependencies(const Model& model) {
  Shape input{1};
  input.insert(input.end(), model.meta.input_shape.begin(), model.meta.input_shape.end());
  const auto shapes = infer_shapes(model, input);
  // value 0 is the graph input, value i + 1 the output of nodes[i]
  const auto nvalues = model.nodes.size() + 1;
  UnionFind uf(nvalues);
  std::vector<Shape> value_shape(nvalues);
  value_shape[0] = input;
  for (std::size_t i = 0; i < model.nodes.size(); ++i) value_shape[i + 1] = shapes[i];

  std::map<int, std::size_t> index_of;
  for (std::size_t i = 0; i < model.nodes.size(); ++i) index_of[model.nodes[i].id] = i;
  auto value_of = [&](int id) { return id == kGraphInput ? 0 : static_cast<int>(index_of.at(id)) + 1; };

  std::vector<int> unknown, normalized;
  std::vector<std::pair<int, int>> consumed;  // (value, consumer node id)
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto& n = model.nodes[i];
    const int out = static_cast<int>(i) + 1;
    const int in = value_of(n.inputs.at(0));
    const auto in_rank = value_shape[static_cast<std::size_t>(in)].size();
    switch (n.kind) {
      case NodeKind::kConv2d:
        if (n.conv().groups == 1) {
          consumed.emplace_back(in, n.id);
        } else if (n.conv().depthwise()) {
          uf.unite(in, out);
        } else {
          unknown.push_back(in);
          unknown.push_back(out);
        }
        break;
      case NodeKind::kLinear:
        if (normalized_axis(n.lin().axis, in_rank) == 1) {
          consumed.emplace_back(in, n.id);
        } else {
          unknown.push_back(in);
          unknown.push_back(out);
        }
        break;
      case NodeKind::kLayerNorm:
        uf.unite(in, out);
        if (normalized_axis(n.norm().axis, in_rank) == 1) {
          normalized.push_back(in);
        } else {
          unknown.push_back(in);
        }
        break;
      case NodeKind::kGelu:
      case NodeKind::kGlobalAvgPool:
        uf.unite(in, out);
        break;
      case NodeKind::kFlatten: {
        const auto& s = value_shape[static_cast<std::size_t>(in)];
        const bool keeps_channels = s.size() == 2 || (s.size() == 4 && s[2] * s[3] == 1);
        uf.unite(in, out);
        if (!keeps_channels) unknown.push_back(in);
        break;
      }
      case NodeKind::kResidualAdd:
        uf.unite(in, out);
        uf.unite(value_of(n.inputs.at(1)), out);
        break;
      default:
        unknown.push_back(in);
        unknown.push_back(out);
    }
  }

  DependencyGraph g;
  std::map<int, int> group_of_root;
  auto group_for = [&](int value) -> NodeGroup& {
    const int root = uf.find(value);
    auto [it, fresh] = group_of_root.emplace(root, static_cast<int>(g.node_groups.size()));
    if (fresh) {
      NodeGroup ng;
      ng.id = it->second;
      ng.channels = value_shape[static_cast<std::size_t>(value)].at(1);
      g.node_groups.push_back(ng);
    }
    return g.node_groups[static_cast<std::size_t>(it->second)];
  };
  for (std::size_t v = 0; v < nvalues; ++v) {
    auto& ng = group_for(static_cast<int>(v));
    const auto c = value_shape[v].at(1);
    if (c != ng.channels) {
      throw InternalError(fmt::format("channel group {} mixes widths {} and {}", ng.id, ng.channels, c));
    }
    if (v == 0) {
      ng.members.push_back(kGraphInput);
      g.input_group = ng.id;
    } else {
      ng.members.push_back(model.nodes[v - 1].id);
      g.output_group.push_back(ng.id);
    }
  }
  for (auto [value, node] : consumed) group_for(value).consumers.push_back(node);
  for (int v : unknown) group_for(v).contains_unknown = true;
  for (int v : normalized) group_for(v).normalized = true;
  group_for(0).input_adjacent = true;
  group_for(static_cast<int>(nvalues) - 1).output_adjacent = true;
  for (auto& ng : g.node_groups) {
    ng.prunable = !ng.output_adjacent && !ng.input_adjacent && !ng.contains_unknown && !ng.normalized;
  }
  return g;
}

std::vector<PruneGroup> partition_pzigs(const DependencyGraph& graph, const Model& model) {
  std::vector<PruneGroup> out;
  for (const auto& ng : graph.node_groups) {
    if (!ng.prunable) continue;
    for (std::int64_t c = 0; c < ng.channels; ++c) {
      PruneGroup pg;
      pg.id = static_cast<int>(out.size());
      pg.node_group = ng.id;
      pg.channel = c;
      for (int m : ng.members) {
        if (m == kGraphInput) continue;
        const auto& n = model.node(m);
        if (n.kind != NodeKind::kConv2d && n.kind != NodeKind::kLinear && n.kind != NodeKind::kLayerNorm) continue;
        for (const auto& [role, name] : n.param_refs) pg.slices.push_back({name, 0, c});
      }
      for (int k : ng.consumers) pg.slices.push_back({model.node(k).param("weight"), 1, c});
      out.push_back(std::move(pg));
    }
  }
  return out;
}

std::vector<std::int64_t> slice_offsets(const Shape& shape, int axis, std::int64_t index) {
  const auto a = static_cast<std::size_t>(axis);
  if (a >= shape.size() || index < 0 || index >= shape[a]) {
    throw InternalError(fmt::format("slice {}[{}] outside shape {}", axis, index, shape_str(shape)));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < a; ++i) outer *= shape[i];
  for (std::size_t i = a + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<std::int64_t> offs;
  offs.reserve(static_cast<std::size_t>(outer * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    const auto base = (o * shape[a] + index) * inner;
    for (std::int64_t i = 0; i < inner; ++i) offs.push_back(base + i);
  }
  return offs;
}

void zero_group(Model& model, const PruneGroup& g) {
  for (const auto& s : g.slices) {
    auto& t = model.fp32(s.param);
    auto d = t.data();
    for (auto o : slice_offsets(t.shape(), s.axis, s.index)) d[static_cast<std::size_t>(o)] = 0.0f;
  }
}

namespace {

bool slice_is_zero(const Model& model, const Slice& s) {
  const auto& t = model.fp32(s.param);
  auto d = t.data();
  for (auto o : slice_offsets(t.shape(), s.axis, s.index)) {
    if (d[static_cast<std::size_t>(o)] != 0.0f) return false;
  }
  return true;
}

}  // namespace

bool group_is_zero(const Model& model, const PruneGroup& g) {
  return std::all_of(g.slices.begin(), g.slices.end(), [&](const Slice& s) { return slice_is_zero(model, s); });
}

double group_norm(const Model& model, const PruneGroup& g) {
  double ss = 0.0;
  for (const auto& s : g.slices) {
    const auto& t = model.fp32(s.param);
    auto d = t.data();
    for (auto o : slice_offsets(t.shape(), s.axis, s.index)) {
      const double v = d[static_cast<std::size_t>(o)];
      ss += v * v;
    }
  }
  return std::sqrt(ss);
}

DhspgConfig DhspgConfig::from_json(const nlohmann::json& j) {
  DhspgConfig c;
  try {
    c.target_group_sparsity = j.value("target_group_sparsity", c.target_group_sparsity);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.epsilon_projection = j.value("epsilon_projection", c.epsilon_projection);
    c.lambda_penalty = j.value("lambda_penalty", c.lambda_penalty);
    c.saliency = j.value("saliency", c.saliency);
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad DHSPG config: {}", e.what()));
  }
  c.validate();
  return c;
}

nlohmann::json DhspgConfig::to_json() const {
  return {{"target_group_sparsity", target_group_sparsity},
          {"warmup_steps", warmup_steps},
          {"epsilon_projection", epsilon_projection},
          {"lambda_penalty", lambda_penalty},
          {"saliency", saliency},
          {"train", train.to_json()}};
}

void DhspgConfig::validate() const {
  if (!(target_group_sparsity >= 0.0 && target_group_sparsity <= 1.0)) {
    throw ConfigError(fmt::format("target_group_sparsity {} outside [0, 1]", target_group_sparsity));
  }
  if (!(epsilon_projection >= 0.0 && epsilon_projection < 1.0)) {
    throw ConfigError(fmt::format("epsilon_projection {} outside [0, 1)", epsilon_projection));
  }
  if (!(lambda_penalty >= 0.0)) throw ConfigError("lambda_penalty must be >= 0");
  if (saliency != "l2" && saliency != "l2_mean") throw ConfigError(fmt::format("unknown saliency '{}'", saliency));
}

bool half_space_project(std::span<float> x, std::span<const float> trial, double epsilon) {
  if (x.size() != trial.size()) throw InternalError("half_space_project: size mismatch");
  double dot = 0.0, xx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += static_cast<double>(trial[i]) * x[i];
    xx += static_cast<double>(x[i]) * x[i];
  }
  const bool project = dot < epsilon * xx || xx == 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = project ? 0.0f : trial[i];
  return project;
}

std::vector<double> saliency_scores(const Model& model, const std::vector<PruneGroup>& groups, const std::string& metric) {
  std::vector<double> s;
  s.reserve(groups.size());
  for (const auto& g : groups) {
    double v = group_norm(model, g);
    if (metric == "l2_mean") {
      std::int64_t n = 0;
      for (const auto& sl : g.slices) {
        const auto& shape = model.param_shape(sl.param);
        n += numel(shape) / shape[static_cast<std::size_t>(sl.axis)];
      }
      v /= std::sqrt(static_cast<double>(std::max<std::int64_t>(n, 1)));
    } else if (metric != "l2") {
      throw ConfigError(fmt::format("unknown saliency '{}'", metric));
    }
    s.push_back(v);
  }
  return s;
}

namespace {

// Element positions of one group inside the trainer's parameter list.
struct GroupElems {
  std::vector<std::pair<std::size_t, std::size_t>> at;  // (param slot, flat offset)
};

std::vector<GroupElems> locate(const Model& model, const std::vector<PruneGroup>& groups) {
  const auto names = model.fp32_param_names();
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < names.size(); ++i) slot[names[i]] = i;
  std::vector<GroupElems> out(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& s : groups[g].slices) {
      auto it = slot.find(s.param);
      if (it == slot.end()) throw UsageError(fmt::format("group parameter {} is not a float32 parameter", s.param));
      for (auto o : slice_offsets(model.param_shape(s.param), s.axis, s.index)) {
        out[g].at.emplace_back(it->second, static_cast<std::size_t>(o));
      }
    }
  }
  return out;
}

}  // namespace

DhspgResult dhspg_train(const Model& model, const std::vector<PruneGroup>& groups, const Dataset& train_data,
                        const DhspgConfig& cfg) {
  cfg.validate();
  DhspgResult r{model, {}, 0, 0, 0, {}, {}};
  if (groups.empty()) {
    r.warnings.push_back("no prunable groups: model returned unchanged");
    return r;
  }
  if (cfg.target_group_sparsity >= 1.0) r.warnings.push_back("target sparsity 1.0 removes every prunable channel");

  const auto elems = locate(model, groups);
  const auto n_groups = static_cast<double>(groups.size());
  const auto k = static_cast<std::size_t>(std::ceil(cfg.target_group_sparsity * n_groups - 1e-9));
  r.total_steps = total_steps(train_data, cfg.train);
  r.warmup_steps = cfg.warmup_steps < 0 ? r.total_steps / 4 : std::min(cfg.warmup_steps, r.total_steps);

  Model& m = r.model;
  bool selected = false;
  std::vector<std::size_t> redundant;
  std::vector<char> zeroed(groups.size(), 0);
  auto select = [&] {
    selected = true;
    if (k == 0) return;
    const auto score = saliency_scores(m, groups, cfg.saliency);
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });
    redundant.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(redundant.begin(), redundant.end());
  };

  // pre-step values and gradients of the redundant groups, gathered per group
  std::vector<std::vector<float>> x_old, g_old;
  StepHooks hooks;
  hooks.before_step = [&](const StepState& st) {
    if (!selected && st.step >= r.warmup_steps) select();
    x_old.assign(redundant.size(), {});
    g_old.assign(redundant.size(), {});
    for (std::size_t i = 0; i < redundant.size(); ++i) {
      const auto gi = redundant[i];
      if (zeroed[gi]) continue;
      for (auto [p, o] : elems[gi].at) {
        x_old[i].push_back(st.values[p][o]);
        g_old[i].push_back(st.grads[p][o]);
      }
    }
  };
  hooks.after_step = [&](const StepState& st) {
    std::vector<float> trial;
    for (std::size_t i = 0; i < redundant.size(); ++i) {
      const auto gi = redundant[i];
      const auto& at = elems[gi].at;
      if (!zeroed[gi]) {
        auto& x = x_old[i];
        double nrm = 0.0;
        for (float v : x) nrm += static_cast<double>(v) * v;
        nrm = std::sqrt(nrm);
        trial.resize(x.size());
        for (std::size_t e = 0; e < x.size(); ++e) {
          const double pull = nrm > 0.0 ? cfg.lambda_penalty * x[e] / nrm : 0.0;
          trial[e] = static_cast<float>(x[e] - static_cast<double>(st.lr) * g_old[i][e] - pull);
        }
        zeroed[gi] = half_space_project(x, trial, cfg.epsilon_projection);
        for (std::size_t e = 0; e < at.size(); ++e) st.values[at[e].first][at[e].second] = x[e];
      } else {
        for (auto [p, o] : at) st.values[p][o] = 0.0f;
      }
    }
  };

  r.epochs = train(m, train_data, cfg.train, hooks);
  if (!selected) select();
  for (auto gi : redundant) {
    if (!group_is_zero(m, groups[gi])) {
      zero_group(m, groups[gi]);
      ++r.forced_projections;
    }
    r.redundant.push_back(groups[gi].id);
  }
  return r;
}

namespace {

// Copy of `t` without the indices marked in `drop` along `axis`.
Tensor drop_indices(const Tensor& t, int axis, const std::vector<char>& drop) {
  const auto& shape = t.shape();
  const auto a = static_cast<std::size_t>(axis);
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < a; ++i) outer *= shape[i];
  for (std::size_t i = a + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto dim = shape[a];
  const auto kept = static_cast<std::int64_t>(std::count(drop.begin(), drop.end(), 0));
  Shape ns = shape;
  ns[a] = kept;
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(outer * kept * inner));
  auto d = t.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t c = 0; c < dim; ++c) {
      if (drop[static_cast<std::size_t>(c)]) continue;
      const auto base = static_cast<std::size_t>((o * dim + c) * inner);
      out.insert(out.end(), d.begin() + static_cast<std::ptrdiff_t>(base),
                 d.begin() + static_cast<std::ptrdiff_t>(base + static_cast<std::size_t>(inner)));
    }
  }
  return Tensor::from(ns, std::move(out));
}

}  // namespace

Model extract_subnetwork(const Model& model, const std::vector<PruneGroup>& groups) {
  std::set<std::string> weight_params;
  for (const auto& n : model.nodes) {
    if ((n.kind == NodeKind::kConv2d || n.kind == NodeKind::kLinear) && n.has_param("weight")) {
      weight_params.insert(n.param("weight"));
    }
  }
  // (param, axis) -> channels to drop
  std::map<std::pair<std::string, int>, std::vector<char>> drops;
  for (const auto& g : groups) {
    bool all_zero = true, weight_slice_zero = false;
    for (const auto& s : g.slices) {
      const bool z = slice_is_zero(model, s);
      all_zero = all_zero && z;
      if (z && weight_params.count(s.param)) weight_slice_zero = true;
    }
    if (!all_zero) {
      if (weight_slice_zero) {
        throw ConsistencyError(fmt::format("group {} (node group {}, channel {}) is only partly zero", g.id,
                                           g.node_group, g.channel));
      }
      continue;
    }
    for (const auto& s : g.slices) {
      auto& d = drops[{s.param, s.axis}];
      if (d.empty()) d.assign(static_cast<std::size_t>(model.param_shape(s.param)[static_cast<std::size_t>(s.axis)]), 0);
      d[static_cast<std::size_t>(s.index)] = 1;
    }
  }
  if (drops.empty()) return model;

  Model out = model;
  for (const auto& [key, drop] : drops) {
    out.set_fp32(key.first, drop_indices(out.fp32(key.first), key.second, drop));
  }
  for (auto& n : out.nodes) {
    switch (n.kind) {
      case NodeKind::kConv2d: {
        auto& a = n.conv();
        const bool dw = a.depthwise();
        const auto& w = out.param_shape(n.param("weight"));
        a.out_channels = w[0];
        if (dw) {
          a.in_channels = a.out_channels;
          a.groups = static_cast<int>(a.out_channels);
        } else {
          a.in_channels = w[1] * a.groups;
        }
        break;
      }
      case NodeKind::kLinear: {
        const auto& w = out.param_shape(n.param("weight"));
        n.lin().out_features = w[0];
        n.lin().in_features = w[1];
        break;
      }
      case NodeKind::kLayerNorm:
        n.norm().features = out.param_shape(n.param("weight"))[0];
        break;
      default:
        break;
    }
  }
  out.validate();
  return out;
}

std::vector<LayerWidth> pruned_architecture(const Model& before, const Model& after) {
  auto widths = [](const LayerNode& n) -> std::pair<std::int64_t, std::int64_t> {
    switch (n.kind) {
      case NodeKind::kConv2d: return {n.conv().in_channels, n.conv().out_channels};
      case NodeKind::kLinear: return {n.lin().in_features, n.lin().out_features};
      case NodeKind::kLayerNorm: return {n.norm().features, n.norm().features};
      default: return {0, 0};
    }
  };
  std::vector<LayerWidth> out;
  for (const auto& n : before.nodes) {
    if (n.kind != NodeKind::kConv2d && n.kind != NodeKind::kLinear && n.kind != NodeKind::kLayerNorm) continue;
    const auto [ib, ob] = widths(n);
    const auto [ia, oa] = widths(after.node(n.id));
    out.push_back({n.id, n.name, kind_name(n.kind), ib, ob, ia, oa});
  }
  return out;
}

nlohmann::ordered_json to_json(const std::vector<LayerWidth>& widths) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& w : widths) {
    arr.push_back({{"node", w.node},
                   {"name", w.name},
                   {"kind", w.kind},
                   {"in_before", w.in_before},
                   {"out_before", w.out_before},
                   {"in_after", w.in_after},
                   {"out_after", w.out_after}});
  }
  return arr;
}

std::string to_table(const std::vector<LayerWidth>& widths) {
  std::size_t name_w = 4;
  for (const auto& w : widths) name_w = std::max(name_w, w.name.size());
  std::string s = fmt::format("{:<{}}  {:<9}  {:>13}  {:>13}\n", "node", name_w, "kind", "in", "out");
  for (const auto& w : widths) {
    auto cell = [](std::int64_t b, std::int64_t a) { return b == a ? fmt::format("{}", b) : fmt::format("{} -> {}", b, a); };
    s += fmt::format("{:<{}}  {:<9}  {:>13}  {:>13}\n", w.name, name_w, w.kind, cell(w.in_before, w.in_after),
                     cell(w.out_before, w.out_after));
  }
  return s;
}

}  // namespace cnx
