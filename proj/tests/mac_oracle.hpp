#pragma once

// Randomized conv/linear layers whose analytic MAC count is compared with
// the number of multiplies the naive fp64 kernels actually perform.

#include <fmt/format.h>

#include "cnx/executor.hpp"
#include "cnx/profiler.hpp"
#include "support.hpp"

namespace cnx::testing {

struct MacCase {
  std::string label;
  Model model;
  Shape input;
};

inline Model single_conv_model(std::int64_t cin, std::int64_t cout, int k, int stride, int pad, int groups,
                               std::int64_t h, std::int64_t w, std::int64_t classes) {
  Model m;
  m.meta = {"conv", classes, {cin, h, w}};
  LayerNode c;
  c.id = 0;
  c.kind = NodeKind::kConv2d;
  c.name = "conv";
  c.attrs = ConvAttrs{cin, cout, k, stride, pad, groups, true};
  c.inputs = {kGraphInput};
  c.param_refs = {{"weight", "conv.weight"}, {"bias", "conv.bias"}};
  m.add_param("conv.weight", Tensor::zeros({cout, cin / groups, k, k}));
  m.add_param("conv.bias", Tensor::zeros({cout}));
  LayerNode pool;
  pool.id = 1;
  pool.kind = NodeKind::kGlobalAvgPool;
  pool.name = "pool";
  pool.inputs = {0};
  LayerNode fc;
  fc.id = 2;
  fc.kind = NodeKind::kLinear;
  fc.name = "fc";
  fc.attrs = LinearAttrs{cout, classes, -1, true};
  fc.inputs = {1};
  fc.param_refs = {{"weight", "fc.weight"}, {"bias", "fc.bias"}};
  m.add_param("fc.weight", Tensor::zeros({classes, cout}));
  m.add_param("fc.bias", Tensor::zeros({classes}));
  m.nodes = {c, pool, fc};
  m.validate();
  return m;
}

inline std::vector<MacCase> mac_cases(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(1, 4);
  std::vector<MacCase> out;
  for (int i = 0; i < count; ++i) {
    const bool depthwise = i % 3 == 0;
    const std::int64_t cin = 2 * u(rng);
    const int groups = depthwise ? static_cast<int>(cin) : (i % 3 == 1 ? 2 : 1);
    const std::int64_t cout = depthwise ? cin : 2 * u(rng);
    const int k = u(rng), stride = 1 + (u(rng) > 2), pad = u(rng) - 1;
    // sizes that tile exactly: (h + 2p - k) divisible by the stride
    auto tiled = [&](int extra) -> std::int64_t {
      std::int64_t h = k - 2 * pad + stride * extra;
      while (h < 1) h += stride;
      return h;
    };
    const std::int64_t h = tiled(u(rng)), w = tiled(u(rng));
    const std::int64_t n = u(rng), classes = 1 + u(rng);
    out.push_back({fmt::format("conv x[{},{},{},{}] o{} k{} s{} p{} g{} -> fc {}", n, cin, h, w, cout, k, stride, pad,
                               groups, classes),
                   single_conv_model(cin, cout, k, stride, pad, groups, h, w, classes),
                   {n, cin, h, w}});
  }
  return out;
}

// Runs the model's Conv2d/Linear nodes through the counting oracles.
inline std::int64_t oracle_macs(const Model& m, const Shape& input) {
  const auto shapes = infer_shapes(m, input);
  std::int64_t mults = 0;
  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    const auto& n = m.nodes[i];
    const Shape in = n.inputs[0] == kGraphInput ? input : shapes[m.node_index(n.inputs[0])];
    const std::vector<double> x(static_cast<std::size_t>(numel(in)), 1.0);
    Shape os;
    if (n.kind == NodeKind::kConv2d) {
      const auto& ws = m.param_shape(n.param("weight"));
      naive_conv(x, in, std::vector<double>(static_cast<std::size_t>(numel(ws)), 1.0), ws, nullptr, n.conv().stride,
                 n.conv().padding, n.conv().groups, os, &mults);
    } else if (n.kind == NodeKind::kLinear) {
      const auto& ws = m.param_shape(n.param("weight"));
      naive_linear(x, in, n.lin().axis, std::vector<double>(static_cast<std::size_t>(numel(ws)), 1.0), ws[0], nullptr,
                   os, &mults);
    }
  }
  return mults;
}

}  // namespace cnx::testing
