#include <doctest.h>

#include "cnx/convnext.hpp"
#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "support.hpp"

using namespace cnx;
using namespace cnx::testing;

namespace {

std::int64_t total_params(const Model& m) {
  std::int64_t n = 0;
  for (const auto& p : m.param_names()) n += numel(m.param_shape(p));
  return n;
}

// fp64 replay of the whole graph using the test oracles and textbook formulas.
std::vector<double> replay_f64(const Model& m, const Tensor& x) {
  std::map<int, std::pair<std::vector<double>, Shape>> vals;
  vals[kGraphInput] = {to_f64(x), x.shape()};
  for (const auto& n : m.nodes) {
    const auto& [in, s] = vals.at(n.inputs[0]);
    std::vector<double> out;
    Shape os = s;
    switch (n.kind) {
      case NodeKind::kConv2d: {
        const auto& a = n.conv();
        const auto bias = to_f64(m.fp32(n.param("bias")));
        out = naive_conv(in, s, to_f64(m.fp32(n.param("weight"))), m.param_shape(n.param("weight")), &bias, a.stride,
                         a.padding, a.groups, os);
        break;
      }
      case NodeKind::kLinear: {
        const auto bias = to_f64(m.fp32(n.param("bias")));
        out = naive_linear(in, s, n.lin().axis, to_f64(m.fp32(n.param("weight"))), n.lin().out_features, &bias, os);
        break;
      }
      case NodeKind::kLayerNorm: {
        const auto g = to_f64(m.fp32(n.param("weight")));
        const auto b = to_f64(m.fp32(n.param("bias")));
        const auto v = axis_view(s, n.norm().axis);
        out.resize(in.size());
        for (std::int64_t o = 0; o < v.outer; ++o)
          for (std::int64_t p = 0; p < v.inner; ++p) {
            auto at = [&](std::int64_t c) { return static_cast<std::size_t>((o * v.features + c) * v.inner + p); };
            double mean = 0, var = 0;
            for (std::int64_t c = 0; c < v.features; ++c) mean += in[at(c)];
            mean /= static_cast<double>(v.features);
            for (std::int64_t c = 0; c < v.features; ++c) var += (in[at(c)] - mean) * (in[at(c)] - mean);
            var /= static_cast<double>(v.features);
            for (std::int64_t c = 0; c < v.features; ++c) {
              out[at(c)] = (in[at(c)] - mean) / std::sqrt(var + n.norm().eps) * g[static_cast<std::size_t>(c)] +
                           b[static_cast<std::size_t>(c)];
            }
          }
        break;
      }
      case NodeKind::kGelu:
        for (double v : in) out.push_back(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
        break;
      case NodeKind::kGlobalAvgPool: {
        const auto hw = s[2] * s[3];
        os = {s[0], s[1]};
        for (std::int64_t i = 0; i < s[0] * s[1]; ++i) {
          double acc = 0;
          for (std::int64_t j = 0; j < hw; ++j) acc += in[static_cast<std::size_t>(i * hw + j)];
          out.push_back(acc / static_cast<double>(hw));
        }
        break;
      }
      case NodeKind::kResidualAdd: {
        const auto& other = vals.at(n.inputs[1]).first;
        for (std::size_t i = 0; i < in.size(); ++i) out.push_back(in[i] + other[i]);
        break;
      }
      case NodeKind::kFlatten:
        out = in;
        os = {s[0], numel(s) / s[0]};
        break;
    }
    vals[n.id] = {std::move(out), os};
  }
  return vals.at(m.nodes.back().id).first;
}

}  // namespace

TEST_CASE("preset parameter counts") {
  CHECK(total_params(build_convnext(convnext_preset("small"), 1)) == 49448842);
  CHECK(total_params(build_convnext(convnext_preset("micro"), 1)) == 671578);
  CHECK_THROWS_AS(convnext_preset("huge"), ConfigError);
}

TEST_CASE("parameter counts and shapes are a function of the config only") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) {
    const auto cfg = random_micro_config(rng);
    const Model a = build_convnext(cfg, 1), b = build_convnext(cfg, 2);
    REQUIRE(a.param_names() == b.param_names());
    bool any_diff = false;
    for (const auto& p : a.param_names()) {
      CHECK(a.param_shape(p) == b.param_shape(p));
      any_diff = any_diff || !(a.fp32(p) == b.fp32(p));
    }
    CHECK(any_diff);
  }
}

TEST_CASE("initialization: truncated normal weights, zero biases, unit norms") {
  const Model m = build_convnext(convnext_preset("micro"), 9);
  for (const auto& v : m.fp32("stages.2.blocks.1.pwconv1.weight").data()) CHECK(std::fabs(v) <= 0.04f + 1e-7f);
  CHECK(m.fp32("stages.2.blocks.1.pwconv1.bias").count_nonzero() == 0);
  CHECK(m.fp32("head.norm.weight").data()[0] == 1.0f);
}

TEST_CASE("config validation") {
  ConvNeXtConfig c = convnext_preset("micro");
  c.input = {3, 30, 30};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = convnext_preset("micro");
  c.widths[1] = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const auto j = to_json(convnext_preset("tiny"));
  const auto back = convnext_config_from_json(j);
  CHECK(back.depths == convnext_preset("tiny").depths);
  CHECK(convnext_config_from_json({{"preset", "micro"}}).widths[0] == 24);
}

TEST_CASE("forward shape, uniform logits for zero params, fp64 replay") {
  Model m = build_convnext(convnext_preset("micro"), 3);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({3, 3, 32, 32}, rng);
  CHECK(forward(m, x).shape() == Shape{3, 10});
  CHECK_THROWS_AS(forward(m, random_tensor({1, 3, 16, 16}, rng)), DimensionError);

  Model z = m;
  for (const auto& p : z.param_names()) z.set_fp32(p, Tensor::zeros(z.param_shape(p)));
  const Tensor zl = forward(z, x);
  for (float v : zl.data()) CHECK(v == zl.data()[0]);

  randomize(m, 5, 0.1f);
  const Tensor y = forward(m, x);
  const auto ref = replay_f64(m, x);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-4).scale(1.0));
}

TEST_CASE("validate catches broken graphs") {
  Model m = build_convnext(convnext_preset("micro"), 1);
  SUBCASE("dangling input") {
    m.nodes[3].inputs = {9999};
    CHECK_THROWS_AS(m.validate(), InternalError);
  }
  SUBCASE("shape mismatch") {
    m.nodes[0].conv().out_channels = 7;
    CHECK_THROWS_AS(m.validate(), InternalError);
  }
  SUBCASE("unreferenced parameter") {
    m.add_param("orphan", Tensor::zeros({2}));
    CHECK_THROWS_AS(m.validate(), InternalError);
  }
}
