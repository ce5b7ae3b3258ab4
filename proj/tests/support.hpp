#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cnx/convnext.hpp"
#include "cnx/kernels.hpp"
#include "cnx/model.hpp"
#include "cnx/tensor.hpp"

namespace cnx::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, float scale = 1.0f) {
  Tensor t = Tensor::zeros(shape);
  std::normal_distribution<float> d(0.0f, scale);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::fabs(ad[i] - bd[i]));
  return m;
}

// Replaces every float parameter (biases and norm params included) with
// random values so that no test passes because something starts at zero.
inline void randomize(Model& m, std::uint64_t seed, float scale = 0.2f) {
  std::mt19937_64 rng(seed);
  for (const auto& name : m.fp32_param_names()) {
    auto& t = m.fp32(name);
    const bool norm_weight = name.find("norm") != std::string::npos && name.ends_with(".weight");
    std::normal_distribution<float> d(norm_weight ? 1.0f : 0.0f, scale);
    for (auto& v : t.data()) v = d(rng);
  }
}

// Small ConvNeXt variants: 1-2 blocks per stage, narrow widths.
inline ConvNeXtConfig random_micro_config(std::mt19937_64& rng) {
  ConvNeXtConfig c;
  c.name = "micro-random";
  std::uniform_int_distribution<int> depth(1, 2);
  std::uniform_int_distribution<int> base(1, 3);
  const std::int64_t w = 4 * base(rng);
  for (std::size_t s = 0; s < 4; ++s) {
    c.depths[s] = depth(rng);
    c.widths[s] = w << s;
  }
  c.num_classes = 10;
  return c;
}

// Linear layer model: input [N, in], one Linear to `out` classes.
inline Model linear_model(std::int64_t in, std::int64_t out, bool bias = true) {
  Model m;
  m.meta = {"linear", out, {in}};
  LayerNode n;
  n.id = 0;
  n.kind = NodeKind::kLinear;
  n.name = "fc";
  n.attrs = LinearAttrs{in, out, -1, bias};
  n.inputs = {kGraphInput};
  m.add_param("fc.weight", Tensor::zeros({out, in}));
  n.param_refs["weight"] = "fc.weight";
  if (bias) {
    m.add_param("fc.bias", Tensor::zeros({out}));
    n.param_refs["bias"] = "fc.bias";
  }
  m.nodes.push_back(n);
  m.validate();
  return m;
}

// fp64 direct convolution over an explicitly zero-padded input. `mults`
// counts every multiply performed, padded taps included.
inline std::vector<double> naive_conv(const std::vector<double>& x, const Shape& xs, const std::vector<double>& w,
                                      const Shape& ws, const std::vector<double>* bias, int stride, int pad, int groups,
                                      Shape& out_shape, std::int64_t* mults = nullptr) {
  const auto n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const auto o = ws[0], cg = ws[1], kh = ws[2], kw = ws[3];
  const auto hp = h + 2 * pad, wp = wd + 2 * pad;
  std::vector<double> padded(static_cast<std::size_t>(n * c * hp * wp), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < wd; ++xx)
          padded[static_cast<std::size_t>(((b * c + ch) * hp + y + pad) * wp + xx + pad)] =
              x[static_cast<std::size_t>(((b * c + ch) * h + y) * wd + xx)];
  const auto ho = (hp - kh) / stride + 1, wo = (wp - kw) / stride + 1;
  out_shape = {n, o, ho, wo};
  std::vector<double> out(static_cast<std::size_t>(n * o * ho * wo), 0.0);
  const auto og = o / groups;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t oc = 0; oc < o; ++oc) {
      const auto g = oc / og;
      for (std::int64_t y = 0; y < ho; ++y)
        for (std::int64_t xx = 0; xx < wo; ++xx) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(oc)] : 0.0;
          for (std::int64_t ic = 0; ic < cg; ++ic)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const auto ch = g * cg + ic;
                acc += padded[static_cast<std::size_t>(((b * c + ch) * hp + y * stride + ky) * wp + xx * stride + kx)] *
                       w[static_cast<std::size_t>(((oc * cg + ic) * kh + ky) * kw + kx)];
                if (mults) ++*mults;
              }
          out[static_cast<std::size_t>(((b * o + oc) * ho + y) * wo + xx)] = acc;
        }
    }
  return out;
}

// fp64 linear over `axis` of x; counts multiplies like naive_conv.
inline std::vector<double> naive_linear(const std::vector<double>& x, const Shape& xs, int axis,
                                        const std::vector<double>& w, std::int64_t f_out,
                                        const std::vector<double>* bias, Shape& out_shape,
                                        std::int64_t* mults = nullptr) {
  const auto a = static_cast<std::size_t>(axis < 0 ? axis + static_cast<int>(xs.size()) : axis);
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < a; ++i) outer *= xs[i];
  for (std::size_t i = a + 1; i < xs.size(); ++i) inner *= xs[i];
  const auto f_in = xs[a];
  out_shape = xs;
  out_shape[a] = f_out;
  std::vector<double> out(static_cast<std::size_t>(outer * f_out * inner));
  for (std::int64_t b = 0; b < outer; ++b)
    for (std::int64_t o = 0; o < f_out; ++o)
      for (std::int64_t p = 0; p < inner; ++p) {
        double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
        for (std::int64_t i = 0; i < f_in; ++i) {
          acc += w[static_cast<std::size_t>(o * f_in + i)] * x[static_cast<std::size_t>((b * f_in + i) * inner + p)];
          if (mults) ++*mults;
        }
        out[static_cast<std::size_t>((b * f_out + o) * inner + p)] = acc;
      }
  return out;
}

inline std::vector<double> to_f64(const Tensor& t) {
  auto d = t.data();
  return {d.begin(), d.end()};
}

}  // namespace cnx::testing
