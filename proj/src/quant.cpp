#include "cnx/quant.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <vector>

#include "cnx/errors.hpp"
#include "cnx/kernels.hpp"

namespace cnx {

std::int32_t round_half_away(double v) { return static_cast<std::int32_t>(std::round(v)); }

QuantizedTensor quantize_weights(const Tensor& w) {
  if (!w.is_float()) throw InputError("quantize_weights expects float32");
  float max_abs = 0.0f;
  for (float v : w.data()) {
    if (!std::isfinite(v)) throw InputError("quantize_weights: non-finite weight");
    max_abs = std::max(max_abs, std::fabs(v));
  }
  QuantizedTensor q;
  q.scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
  q.zero_point = 0;
  std::vector<std::int8_t> vals(static_cast<std::size_t>(w.size()));
  auto wd = w.data();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const auto r = round_half_away(static_cast<double>(wd[i]) / static_cast<double>(q.scale));
    vals[i] = static_cast<std::int8_t>(std::clamp(r, -127, 127));
  }
  q.values = Tensor::from_int8(w.shape(), std::move(vals));
  return q;
}

namespace {

struct ActParams {
  float scale;
  std::int32_t zero_point;
};

ActParams activation_params(std::span<const float> x) {
  float lo = 0.0f, hi = 0.0f;
  for (float v : x) {
    if (!std::isfinite(v)) throw InputError("quantize_activations: non-finite activation");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  ActParams p;
  p.scale = hi > lo ? (hi - lo) / 255.0f : 1.0f;
  p.zero_point = std::clamp(round_half_away(-128.0 - static_cast<double>(lo) / static_cast<double>(p.scale)), -128, 127);
  return p;
}

std::int8_t quantize_one(float v, ActParams p) {
  const auto r = round_half_away(static_cast<double>(v) / static_cast<double>(p.scale)) + p.zero_point;
  return static_cast<std::int8_t>(std::clamp(r, -128, 127));
}

}  // namespace

QuantizedTensor quantize_activations(const Tensor& x) {
  if (!x.is_float()) throw InputError("quantize_activations expects float32");
  const auto p = activation_params(x.data());
  std::vector<std::int8_t> vals(static_cast<std::size_t>(x.size()));
  auto xd = x.data();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = quantize_one(xd[i], p);
  return {Tensor::from_int8(x.shape(), std::move(vals)), p.scale, p.zero_point};
}

Tensor dequantize(const QuantizedTensor& q) {
  Tensor out = Tensor::zeros(q.values.shape());
  auto qd = q.values.int8_data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = q.scale * static_cast<float>(static_cast<std::int32_t>(qd[i]) - q.zero_point);
  }
  return out;
}

QuantizedLinear quantize_linear(const std::string& name, const Tensor& weight, const Tensor* bias) {
  QuantizedLinear l;
  l.name = name;
  l.weight = quantize_weights(weight);
  if (bias) l.bias = *bias;
  return l;
}

Tensor qlinear_forward(const Tensor& x, const QuantizedTensor& weight, const Tensor* bias, int axis) {
  if (!x.is_float()) throw InputError("qlinear_forward expects float32 input");
  const auto& wq = weight.values;
  if (wq.rank() != 2) throw DimensionError("quantized linear weight must be rank 2");
  if (axis < 0) axis += static_cast<int>(x.rank());
  const auto v = axis_view(x.shape(), axis);
  const auto f_out = wq.dim(0), f_in = wq.dim(1);
  if (v.features != f_in) {
    throw DimensionError(fmt::format("qlinear: axis {} of input has {} features, weight expects {}", axis, v.features, f_in));
  }
  if (f_in > kMaxQuantizedInFeatures) {
    throw InputError(fmt::format("qlinear: {} input features exceed the int32 accumulator bound {}", f_in,
                                 kMaxQuantizedInFeatures));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != f_out)) {
    throw DimensionError(fmt::format("qlinear: bias must have {} elements", f_out));
  }

  const auto ap = activation_params(x.data());
  // q_x - z_x, kept in int32 so the inner product is a plain integer dot
  std::vector<std::int32_t> xs(static_cast<std::size_t>(x.size()));
  auto xd = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<std::int32_t>(quantize_one(xd[i], ap)) - ap.zero_point;

  const float out_scale = ap.scale * weight.scale;
  auto wd = wq.int8_data();
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = f_out;
  Tensor y = Tensor::zeros(out_shape);
  auto yd = y.data();
  const auto inner = v.inner;
  std::vector<std::int32_t> acc(static_cast<std::size_t>(inner));
  for (std::int64_t b = 0; b < v.outer; ++b) {
    const std::int32_t* xb = xs.data() + b * f_in * inner;
    float* yb = yd.data() + b * f_out * inner;
    for (std::int64_t o = 0; o < f_out; ++o) {
      std::fill(acc.begin(), acc.end(), 0);
      const std::int8_t* wrow = wd.data() + o * f_in;
      for (std::int64_t c = 0; c < f_in; ++c) {
        const std::int32_t wv = wrow[c];
        const std::int32_t* xrow = xb + c * inner;
        for (std::int64_t p = 0; p < inner; ++p) acc[static_cast<std::size_t>(p)] += wv * xrow[p];
      }
      const float bv = bias ? bias->data()[static_cast<std::size_t>(o)] : 0.0f;
      for (std::int64_t p = 0; p < inner; ++p) {
        yb[o * inner + p] = out_scale * static_cast<float>(acc[static_cast<std::size_t>(p)]) + bv;
      }
    }
  }
  return y;
}

Tensor qlinear_forward(const Tensor& x, const QuantizedLinear& layer, int axis) {
  return qlinear_forward(x, layer.weight, layer.bias.size() > 0 && layer.bias.rank() == 1 ? &layer.bias : nullptr, axis);
}

Model quantize_model(const Model& model) {
  Model out = model;
  for (const auto& n : out.nodes) {
    if (n.kind != NodeKind::kLinear) continue;
    const auto& wname = n.param("weight");
    if (out.is_quantized(wname)) continue;
    out.set_quantized(wname, quantize_weights(out.fp32(wname)));
  }
  out.validate();
  return out;
}

}  // namespace cnx
