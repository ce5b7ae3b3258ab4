#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "cnx/model.hpp"
#include "cnx/tensor.hpp"

namespace cnx {

// Largest input width for which the int32 accumulator in qlinear_forward
// cannot overflow: |q_w| <= 127 and |q_x - z_x| <= 255, so 127 * 255 * F_in
// must stay below 2^31.
inline constexpr std::int64_t kMaxQuantizedInFeatures = 66311;

// Round half away from zero.
std::int32_t round_half_away(double v);

// Symmetric per-tensor int8: scale = max|W| / 127 (1 when W == 0),
// q = clamp(round(W / scale), -127, 127). zero_point is always 0.
QuantizedTensor quantize_weights(const Tensor& w);

// Asymmetric per-tensor int8 over the live values. The range is widened to
// include 0 so that zero is exact and the zero point fits in int8:
// scale = (max - min) / 255 (1 when max == min), zero_point = round(-128 - min / scale),
// q = clamp(round(x / scale) + zero_point, -128, 127).
QuantizedTensor quantize_activations(const Tensor& x);

Tensor dequantize(const QuantizedTensor& q);

struct QuantizedLinear {
  std::string name;
  QuantizedTensor weight;  // [F_out, F_in]
  Tensor bias;             // [F_out] float32; empty when the layer has no bias
};

QuantizedLinear quantize_linear(const std::string& name, const Tensor& weight, const Tensor* bias);

// Dynamic-quantized linear over `axis`: activations are quantized per call,
// products accumulate in int32, then a single rescale plus fp32 bias.
Tensor qlinear_forward(const Tensor& x, const QuantizedTensor& weight, const Tensor* bias, int axis = -1);
Tensor qlinear_forward(const Tensor& x, const QuantizedLinear& layer, int axis = -1);

// Moves every Linear weight into int8 storage. Convs, norms and biases stay
// float32; already-quantized layers are left alone.
Model quantize_model(const Model& model);

}  // namespace cnx
