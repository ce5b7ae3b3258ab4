#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cnx/autograd.hpp"
#include "cnx/model.hpp"

namespace cnx {

// Output shape of every node (indexed like model.nodes) for a batched input.
// Throws DimensionError if any node's attributes do not fit its input.
std::vector<Shape> infer_shapes(const Model& model, const Shape& input);

// Inference. `x` must be [N, ...meta.input_shape]; returns [N, num_classes].
// Linear layers with quantized weights run through qlinear_forward.
Tensor forward(const Model& model, const Tensor& x);

using ParamVars = std::unordered_map<std::string, Var>;

// Records every float32 parameter as a leaf on `tape`.
ParamVars bind_params(Tape& tape, const Model& model, bool requires_grad = true);

// Differentiable forward on a tape; quantized models are rejected.
Var forward(Tape& tape, const Model& model, Var x, const ParamVars& params);

}  // namespace cnx
