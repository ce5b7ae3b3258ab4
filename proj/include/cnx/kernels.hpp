#pragma once

// Forward and backward kernels for the operators ConvNeXt needs. All kernels
// are single-threaded with a fixed summation order, so repeated calls are
// bitwise reproducible.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cnx/tensor.hpp"

namespace cnx {

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// Output shape of a conv; throws DimensionError / ConfigError on bad inputs.
Shape conv2d_output_shape(const Shape& x, const Shape& w, Conv2dParams p);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, Conv2dParams p);

// Accumulates (+=) into the given gradient buffers; empty spans are skipped.
void conv2d_backward(const Tensor& x, const Tensor& w, Conv2dParams p, std::span<const float> dy,
                     std::span<float> dx, std::span<float> dw, std::span<float> db);

// Splits `shape` around `axis` as [outer, features, inner].
struct AxisView {
  std::int64_t outer = 1;
  std::int64_t features = 1;
  std::int64_t inner = 1;
};
AxisView axis_view(const Shape& shape, int axis);

// y = x·Wᵀ + b over `axis` (default: last). W is [F_out, F_in].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias, int axis = -1);
void linear_backward(const Tensor& x, const Tensor& w, int axis, std::span<const float> dy,
                     std::span<float> dx, std::span<float> dw, std::span<float> db);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps, int axis = -1);
void layer_norm_backward(const Tensor& x, const Tensor& gamma, float eps, int axis,
                         std::span<const float> dy, std::span<float> dx, std::span<float> dgamma,
                         std::span<float> dbeta);

float gelu(float x);
float gelu_derivative(float x);
Tensor gelu(const Tensor& x);
void gelu_backward(const Tensor& x, std::span<const float> dy, std::span<float> dx);

// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& x);
void global_avg_pool_backward(const Shape& x_shape, std::span<const float> dy, std::span<float> dx);

Tensor add(const Tensor& a, const Tensor& b);

struct CrossEntropyResult {
  float loss = 0.0f;
  // d(loss)/d(logits), [N, K]
  std::vector<float> dlogits;
};

// Mean negative log-likelihood of softmax(logits) at `labels`.
CrossEntropyResult cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels);

// Row-wise softmax of [N, K] logits with max-subtraction.
Tensor softmax(const Tensor& logits);

// Index of the largest logit per row; ties go to the lowest index.
std::vector<std::int64_t> argmax_rows(const Tensor& logits);

}  // namespace cnx
