#include "cnx/tensor.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cnx/errors.hpp"

namespace cnx {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError(fmt::format("negative dimension in shape {}", shape_str(shape)));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

const char* dtype_name(DType dtype) { return dtype == DType::kFloat32 ? "f32" : "i8"; }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, float value) {
  Tensor t;
  auto n = numel(shape);
  t.shape_ = std::move(shape);
  t.f32_.assign(static_cast<std::size_t>(n), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> data) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError(
        fmt::format("shape {} needs {} elements, got {}", shape_str(shape), numel(shape), data.size()));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.f32_ = std::move(data);
  return t;
}

Tensor Tensor::from_int8(Shape shape, std::vector<std::int8_t> data) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError(
        fmt::format("shape {} needs {} elements, got {}", shape_str(shape), numel(shape), data.size()));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::kInt8;
  t.i8_ = std::move(data);
  return t;
}

Tensor Tensor::int8_zeros(Shape shape) {
  auto n = static_cast<std::size_t>(numel(shape));
  return from_int8(std::move(shape), std::vector<std::int8_t>(n, 0));
}

std::span<float> Tensor::data() {
  if (!is_float()) throw InternalError("float access to an int8 tensor");
  return f32_;
}

std::span<const float> Tensor::data() const {
  if (!is_float()) throw InternalError("float access to an int8 tensor");
  return f32_;
}

std::span<std::int8_t> Tensor::int8_data() {
  if (is_float()) throw InternalError("int8 access to a float tensor");
  return i8_;
}

std::span<const std::int8_t> Tensor::int8_data() const {
  if (is_float()) throw InternalError("int8 access to a float tensor");
  return i8_;
}

std::span<float> Tensor::grad() {
  if (!is_float()) throw InternalError("int8 tensors do not carry gradients");
  if (!grad_) grad_.emplace(f32_.size(), 0.0f);
  return *grad_;
}

std::span<const float> Tensor::grad() const {
  if (!grad_) throw InternalError("tensor has no gradient");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw DimensionError(fmt::format("cannot reshape {} to {}", shape_str(shape_), shape_str(shape)));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  t.grad_.reset();
  return t;
}

std::int64_t Tensor::count_nonzero() const {
  if (is_float()) return std::count_if(f32_.begin(), f32_.end(), [](float v) { return v != 0.0f; });
  return std::count_if(i8_.begin(), i8_.end(), [](std::int8_t v) { return v != 0; });
}

}  // namespace cnx
