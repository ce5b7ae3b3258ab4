#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cnx {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType { kFloat32, kInt8 };

const char* dtype_name(DType dtype);

// Dense row-major array. Float tensors may carry a gradient buffer of the
// same shape; int8 tensors never do.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from(Shape shape, std::vector<float> data);
  static Tensor from_int8(Shape shape, std::vector<std::int8_t> data);
  static Tensor int8_zeros(Shape shape);

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t size() const { return numel(shape_); }
  DType dtype() const { return dtype_; }
  bool is_float() const { return dtype_ == DType::kFloat32; }

  std::span<float> data();
  std::span<const float> data() const;
  std::span<std::int8_t> int8_data();
  std::span<const std::int8_t> int8_data() const;

  float& operator[](std::int64_t i) { return f32_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return f32_[static_cast<std::size_t>(i)]; }

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zero gradient on first use.
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  std::int64_t count_nonzero() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.dtype_ == b.dtype_ && a.f32_ == b.f32_ && a.i8_ == b.i8_;
  }

 private:
  Shape shape_{0};
  DType dtype_ = DType::kFloat32;
  std::vector<float> f32_;
  std::vector<std::int8_t> i8_;
  std::optional<std::vector<float>> grad_;
};

}  // namespace cnx
