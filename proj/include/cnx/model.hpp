#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "cnx/tensor.hpp"

namespace cnx {

enum class NodeKind { kConv2d, kLinear, kLayerNorm, kGelu, kGlobalAvgPool, kResidualAdd, kFlatten };

const char* kind_name(NodeKind kind);
NodeKind kind_from_name(std::string_view name);

struct ConvAttrs {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool bias = true;

  bool depthwise() const { return groups > 1 && groups == in_channels && groups == out_channels; }
};

// Linear and LayerNorm act on `axis` of their input: 1 (channels) for NCHW
// activations, -1 (last) for [N, F] features.
struct LinearAttrs {
  std::int64_t in_features = 0;
  std::int64_t out_features = 0;
  int axis = -1;
  bool bias = true;
};

struct NormAttrs {
  std::int64_t features = 0;
  float eps = 1e-6f;
  int axis = -1;
};

using NodeAttrs = std::variant<std::monostate, ConvAttrs, LinearAttrs, NormAttrs>;

// Input id referring to the model input tensor.
inline constexpr int kGraphInput = -1;

struct LayerNode {
  int id = 0;
  NodeKind kind = NodeKind::kGelu;
  std::string name;
  NodeAttrs attrs;
  std::vector<int> inputs;
  // role ("weight", "bias") -> parameter name
  std::map<std::string, std::string> param_refs;

  const ConvAttrs& conv() const { return std::get<ConvAttrs>(attrs); }
  const LinearAttrs& lin() const { return std::get<LinearAttrs>(attrs); }
  const NormAttrs& norm() const { return std::get<NormAttrs>(attrs); }
  ConvAttrs& conv() { return std::get<ConvAttrs>(attrs); }
  LinearAttrs& lin() { return std::get<LinearAttrs>(attrs); }
  NormAttrs& norm() { return std::get<NormAttrs>(attrs); }
  const std::string& param(const std::string& role) const;
  bool has_param(const std::string& role) const { return param_refs.count(role) != 0; }
};

// int8 payload with its affine dequantization: real = scale * (q - zero_point).
struct QuantizedTensor {
  Tensor values;
  float scale = 1.0f;
  std::int32_t zero_point = 0;
};

struct ModelMetadata {
  std::string config_name;
  std::int64_t num_classes = 0;
  Shape input_shape;  // [C, H, W]
};

// Ordered computation graph plus a parameter store. Each parameter is held
// either as float32 or as a quantized tensor, never both.
class Model {
 public:
  std::vector<LayerNode> nodes;
  ModelMetadata meta;

  void add_param(std::string name, Tensor value);
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }
  bool is_quantized(const std::string& name) const;

  Tensor& fp32(const std::string& name);
  const Tensor& fp32(const std::string& name) const;
  const QuantizedTensor& quantized(const std::string& name) const;
  // Shape of the parameter regardless of representation.
  const Shape& param_shape(const std::string& name) const;

  void set_fp32(const std::string& name, Tensor value);
  void set_quantized(const std::string& name, QuantizedTensor value);
  void remove_param(const std::string& name);

  // Declaration order; this is the payload order on disk.
  const std::vector<std::string>& param_names() const { return order_; }
  std::vector<std::string> fp32_param_names() const;

  const LayerNode& node(int id) const;
  std::size_t node_index(int id) const;

  // Ids of nodes consuming the output of `id`.
  std::vector<int> consumers(int id) const;

  // Throws InternalError naming the first violated invariant.
  void validate() const;

 private:
  struct Slot {
    std::variant<Tensor, QuantizedTensor> data;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Slot> index_;
};

}  // namespace cnx
