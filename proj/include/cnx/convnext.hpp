#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "cnx/model.hpp"

namespace cnx {

struct ConvNeXtConfig {
  std::string name = "custom";
  std::array<int, 4> depths{3, 3, 9, 3};
  std::array<std::int64_t, 4> widths{96, 192, 384, 768};
  std::int64_t num_classes = 10;
  Shape input{3, 32, 32};
  float norm_eps = 1e-6f;

  // Throws ConfigError on non-positive sizes or spatial dims not divisible by 32.
  void validate() const;
};

// micro, tiny, small, base, large (10 classes, 3x32x32 input).
ConvNeXtConfig convnext_preset(const std::string& name);

// Accepts {"preset": "micro"} or explicit fields; missing fields take defaults.
ConvNeXtConfig convnext_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConvNeXtConfig& cfg);

// Patchify stem, four stages of inverted-bottleneck blocks with LayerNorm +
// 2x2 stride-2 downsampling between stages, and a LayerNorm/avg-pool/linear
// head. Weights ~ truncated normal(0, 0.02), biases zero, norms (1, 0).
Model build_convnext(const ConvNeXtConfig& cfg, std::uint64_t seed);

}  // namespace cnx
