#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cnx {

struct AdamWConfig {
  float lr = 1e-3f;
  float weight_decay = 0.05f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// One parameter buffer with its gradient for a single optimizer step.
struct ParamSlot {
  std::span<float> value;
  std::span<const float> grad;
};

// AdamW with decoupled weight decay. Moment buffers are keyed by slot position,
// so callers must pass parameters in the same order on every step.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(std::span<const ParamSlot> slots);

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(float lr) { cfg_.lr = lr; }

 private:
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace cnx
