#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnx/data.hpp"
#include "cnx/model.hpp"
#include "cnx/optim.hpp"

namespace cnx {

struct TrainConfig {
  int epochs = 1;
  std::int64_t batch_size = 64;
  AdamWConfig optim;
  std::string schedule = "cosine";  // "cosine" or "constant"
  std::uint64_t seed = 0;           // shuffling and augmentation
  Augmentation augment{true, 4};
  NormalizationConfig norm;

  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// State handed to step hooks. `names[i]`, `values[i]` and `grads[i]` refer to
// the same float32 parameter; values alias the model's storage.
struct StepState {
  std::int64_t step = 0;        // 0-based optimizer step
  std::int64_t total_steps = 0;
  float lr = 0.0f;              // learning rate used for this step
  std::span<const std::string> names;
  std::span<const std::span<float>> values;
  std::span<const std::span<const float>> grads;
};

struct StepHooks {
  std::function<void(const StepState&)> before_step;
  std::function<void(const StepState&)> after_step;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy_pct = 0.0;
};

std::int64_t total_steps(const Dataset& ds, const TrainConfig& cfg);
float scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total);

// Mini-batch AdamW on cross-entropy, updating `model` in place. Every float32
// parameter is trained; quantized models are rejected.
std::vector<EpochStats> train(Model& model, const Dataset& ds, const TrainConfig& cfg, const StepHooks& hooks = {});

}  // namespace cnx
