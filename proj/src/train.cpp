#include "cnx/train.hpp"

#include <cmath>
#include <fmt/format.h>
#include <numbers>

#include "cnx/autograd.hpp"
#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "cnx/kernels.hpp"

namespace cnx {

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.optim.lr = j.value("lr", c.optim.lr);
    c.optim.weight_decay = j.value("weight_decay", c.optim.weight_decay);
    c.schedule = j.value("schedule", c.schedule);
    c.seed = j.value("seed", c.seed);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      c.augment.horizontal_flip = a.value("horizontal_flip", c.augment.horizontal_flip);
      c.augment.pad_crop = a.value("pad_crop", c.augment.pad_crop);
    }
    if (j.contains("normalization")) c.norm = NormalizationConfig::from_json(j.at("normalization"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad training config: {}", e.what()));
  }
  if (c.epochs < 0 || c.batch_size <= 0 || !(c.optim.lr > 0.0f)) throw ConfigError("training config: epochs, batch_size and lr must be positive");
  if (c.schedule != "cosine" && c.schedule != "constant") throw ConfigError(fmt::format("unknown lr schedule '{}'", c.schedule));
  if (c.augment.pad_crop < 0) throw ConfigError("pad_crop must be >= 0");
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", optim.lr},
          {"weight_decay", optim.weight_decay},
          {"schedule", schedule},
          {"seed", seed},
          {"augment", {{"horizontal_flip", augment.horizontal_flip}, {"pad_crop", augment.pad_crop}}},
          {"normalization", norm.to_json()}};
}

std::int64_t total_steps(const Dataset& ds, const TrainConfig& cfg) {
  return static_cast<std::int64_t>(cfg.epochs) * ((ds.size() + cfg.batch_size - 1) / cfg.batch_size);
}

float scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total) {
  if (cfg.schedule == "constant" || total <= 1) return cfg.optim.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return static_cast<float>(0.5 * cfg.optim.lr * (1.0 + std::cos(std::numbers::pi * t)));
}

std::vector<EpochStats> train(Model& model, const Dataset& ds, const TrainConfig& cfg, const StepHooks& hooks) {
  if (ds.size() == 0) throw DataError("cannot train on an empty dataset");
  for (const auto& name : model.param_names()) {
    if (model.is_quantized(name)) throw UsageError("cannot train a quantized model");
  }
  const auto names = model.fp32_param_names();
  std::vector<std::span<float>> values;
  for (const auto& n : names) values.push_back(model.fp32(n).data());

  AdamW opt(cfg.optim);
  const auto total = total_steps(ds, cfg);
  std::int64_t step = 0;
  std::vector<EpochStats> stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // each epoch gets its own permutation, derived from the run seed
    BatchIterator it(ds, cfg.batch_size, cfg.seed * 1000003u + static_cast<std::uint64_t>(epoch), cfg.norm,
                     cfg.augment);
    Batch batch;
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    while (it.next(batch)) {
      Tape tape;
      const auto params = bind_params(tape, model, true);
      const Var x = tape.leaf(batch.images, false);
      const Var logits = forward(tape, model, x, params);
      const Var loss = tape.cross_entropy(logits, batch.labels);
      tape.backward(loss);

      const auto n = static_cast<std::int64_t>(batch.labels.size());
      loss_sum += static_cast<double>(tape.value(loss)[0]) * static_cast<double>(n);
      const auto pred = argmax_rows(tape.value(logits));
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
      seen += n;

      std::vector<std::span<const float>> grads;
      std::vector<ParamSlot> slots;
      for (std::size_t i = 0; i < names.size(); ++i) {
        grads.push_back(tape.grad(params.at(names[i])));
        slots.push_back({values[i], grads.back()});
      }
      const float lr = scheduled_lr(cfg, step, total);
      opt.set_lr(lr);
      const StepState state{step, total, lr, names, values, grads};
      if (hooks.before_step) hooks.before_step(state);
      opt.step(slots);
      if (hooks.after_step) hooks.after_step(state);
      ++step;
    }
    stats.push_back({epoch, loss_sum / static_cast<double>(seen),
                     100.0 * static_cast<double>(correct) / static_cast<double>(seen)});
  }
  return stats;
}

}  // namespace cnx
