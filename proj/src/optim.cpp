#include "cnx/optim.hpp"

#include <cmath>
#include <fmt/format.h>

#include "cnx/errors.hpp"

namespace cnx {

void AdamW::step(std::span<const ParamSlot> slots) {
  if (m_.empty()) {
    m_.resize(slots.size());
    v_.resize(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
      m_[i].assign(slots[i].value.size(), 0.0f);
      v_[i].assign(slots[i].value.size(), 0.0f);
    }
  }
  if (m_.size() != slots.size()) {
    throw InternalError(fmt::format("AdamW: {} slots, state holds {}", slots.size(), m_.size()));
  }
  ++step_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    auto w = slots[s].value;
    auto g = slots[s].grad;
    auto& m = m_[s];
    auto& v = v_[s];
    if (w.size() != m.size() || g.size() != w.size()) {
      throw InternalError(fmt::format("AdamW: slot {} changed shape", s));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      w[i] -= cfg_.lr * cfg_.weight_decay * w[i];
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace cnx
