#include "cnx/autograd.hpp"

#include <fmt/format.h>

#include "cnx/errors.hpp"

namespace cnx {

Tape::Entry& Tape::entry(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= entries_.size()) throw InternalError("invalid tape variable");
  return entries_[static_cast<std::size_t>(v.id)];
}

const Tape::Entry& Tape::entry(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= entries_.size()) throw InternalError("invalid tape variable");
  return entries_[static_cast<std::size_t>(v.id)];
}

std::span<float> Tape::grad_buffer(Var v) {
  auto& e = entry(v);
  if (!e.requires_grad) return {};
  if (e.grad.empty()) e.grad.assign(static_cast<std::size_t>(e.value.size()), 0.0f);
  return e.grad;
}

std::span<const float> Tape::grad(Var v) const {
  const auto& e = entry(v);
  return e.grad;
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void()> backprop) {
  Entry e;
  e.value = std::move(value);
  e.requires_grad = requires_grad;
  if (requires_grad) e.backprop = std::move(backprop);
  entries_.push_back(std::move(e));
  return Var{static_cast<std::int32_t>(entries_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (requires_grad && !value.is_float()) throw InputError("int8 tensors cannot require gradients");
  value.drop_grad();
  return push(std::move(value), requires_grad, nullptr);
}

Var Tape::conv2d(Var x, Var w, Var bias, Conv2dParams p) {
  const Tensor* b = bias.valid() ? &value(bias) : nullptr;
  Tensor y = cnx::conv2d(value(x), value(w), b, p);
  const bool rg = requires_grad(x) || requires_grad(w) || (bias.valid() && requires_grad(bias));
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), rg, [this, x, w, bias, p, out] {
    auto dy = grad(out);
    conv2d_backward(value(x), value(w), p, dy, grad_buffer(x), grad_buffer(w),
                    bias.valid() ? grad_buffer(bias) : std::span<float>{});
  });
}

Var Tape::linear(Var x, Var w, Var bias, int axis) {
  const Tensor* b = bias.valid() ? &value(bias) : nullptr;
  Tensor y = cnx::linear(value(x), value(w), b, axis);
  const bool rg = requires_grad(x) || requires_grad(w) || (bias.valid() && requires_grad(bias));
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), rg, [this, x, w, bias, axis, out] {
    linear_backward(value(x), value(w), axis, grad(out), grad_buffer(x), grad_buffer(w),
                    bias.valid() ? grad_buffer(bias) : std::span<float>{});
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, float eps, int axis) {
  Tensor y = cnx::layer_norm(value(x), value(gamma), value(beta), eps, axis);
  const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), rg, [this, x, gamma, beta, eps, axis, out] {
    layer_norm_backward(value(x), value(gamma), eps, axis, grad(out), grad_buffer(x), grad_buffer(gamma),
                        grad_buffer(beta));
  });
}

Var Tape::gelu(Var x) {
  Tensor y = cnx::gelu(value(x));
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), requires_grad(x), [this, x, out] {
    gelu_backward(value(x), grad(out), grad_buffer(x));
  });
}

Var Tape::global_avg_pool(Var x) {
  Tensor y = cnx::global_avg_pool(value(x));
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), requires_grad(x), [this, x, out] {
    global_avg_pool_backward(value(x).shape(), grad(out), grad_buffer(x));
  });
}

Var Tape::add(Var a, Var b) {
  Tensor y = cnx::add(value(a), value(b));
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), requires_grad(a) || requires_grad(b), [this, a, b, out] {
    auto dy = grad(out);
    for (Var v : {a, b}) {
      auto g = grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError(fmt::format("mul: shapes {} and {} differ", shape_str(av.shape()), shape_str(bv.shape())));
  }
  Tensor y = Tensor::zeros(av.shape());
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), requires_grad(a) || requires_grad(b), [this, a, b, out] {
    auto dy = grad(out);
    // a and b may alias (x*x); read values before accumulating
    auto ga = grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dy[i] * value(b)[static_cast<std::int64_t>(i)];
    auto gb = grad_buffer(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dy[i] * value(a)[static_cast<std::int64_t>(i)];
  });
}

Var Tape::sum(Var x) {
  float s = 0.0f;
  for (float v : value(x).data()) s += v;
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(Tensor::from({1}, {s}), requires_grad(x), [this, x, out] {
    const float dy = grad(out)[0];
    for (auto& g : grad_buffer(x)) g += dy;
  });
}

Var Tape::reshape(Var x, Shape shape) {
  Tensor y = value(x).reshaped(std::move(shape));
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(std::move(y), requires_grad(x), [this, x, out] {
    auto dy = grad(out);
    auto g = grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
  });
}

Var Tape::cross_entropy(Var logits, std::span<const std::int64_t> labels) {
  auto r = cnx::cross_entropy(value(logits), labels);
  Var out{static_cast<std::int32_t>(entries_.size())};
  return push(Tensor::from({1}, {r.loss}), requires_grad(logits),
              [this, logits, out, dl = std::move(r.dlogits)] {
                const float dy = grad(out)[0];
                auto g = grad_buffer(logits);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy * dl[i];
              });
}

void Tape::backward(Var loss) {
  auto& root = entry(loss);
  if (root.value.size() != 1) {
    throw UsageError(fmt::format("backward needs a scalar loss, got shape {}", shape_str(root.value.shape())));
  }
  for (auto& e : entries_) {
    e.grad.clear();
    // leaves always end up with a gradient, zero if nothing reached them
    if (e.requires_grad && !e.backprop) e.grad.assign(static_cast<std::size_t>(e.value.size()), 0.0f);
  }
  if (!root.requires_grad) return;
  grad_buffer(loss)[0] = 1.0f;
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    auto& e = entries_[i];
    if (e.backprop && !e.grad.empty()) e.backprop();
  }
}

}  // namespace cnx
