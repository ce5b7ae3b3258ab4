#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cnx/kernels.hpp"
#include "cnx/tensor.hpp"

namespace cnx {

// Handle to a value recorded on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over a recorded list of operations. Values are
// immutable once recorded; backward() walks the tape in reverse once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);

  Var conv2d(Var x, Var w, Var bias, Conv2dParams p);
  Var linear(Var x, Var w, Var bias, int axis = -1);
  Var layer_norm(Var x, Var gamma, Var beta, float eps, int axis = -1);
  Var gelu(Var x);
  Var global_avg_pool(Var x);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var sum(Var x);
  Var reshape(Var x, Shape shape);
  Var cross_entropy(Var logits, std::span<const std::int64_t> labels);

  const Tensor& value(Var v) const { return entry(v).value; }
  // Gradient of the last backward() target w.r.t. v (zeros if unreached).
  std::span<const float> grad(Var v) const;
  bool requires_grad(Var v) const { return entry(v).requires_grad; }

  // Throws UsageError unless `loss` holds exactly one element.
  void backward(Var loss);

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::function<void()> backprop;
  };

  Entry& entry(Var v);
  const Entry& entry(Var v) const;
  std::span<float> grad_buffer(Var v);
  Var push(Tensor value, bool requires_grad, std::function<void()> backprop);

  std::vector<Entry> entries_;
};

}  // namespace cnx
