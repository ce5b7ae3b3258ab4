#include <doctest.h>

#include <map>
#include <fmt/format.h>

#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "gradcheck.hpp"

using namespace cnx;
using namespace cnx::testing;

TEST_CASE("every op passes central finite differences on random shapes") {
  std::map<std::string, int> per_op;
  for (auto& c : grad_cases(123)) {
    const double err = grad_check(c.inputs, c.fn);
    INFO(c.op << " " << c.shape << " rel err " << err);
    CHECK(err <= 1e-3);
    ++per_op[c.op];
  }
  for (const auto& [op, n] : per_op) {
    INFO(op);
    CHECK(n >= 5);
  }
}

TEST_CASE("gradients through a whole model match finite differences") {
  std::mt19937_64 rng(3);
  ConvNeXtConfig cfg;
  cfg.depths = {1, 1, 1, 1};
  cfg.widths = {4, 8, 8, 8};
  Model m = build_convnext(cfg, 7);
  randomize(m, 8, 0.3f);
  const Tensor x = random_tensor({2, 3, 32, 32}, rng);
  // check a handful of parameters end to end (each as one input tensor)
  for (const std::string name : {"stages.0.blocks.0.pwconv1.weight", "stem.norm.bias", "head.fc.weight"}) {
    ScalarFn f = [&](Tape& t, const std::vector<Var>& v) {
      auto params = bind_params(t, m, false);
      params[name] = v[0];
      return project(t, forward(t, m, t.leaf(x, false), params), 42);
    };
    const double err = grad_check({m.fp32(name)}, f);
    INFO(name << " rel err " << err);
    CHECK(err <= 1e-3);
  }
}

TEST_CASE("backward needs a scalar and leaves unrelated grads at zero") {
  Tape t;
  const Var a = t.leaf(Tensor::full({3}, 2.0f), true);
  const Var b = t.leaf(Tensor::full({3}, 5.0f), true);
  const Var y = t.mul(a, a);
  CHECK_THROWS_AS(t.backward(y), UsageError);
  t.backward(t.sum(y));
  CHECK(t.grad(a)[0] == 4.0f);
  CHECK(t.grad(b)[0] == 0.0f);
}
