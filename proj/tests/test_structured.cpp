#include <doctest.h>

#include <algorithm>
#include <set>

#include "cnx/convnext.hpp"
#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "cnx/profiler.hpp"
#include "cnx/serialize.hpp"
#include "cnx/structured.hpp"
#include "toy_models.hpp"

using namespace cnx;
using namespace cnx::testing;

namespace {

const NodeGroup& group_of(const DependencyGraph& g, const Model& m, const std::string& node) {
  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    if (m.nodes[i].name == node) return g.node_groups[static_cast<std::size_t>(g.output_group[i])];
  }
  FAIL("no node " << node);
  throw;
}

std::set<std::string> names(const Model& m, const std::vector<int>& ids) {
  std::set<std::string> out;
  for (int id : ids) out.insert(id == kGraphInput ? "<input>" : m.node(id).name);
  return out;
}

DhspgConfig small_dhspg(double target) {
  DhspgConfig c;
  c.target_group_sparsity = target;
  c.train.batch_size = 16;
  c.train.epochs = 1;
  c.train.optim.lr = 2e-3f;
  return c;
}

Model tiny_convnext(std::uint64_t seed) {
  ConvNeXtConfig c;
  c.depths = {1, 1, 1, 1};
  c.widths = {4, 8, 8, 8};
  return build_convnext(c, seed);
}

}  // namespace

TEST_CASE("tying rules on the single-block graph") {
  const Model m = toy_block(4, true);
  const auto g = analyze_dependencies(m);
  const auto& trunk = group_of(g, m, "stem");
  CHECK(names(m, trunk.members) == std::set<std::string>{"stem", "dw", "ln", "down", "add", "pool"});
  CHECK(names(m, trunk.consumers) == std::set<std::string>{"up", "fc"});
  CHECK(trunk.normalized);
  CHECK_FALSE(trunk.prunable);

  const auto& hidden = group_of(g, m, "up");
  CHECK(hidden.channels == 16);
  CHECK(names(m, hidden.members) == std::set<std::string>{"up", "act"});
  CHECK(names(m, hidden.consumers) == std::set<std::string>{"down"});
  CHECK(hidden.prunable);

  const auto& out = group_of(g, m, "fc");
  CHECK(out.output_adjacent);
  CHECK_FALSE(out.prunable);
  CHECK(g.node_groups[static_cast<std::size_t>(g.input_group)].input_adjacent);

  // every value sits in exactly one group
  std::size_t members = 0;
  for (const auto& ng : g.node_groups) members += ng.members.size();
  CHECK(members == m.nodes.size() + 1);

  // without the norm the trunk becomes prunable
  const Model plain = toy_block(4, false);
  const auto gp = analyze_dependencies(plain);
  CHECK(group_of(gp, plain, "add").prunable);
}

TEST_CASE("grouped non-depthwise conv marks its groups unknown") {
  Model m;
  m.meta = {"grouped", 3, {4, 4, 4}};
  GraphBuilder b(m);
  const int c0 = b.conv("c0", kGraphInput, 4, 8, 1, 1, 0, 1);
  const int c1 = b.conv("c1", c0, 8, 8, 1, 1, 0, 2);
  const int p = b.op(NodeKind::kGlobalAvgPool, "pool", {c1});
  b.linear("fc", p, 8, 3, -1);
  m.validate();
  const auto g = analyze_dependencies(m);
  CHECK(group_of(g, m, "c0").contains_unknown);
  CHECK(group_of(g, m, "c1").contains_unknown);
  CHECK(partition_pzigs(g, m).empty());
}

TEST_CASE("Micro block 0 hidden group has 96 channel groups") {
  const Model m = build_convnext(convnext_preset("micro"), 1);
  const auto g = analyze_dependencies(m);
  const auto pz = partition_pzigs(g, m);
  const auto& hidden = group_of(g, m, "stages.0.blocks.0.pwconv1");
  CHECK(hidden.channels == 96);
  std::vector<const PruneGroup*> block0;
  for (const auto& p : pz) {
    if (p.node_group == hidden.id) block0.push_back(&p);
  }
  REQUIRE(block0.size() == 96);
  for (const auto* p : block0) {
    const std::vector<Slice> want{{"stages.0.blocks.0.pwconv1.bias", 0, p->channel},
                                  {"stages.0.blocks.0.pwconv1.weight", 0, p->channel},
                                  {"stages.0.blocks.0.pwconv2.weight", 1, p->channel}};
    CHECK(p->slices == want);
  }
  // only hidden widths are prunable in ConvNeXt: every trunk group is normalized
  std::int64_t hidden_total = 0;
  const auto cfg = convnext_preset("micro");
  for (std::size_t s = 0; s < 4; ++s) hidden_total += cfg.depths[s] * 4 * cfg.widths[s];
  CHECK(static_cast<std::int64_t>(pz.size()) == hidden_total);

  // slices are disjoint across groups
  std::set<std::pair<std::string, std::int64_t>> seen;
  std::size_t total = 0;
  for (const auto& p : pz) {
    for (const auto& s : p.slices) {
      seen.insert({s.param + "#" + std::to_string(s.axis), s.index});
      ++total;
    }
  }
  CHECK(seen.size() == total);
}

TEST_CASE("classifier-only model has no prunable groups") {
  const Model m = linear_model(8, 3);
  CHECK(partition_pzigs(analyze_dependencies(m), m).empty());
}

TEST_CASE("zeroing any single group leaves outputs unchanged") {
  for (bool norm : {false, true}) {
    const Model m = toy_block(4, norm, 3);
    const auto pz = partition_pzigs(analyze_dependencies(m), m);
    CHECK(pz.size() == (norm ? 16u : 20u));
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({50, 3, 8, 8}, rng);
    for (const auto& g : pz) {
      Model z = m;
      zero_group(z, g);
      CHECK(group_is_zero(z, g));
      const Model e = extract_subnetwork(z, pz);
      CHECK(max_abs_diff(forward(z, x), forward(e, x)) <= 1e-5f);
      CHECK(count_params(e, Convention::kAll) < count_params(m, Convention::kAll));
      CHECK(count_macs(e, {1, 3, 8, 8}, Convention::kAll) < count_macs(m, {1, 3, 8, 8}, Convention::kAll));
      CHECK(model_size_bytes(e) < model_size_bytes(m));
    }
  }
}

TEST_CASE("zeroing two of four trunk channels narrows the stem to two") {
  const Model m = toy_block(4, false, 9);
  const auto g = analyze_dependencies(m);
  const auto pz = partition_pzigs(g, m);
  const int trunk = group_of(g, m, "stem").id;
  Model z = m;
  int zeroed = 0;
  for (const auto& p : pz) {
    if (p.node_group == trunk && (p.channel == 1 || p.channel == 3)) {
      zero_group(z, p);
      ++zeroed;
    }
  }
  REQUIRE(zeroed == 2);
  const Model e = extract_subnetwork(z, pz);
  CHECK(e.node(0).conv().out_channels == 2);
  CHECK(e.param_shape("stem.weight") == Shape{2, 3, 2, 2});
  CHECK(e.node(1).conv().groups == 2);
  CHECK(e.param_shape("fc.weight") == Shape{5, 2});
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({50, 3, 8, 8}, rng);
  CHECK(max_abs_diff(forward(z, x), forward(e, x)) <= 1e-5f);

  const auto widths = pruned_architecture(m, e);
  const auto stem = std::find_if(widths.begin(), widths.end(), [](const auto& w) { return w.name == "stem"; });
  REQUIRE(stem != widths.end());
  CHECK(stem->out_before == 4);
  CHECK(stem->out_after == 2);
  CHECK(to_table(widths).find("4 -> 2") != std::string::npos);
  CHECK(to_json(widths).size() == widths.size());
}

TEST_CASE("extraction refuses partly zero groups and is identity without zeros") {
  const Model m = toy_block(4, true, 4);
  const auto pz = partition_pzigs(analyze_dependencies(m), m);
  Model z = m;
  const auto& g = pz[3];
  const auto& w = g.slices[1];  // up.weight row
  REQUIRE(w.param == "up.weight");
  for (auto o : slice_offsets(z.param_shape(w.param), w.axis, w.index)) z.fp32(w.param).data()[static_cast<std::size_t>(o)] = 0.0f;
  CHECK_THROWS_AS(extract_subnetwork(z, pz), ConsistencyError);

  // a zero bias alone is ordinary and leaves the group in place
  Model b = m;
  b.fp32("up.bias").data()[0] = 0.0f;
  CHECK(serialize(extract_subnetwork(b, pz)) == serialize(b));
  CHECK(serialize(extract_subnetwork(m, pz)) == serialize(m));
}

TEST_CASE("half-space projection") {
  std::vector<float> x{1.0f, 0.0f};
  const std::vector<float> t{-0.1f, 0.5f};
  CHECK(half_space_project(x, t, 0.0));
  CHECK(x == std::vector<float>{0.0f, 0.0f});

  std::vector<float> y{1.0f, 0.0f};
  const std::vector<float> u{0.4f, 3.0f};
  CHECK_FALSE(half_space_project(y, u, 0.0));
  CHECK(y == u);
  // epsilon raises the bar: <u, y> = 0.4 < 0.5 * |y|^2
  std::vector<float> w{1.0f, 0.0f};
  CHECK(half_space_project(w, u, 0.5));
}

TEST_CASE("saliency ranks by norm, l2_mean divides by sqrt(size)") {
  const Model m = toy_block(2, false, 1);
  const auto pz = partition_pzigs(analyze_dependencies(m), m);
  const auto l2 = saliency_scores(m, pz, "l2");
  const auto mean = saliency_scores(m, pz, "l2_mean");
  for (std::size_t i = 0; i < pz.size(); ++i) {
    CHECK(l2[i] == doctest::Approx(group_norm(m, pz[i])));
    std::int64_t n = 0;
    for (const auto& s : pz[i].slices) n += static_cast<std::int64_t>(slice_offsets(m.param_shape(s.param), s.axis, s.index).size());
    CHECK(mean[i] == doctest::Approx(l2[i] / std::sqrt(static_cast<double>(n))));
  }
  CHECK_THROWS_AS(saliency_scores(m, pz, "l1"), ConfigError);
}

TEST_CASE("dhspg target 0 trains exactly like plain AdamW") {
  const Model m = tiny_convnext(3);
  const auto pz = partition_pzigs(analyze_dependencies(m), m);
  const auto ds = synthetic(64, 10, 4);
  const auto cfg = small_dhspg(0.0);
  const auto r = dhspg_train(m, pz, ds, cfg);
  Model plain = m;
  train(plain, ds, cfg.train);
  CHECK(serialize(r.model) == serialize(plain));
  CHECK(r.redundant.empty());
}

TEST_CASE("dhspg zeroes exactly ceil(target * groups) and is deterministic") {
  const Model m = tiny_convnext(5);
  const auto pz = partition_pzigs(analyze_dependencies(m), m);
  const auto ds = synthetic(96, 10, 6);
  for (double target : {0.25, 0.4, 0.5}) {
    const auto r = dhspg_train(m, pz, ds, small_dhspg(target));
    const auto want = static_cast<std::size_t>(std::ceil(target * static_cast<double>(pz.size()) - 1e-9));
    CHECK(r.redundant.size() == want);
    std::size_t zero = 0;
    for (const auto& g : pz) zero += group_is_zero(r.model, g);
    CHECK(zero == want);
    CHECK(count_nonzero(r.model, Convention::kAll) < count_params(r.model, Convention::kAll));
    const Model e = extract_subnetwork(r.model, pz);
    CHECK(count_params(e, Convention::kAll) < count_params(m, Convention::kAll));
    CHECK(evaluate(e, ds, 32) == evaluate(r.model, ds, 32));
  }
  const auto a = dhspg_train(m, pz, ds, small_dhspg(0.4));
  const auto b = dhspg_train(m, pz, ds, small_dhspg(0.4));
  CHECK(serialize(a.model) == serialize(b.model));
  CHECK(to_json(pruned_architecture(m, extract_subnetwork(a.model, pz))) ==
        to_json(pruned_architecture(m, extract_subnetwork(b.model, pz))));
}

TEST_CASE("dhspg edge cases and config validation") {
  const Model m = tiny_convnext(1);
  const auto ds = synthetic(32, 10, 1);
  const auto r = dhspg_train(m, {}, ds, small_dhspg(0.5));
  CHECK(serialize(r.model) == serialize(m));
  CHECK(r.warnings.size() == 1);

  const auto pz = partition_pzigs(analyze_dependencies(m), m);
  const auto all = dhspg_train(m, pz, ds, small_dhspg(1.0));
  CHECK(all.redundant.size() == pz.size());
  CHECK_FALSE(all.warnings.empty());
  // every hidden width is gone but the graph is still valid
  const Model e = extract_subnetwork(all.model, pz);
  CHECK_NOTHROW(forward(e, Tensor::zeros({1, 3, 32, 32})));

  auto bad = small_dhspg(1.5);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_dhspg(0.5);
  bad.epsilon_projection = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_dhspg(0.5);
  bad.lambda_penalty = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const auto j = small_dhspg(0.3).to_json();
  CHECK(DhspgConfig::from_json(j).to_json() == j);
}
