#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cnx/convnext.hpp"
#include "cnx/errors.hpp"
#include "cnx/executor.hpp"
#include "cnx/quant.hpp"
#include "cnx/serialize.hpp"
#include "support.hpp"

using namespace cnx;
using namespace cnx::testing;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cnx_test_" + name);
}

}  // namespace

TEST_CASE("save/load reproduces graph and parameter bytes") {
  Model m = build_convnext(convnext_preset("micro"), 2);
  randomize(m, 3);
  const auto path = temp_file("roundtrip.cxm");
  save(m, path);
  const Model back = load(path);
  REQUIRE(back.param_names() == m.param_names());
  for (const auto& p : m.param_names()) CHECK(back.fp32(p) == m.fp32(p));
  REQUIRE(back.nodes.size() == m.nodes.size());
  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    CHECK(back.nodes[i].name == m.nodes[i].name);
    CHECK(back.nodes[i].inputs == m.nodes[i].inputs);
    CHECK(back.nodes[i].param_refs == m.nodes[i].param_refs);
  }
  CHECK(back.meta.input_shape == m.meta.input_shape);
  CHECK(std::filesystem::file_size(path) == serialized_size(m));
  CHECK(serialize(back) == serialize(m));
  std::filesystem::remove(path);
}

TEST_CASE("serialization is deterministic and covers int8 payloads") {
  const Model m = quantize_model(build_convnext(convnext_preset("micro"), 5));
  const auto a = serialize(m), b = serialize(quantize_model(build_convnext(convnext_preset("micro"), 5)));
  CHECK(a == b);
  CHECK(a.size() == serialized_size(m));
  const Model back = deserialize(a);
  for (const auto& p : m.param_names()) {
    REQUIRE(back.is_quantized(p) == m.is_quantized(p));
    if (m.is_quantized(p)) {
      CHECK(back.quantized(p).values == m.quantized(p).values);
      CHECK(back.quantized(p).scale == m.quantized(p).scale);
    }
  }
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3, 32, 32}, rng);
  CHECK(forward(back, x) == forward(m, x));
}

TEST_CASE("corrupt files raise distinct errors") {
  const auto bytes = serialize(build_convnext(convnext_preset("micro"), 1));
  SUBCASE("truncated") {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 10);
    CHECK_THROWS_AS(deserialize(cut), TruncatedFileError);
    const std::vector<std::uint8_t> tiny(bytes.begin(), bytes.begin() + 6);
    CHECK_THROWS_AS(deserialize(tiny), TruncatedFileError);
  }
  SUBCASE("version") {
    auto v = bytes;
    v[4] = 9;
    CHECK_THROWS_AS(deserialize(v), VersionMismatchError);
  }
  SUBCASE("checksum") {
    auto v = bytes;
    v[v.size() - 3] ^= 0x5a;
    CHECK_THROWS_AS(deserialize(v), ChecksumError);
  }
  SUBCASE("magic") {
    auto v = bytes;
    v[0] = 'X';
    CHECK_THROWS_AS(deserialize(v), LoadError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load(temp_file("does_not_exist.cxm")), LoadError); }
}

TEST_CASE("size of a parameterless graph is the header alone") {
  Model m = linear_model(2, 2, false);
  const auto base = serialized_size(m);
  Model bigger = linear_model(2, 2, true);
  // the bias adds 8 payload bytes plus its header entry
  CHECK(serialized_size(bigger) > base + 8);
  CHECK(serialize(m).size() == base);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
  const std::vector<std::uint8_t> a{'a'};
  CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cULL);
}
