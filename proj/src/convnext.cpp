#include "cnx/convnext.hpp"

#include <fmt/format.h>
#include <random>

#include "cnx/errors.hpp"

namespace cnx {

void ConvNeXtConfig::validate() const {
  for (int d : depths) {
    if (d <= 0) throw ConfigError(fmt::format("config {}: stage depths must be positive", name));
  }
  for (auto w : widths) {
    if (w <= 0) throw ConfigError(fmt::format("config {}: stage widths must be positive", name));
  }
  if (num_classes <= 0) throw ConfigError(fmt::format("config {}: num_classes must be positive", name));
  if (input.size() != 3 || input[0] <= 0) throw ConfigError(fmt::format("config {}: input must be [C, H, W]", name));
  // stem /4 then three stride-2 downsamplings
  for (int axis : {1, 2}) {
    const auto d = input[static_cast<std::size_t>(axis)];
    if (d <= 0 || d % 32 != 0) {
      throw ConfigError(fmt::format("config {}: input {} {} is not divisible by 32", name,
                                    axis == 1 ? "height" : "width", d));
    }
  }
}

ConvNeXtConfig convnext_preset(const std::string& name) {
  ConvNeXtConfig c;
  c.name = name;
  if (name == "micro") {
    c.depths = {1, 1, 3, 1};
    c.widths = {24, 48, 96, 192};
  } else if (name == "tiny") {
    c.depths = {3, 3, 9, 3};
    c.widths = {96, 192, 384, 768};
  } else if (name == "small") {
    c.depths = {3, 3, 27, 3};
    c.widths = {96, 192, 384, 768};
  } else if (name == "base") {
    c.depths = {3, 3, 27, 3};
    c.widths = {128, 256, 512, 1024};
  } else if (name == "large") {
    c.depths = {3, 3, 27, 3};
    c.widths = {192, 384, 768, 1536};
  } else {
    throw ConfigError(fmt::format("unknown ConvNeXt preset '{}'", name));
  }
  return c;
}

ConvNeXtConfig convnext_config_from_json(const nlohmann::json& j) {
  ConvNeXtConfig c;
  try {
    if (j.contains("preset")) c = convnext_preset(j.at("preset").get<std::string>());
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("depths")) c.depths = j.at("depths").get<std::array<int, 4>>();
    if (j.contains("widths")) c.widths = j.at("widths").get<std::array<std::int64_t, 4>>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<std::int64_t>();
    if (j.contains("input")) c.input = j.at("input").get<Shape>();
    if (j.contains("norm_eps")) c.norm_eps = j.at("norm_eps").get<float>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad ConvNeXt config: {}", e.what()));
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const ConvNeXtConfig& cfg) {
  return {{"name", cfg.name},       {"depths", cfg.depths}, {"widths", cfg.widths},
          {"num_classes", cfg.num_classes}, {"input", cfg.input}, {"norm_eps", cfg.norm_eps}};
}

namespace {

class Builder {
 public:
  Builder(Model& m, std::uint64_t seed) : m_(m), rng_(seed) {}

  int conv(const std::string& name, int input, std::int64_t in, std::int64_t out, int kernel, int stride,
           int padding, int groups) {
    LayerNode n = start(NodeKind::kConv2d, name, {input});
    n.attrs = ConvAttrs{in, out, kernel, stride, padding, groups, true};
    add_weight(n, {out, in / groups, kernel, kernel});
    add_zeros(n, "bias", {out});
    return finish(std::move(n));
  }

  int linear(const std::string& name, int input, std::int64_t in, std::int64_t out, int axis) {
    LayerNode n = start(NodeKind::kLinear, name, {input});
    n.attrs = LinearAttrs{in, out, axis, true};
    add_weight(n, {out, in});
    add_zeros(n, "bias", {out});
    return finish(std::move(n));
  }

  int norm(const std::string& name, int input, std::int64_t features, float eps, int axis) {
    LayerNode n = start(NodeKind::kLayerNorm, name, {input});
    n.attrs = NormAttrs{features, eps, axis};
    const auto pname = name + ".weight";
    m_.add_param(pname, Tensor::full({features}, 1.0f));
    n.param_refs["weight"] = pname;
    add_zeros(n, "bias", {features});
    return finish(std::move(n));
  }

  int simple(NodeKind kind, const std::string& name, std::vector<int> inputs) {
    return finish(start(kind, name, std::move(inputs)));
  }

 private:
  LayerNode start(NodeKind kind, const std::string& name, std::vector<int> inputs) {
    LayerNode n;
    n.id = static_cast<int>(m_.nodes.size());
    n.kind = kind;
    n.name = name;
    n.inputs = std::move(inputs);
    return n;
  }

  int finish(LayerNode n) {
    m_.nodes.push_back(std::move(n));
    return m_.nodes.back().id;
  }

  void add_weight(LayerNode& n, Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (auto& v : t.data()) {
      float z;
      do {
        z = dist(rng_);
      } while (z < -2.0f || z > 2.0f);
      v = 0.02f * z;
    }
    const auto pname = n.name + ".weight";
    m_.add_param(pname, std::move(t));
    n.param_refs["weight"] = pname;
  }

  void add_zeros(LayerNode& n, const std::string& role, Shape shape) {
    const auto pname = n.name + "." + role;
    m_.add_param(pname, Tensor::zeros(std::move(shape)));
    n.param_refs[role] = pname;
  }

  Model& m_;
  std::mt19937_64 rng_;
};

}  // namespace

Model build_convnext(const ConvNeXtConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.meta.config_name = cfg.name;
  m.meta.num_classes = cfg.num_classes;
  m.meta.input_shape = cfg.input;
  Builder b(m, seed);
  constexpr int kChannelAxis = 1;

  int x = b.conv("stem.conv", kGraphInput, cfg.input[0], cfg.widths[0], 4, 4, 0, 1);
  x = b.norm("stem.norm", x, cfg.widths[0], cfg.norm_eps, kChannelAxis);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto width = cfg.widths[s];
    const auto prefix = fmt::format("stages.{}", s);
    if (s > 0) {
      x = b.norm(prefix + ".downsample.norm", x, cfg.widths[s - 1], cfg.norm_eps, kChannelAxis);
      x = b.conv(prefix + ".downsample.conv", x, cfg.widths[s - 1], width, 2, 2, 0, 1);
    }
    for (int k = 0; k < cfg.depths[s]; ++k) {
      const auto bp = fmt::format("{}.blocks.{}", prefix, k);
      const int shortcut = x;
      int y = b.conv(bp + ".dwconv", x, width, width, 7, 1, 3, static_cast<int>(width));
      y = b.norm(bp + ".norm", y, width, cfg.norm_eps, kChannelAxis);
      y = b.linear(bp + ".pwconv1", y, width, 4 * width, kChannelAxis);
      y = b.simple(NodeKind::kGelu, bp + ".act", {y});
      y = b.linear(bp + ".pwconv2", y, 4 * width, width, kChannelAxis);
      x = b.simple(NodeKind::kResidualAdd, bp + ".add", {shortcut, y});
    }
  }
  x = b.norm("head.norm", x, cfg.widths[3], cfg.norm_eps, kChannelAxis);
  x = b.simple(NodeKind::kGlobalAvgPool, "head.pool", {x});
  b.linear("head.fc", x, cfg.widths[3], cfg.num_classes, -1);
  m.validate();
  return m;
}

}  // namespace cnx
