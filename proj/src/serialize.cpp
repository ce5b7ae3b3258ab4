#include "cnx/serialize.hpp"

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cnx/errors.hpp"

namespace cnx {

namespace {

using nlohmann::ordered_json;

constexpr char kMagic[4] = {'C', 'X', 'M', '1'};
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

static_assert(std::endian::native == std::endian::little, "payload writer assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t at, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

ordered_json attrs_json(const LayerNode& n) {
  ordered_json a = ordered_json::object();
  if (auto* c = std::get_if<ConvAttrs>(&n.attrs)) {
    a = {{"in_channels", c->in_channels}, {"out_channels", c->out_channels}, {"kernel", c->kernel},
         {"stride", c->stride},           {"padding", c->padding},           {"groups", c->groups},
         {"bias", c->bias}};
  } else if (auto* l = std::get_if<LinearAttrs>(&n.attrs)) {
    a = {{"in_features", l->in_features}, {"out_features", l->out_features}, {"axis", l->axis}, {"bias", l->bias}};
  } else if (auto* m = std::get_if<NormAttrs>(&n.attrs)) {
    a = {{"features", m->features}, {"eps", m->eps}, {"axis", m->axis}};
  }
  return a;
}

NodeAttrs attrs_from_json(NodeKind kind, const ordered_json& a) {
  switch (kind) {
    case NodeKind::kConv2d:
      return ConvAttrs{a.at("in_channels").get<std::int64_t>(), a.at("out_channels").get<std::int64_t>(),
                       a.at("kernel").get<int>(), a.at("stride").get<int>(), a.at("padding").get<int>(),
                       a.at("groups").get<int>(), a.at("bias").get<bool>()};
    case NodeKind::kLinear:
      return LinearAttrs{a.at("in_features").get<std::int64_t>(), a.at("out_features").get<std::int64_t>(),
                         a.at("axis").get<int>(), a.at("bias").get<bool>()};
    case NodeKind::kLayerNorm:
      return NormAttrs{a.at("features").get<std::int64_t>(), a.at("eps").get<float>(), a.at("axis").get<int>()};
    default:
      return std::monostate{};
  }
}

std::uint64_t payload_size(const Model& m) {
  std::uint64_t n = 0;
  for (const auto& name : m.param_names()) {
    const auto count = static_cast<std::uint64_t>(numel(m.param_shape(name)));
    n += m.is_quantized(name) ? count : 4 * count;
  }
  return n;
}

std::string header_text(const Model& m, std::uint64_t checksum) {
  ordered_json h;
  h["format_version"] = kCxmVersion;
  h["metadata"] = {{"config_name", m.meta.config_name},
                   {"num_classes", m.meta.num_classes},
                   {"input_shape", m.meta.input_shape}};
  ordered_json nodes = ordered_json::array();
  for (const auto& n : m.nodes) {
    ordered_json params = ordered_json::object();
    for (const auto& [role, name] : n.param_refs) params[role] = name;
    nodes.push_back({{"id", n.id},
                     {"kind", kind_name(n.kind)},
                     {"name", n.name},
                     {"inputs", n.inputs},
                     {"attrs", attrs_json(n)},
                     {"params", params}});
  }
  h["nodes"] = std::move(nodes);
  ordered_json params = ordered_json::array();
  for (const auto& name : m.param_names()) {
    ordered_json p = {{"name", name}, {"shape", m.param_shape(name)}};
    if (m.is_quantized(name)) {
      const auto& q = m.quantized(name);
      p["dtype"] = "i8";
      p["scale"] = q.scale;
      p["zero_point"] = q.zero_point;
    } else {
      p["dtype"] = "f32";
    }
    params.push_back(std::move(p));
  }
  h["params"] = std::move(params);
  h["payload_bytes"] = payload_size(m);
  // fixed width so the header length does not depend on the checksum value
  h["payload_fnv1a64"] = fmt::format("{:016x}", checksum);
  return h.dump();
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t serialized_size(const Model& model) {
  return kPreambleBytes + header_text(model, 0).size() + payload_size(model);
}

std::vector<std::uint8_t> serialize(const Model& model) {
  model.validate();
  std::vector<std::uint8_t> payload;
  payload.reserve(payload_size(model));
  for (const auto& name : model.param_names()) {
    if (model.is_quantized(name)) {
      auto d = model.quantized(name).values.int8_data();
      const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
      payload.insert(payload.end(), p, p + d.size());
    } else {
      auto d = model.fp32(name).data();
      const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
      payload.insert(payload.end(), p, p + d.size() * sizeof(float));
    }
  }
  const std::string header = header_text(model, fnv1a64(payload));
  std::vector<std::uint8_t> out;
  out.reserve(kPreambleBytes + header.size() + payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kCxmVersion);
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Model deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleBytes) throw TruncatedFileError("model file is shorter than its preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw LoadError("not a .cxm model file (bad magic)");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kCxmVersion) {
    throw VersionMismatchError(fmt::format("model file format version {} is not supported (expected {})", version,
                                           kCxmVersion));
  }
  const auto header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - kPreambleBytes) throw TruncatedFileError("model file truncated inside the header");
  ordered_json h;
  try {
    h = ordered_json::parse(bytes.begin() + kPreambleBytes,
                            bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("model header is not valid JSON: {}", e.what()));
  }
  const auto payload = bytes.subspan(kPreambleBytes + header_len);
  try {
    if (h.at("format_version").get<std::uint32_t>() != version) {
      throw VersionMismatchError("header and preamble disagree on the format version");
    }
    const auto want = h.at("payload_bytes").get<std::uint64_t>();
    if (payload.size() < want) {
      throw TruncatedFileError(fmt::format("model payload has {} bytes, header declares {}", payload.size(), want));
    }
    if (payload.size() > want) throw LoadError("trailing bytes after model payload");
    if (fmt::format("{:016x}", fnv1a64(payload)) != h.at("payload_fnv1a64").get<std::string>()) {
      throw ChecksumError("model payload checksum mismatch");
    }

    Model m;
    const auto& meta = h.at("metadata");
    m.meta.config_name = meta.at("config_name").get<std::string>();
    m.meta.num_classes = meta.at("num_classes").get<std::int64_t>();
    m.meta.input_shape = meta.at("input_shape").get<Shape>();
    for (const auto& jn : h.at("nodes")) {
      LayerNode n;
      n.id = jn.at("id").get<int>();
      n.kind = kind_from_name(jn.at("kind").get<std::string>());
      n.name = jn.at("name").get<std::string>();
      n.inputs = jn.at("inputs").get<std::vector<int>>();
      n.attrs = attrs_from_json(n.kind, jn.at("attrs"));
      for (const auto& [role, name] : jn.at("params").items()) n.param_refs[role] = name.get<std::string>();
      m.nodes.push_back(std::move(n));
    }
    std::size_t at = 0;
    for (const auto& jp : h.at("params")) {
      const auto name = jp.at("name").get<std::string>();
      const auto shape = jp.at("shape").get<Shape>();
      const auto count = static_cast<std::size_t>(numel(shape));
      const auto dtype = jp.at("dtype").get<std::string>();
      const std::size_t nbytes = dtype == "i8" ? count : count * sizeof(float);
      if (at + nbytes > payload.size()) throw LoadError(fmt::format("parameter {} overruns the payload", name));
      if (dtype == "f32") {
        std::vector<float> data(count);
        std::memcpy(data.data(), payload.data() + at, count * sizeof(float));
        at += count * sizeof(float);
        m.add_param(name, Tensor::from(shape, std::move(data)));
      } else if (dtype == "i8") {
        std::vector<std::int8_t> data(count);
        std::memcpy(data.data(), payload.data() + at, count);
        at += count;
        m.add_param(name, Tensor::zeros({0}));
        m.set_quantized(name, QuantizedTensor{Tensor::from_int8(shape, std::move(data)), jp.at("scale").get<float>(),
                                              jp.at("zero_point").get<std::int32_t>()});
      } else {
        throw LoadError(fmt::format("parameter {} has unknown dtype {}", name, dtype));
      }
    }
    if (at != payload.size()) throw LoadError("parameter table does not cover the payload");
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("malformed model header: {}", e.what()));
  } catch (const InternalError& e) {
    throw LoadError(fmt::format("model file describes an invalid graph: {}", e.what()));
  }
}

void save(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError(fmt::format("cannot open {} for writing", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw UsageError(fmt::format("failed writing {}", path.string()));
}

Model load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(fmt::format("cannot open model file {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace cnx
