#include "cnx/unstructured.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <random>

#include "cnx/errors.hpp"

namespace cnx {

const char* method_name(MaskMethod m) { return m == MaskMethod::kL1 ? "l1" : "random"; }

MaskMethod method_from_name(const std::string& name) {
  if (name == "l1") return MaskMethod::kL1;
  if (name == "random") return MaskMethod::kRandom;
  throw UsageError(fmt::format("unknown pruning method '{}' (expected l1 or random)", name));
}

std::int64_t MaskSet::zeros() const {
  std::int64_t z = 0;
  for (const auto& [name, m] : masks) z += m.size() - m.count_nonzero();
  return z;
}

std::int64_t masked_count(double frac, std::int64_t n) {
  if (!(frac >= 0.0 && frac <= 1.0)) throw UsageError(fmt::format("pruning fraction {} outside [0, 1]", frac));
  return std::min(n, static_cast<std::int64_t>(std::floor(frac * static_cast<double>(n) + 1e-9)));
}

namespace {

template <typename Pick>
MaskSet build_masks(const Model& model, double frac_linear, double frac_conv, MaskMethod method, Pick pick) {
  MaskSet ms;
  ms.method = method;
  ms.frac_linear = frac_linear;
  ms.frac_conv = frac_conv;
  masked_count(frac_linear, 0);
  masked_count(frac_conv, 0);
  for (const auto& n : model.nodes) {
    if (n.kind != NodeKind::kLinear && n.kind != NodeKind::kConv2d) continue;
    const auto& name = n.param("weight");
    if (model.is_quantized(name)) continue;
    const auto& w = model.fp32(name);
    const auto k = masked_count(n.kind == NodeKind::kLinear ? frac_linear : frac_conv, w.size());
    Tensor mask = Tensor::full(w.shape(), 1.0f);
    for (auto i : pick(w, k)) mask[i] = 0.0f;
    ms.masks.emplace_back(name, std::move(mask));
  }
  return ms;
}

}  // namespace

MaskSet l1_mask(const Model& model, double frac_linear, double frac_conv) {
  return build_masks(model, frac_linear, frac_conv, MaskMethod::kL1, [](const Tensor& w, std::int64_t k) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(w.size()));
    std::iota(idx.begin(), idx.end(), 0);
    auto d = w.data();
    auto mag = [&](std::int64_t i) { return std::fabs(d[static_cast<std::size_t>(i)]); };
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return mag(a) < mag(b); });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  });
}

MaskSet random_mask(const Model& model, double frac_linear, double frac_conv, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build_masks(model, frac_linear, frac_conv, MaskMethod::kRandom, [&](const Tensor& w, std::int64_t k) {
    // partial Fisher-Yates: the first k entries are a uniform k-subset
    std::vector<std::int64_t> idx(static_cast<std::size_t>(w.size()));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, w.size() - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  });
}

Model apply_masks(const Model& model, const MaskSet& masks) {
  Model out = model;
  for (const auto& [name, mask] : masks.masks) {
    auto& w = out.fp32(name);
    if (w.shape() != mask.shape()) {
      throw DimensionError(fmt::format("mask for {} has shape {}, weight has {}", name, shape_str(mask.shape()),
                                       shape_str(w.shape())));
    }
    auto wd = w.data();
    auto md = mask.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
      if (md[i] == 0.0f) wd[i] = 0.0f;
    }
  }
  return out;
}

std::vector<double> parse_fracs(const std::string& spec) {
  std::vector<double> parts;
  std::size_t start = 0;
  try {
    while (true) {
      const auto colon = spec.find(':', start);
      parts.push_back(std::stod(spec.substr(start, colon - start)));
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
  } catch (const std::exception&) {
    throw UsageError(fmt::format("bad fraction range '{}' (expected a:b:step)", spec));
  }
  if (parts.size() == 1) return parts;
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
    throw UsageError(fmt::format("bad fraction range '{}' (expected a:b:step)", spec));
  }
  std::vector<double> out;
  const auto steps = static_cast<int>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
  for (int i = 0; i <= steps; ++i) {
    // rounded to the step's decimal grid so 0.1 * 3 prints as 0.3
    out.push_back(std::round((parts[0] + i * parts[2]) * 1e9) / 1e9);
  }
  return out;
}

std::vector<SweepRow> sweep(const Model& model, const Dataset* eval, const std::vector<double>& fracs_linear,
                            const std::vector<double>& fracs_conv, MaskMethod method, std::uint64_t seed, Convention c,
                            std::int64_t batch_size) {
  std::vector<SweepRow> rows;
  for (double fl : fracs_linear) {
    for (double fc : fracs_conv) {
      const auto masks = method == MaskMethod::kL1 ? l1_mask(model, fl, fc) : random_mask(model, fl, fc, seed);
      rows.push_back({fl, fc, profile(apply_masks(model, masks), eval, c, batch_size)});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "frac_linear,frac_conv,accuracy_pct,nonzero_params_m,size_bytes,params_m,macs_m,convention\n";
  for (const auto& r : rows) {
    const auto& p = r.profile;
    s += fmt::format("{},{},{},{:.6f},{},{:.6f},{:.6f},{}\n", r.frac_linear, r.frac_conv,
                     p.accuracy_pct ? fmt::format("{:.2f}", *p.accuracy_pct) : std::string(), p.nonzero_params_m(),
                     p.size_bytes, p.params_m(), p.macs_m(), convention_name(p.convention));
  }
  return s;
}

}  // namespace cnx
