#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cnx/data.hpp"
#include "cnx/model.hpp"

namespace cnx {

// fp32_only leaves int8 parameters (and the MACs of layers whose weights are
// int8) out of the counts; all counts everything.
enum class Convention { kFp32Only, kAll };

const char* convention_name(Convention c);
Convention convention_from_name(const std::string& name);

// Reporting unit for "M" and "MB" columns: 2^20.
inline constexpr double kMega = 1048576.0;

std::int64_t count_params(const Model& model, Convention c);
// `input` is the full batched input shape [N, C, H, W].
std::int64_t count_macs(const Model& model, const Shape& input, Convention c);
// Exactly the number of bytes save(model) writes.
std::uint64_t model_size_bytes(const Model& model);
// Elements != 0 (int8 parameters compare their stored integers).
std::int64_t count_nonzero(const Model& model, Convention c);

// Top-1 accuracy in percent; ties in the logits go to the lowest class index.
double evaluate(const Model& model, const Dataset& ds, std::int64_t batch_size, const NormalizationConfig& norm = {});

struct Counts {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t nonzero_params = 0;

  bool operator==(const Counts&) const = default;
};

struct Profile {
  std::optional<double> accuracy_pct;
  std::uint64_t size_bytes = 0;
  Convention convention = Convention::kFp32Only;
  Counts counts;      // under `convention`
  Counts all_counts;  // always under Convention::kAll
  Shape input_shape;

  double size_mb() const { return static_cast<double>(size_bytes) / kMega; }
  double params_m() const { return static_cast<double>(counts.params) / kMega; }
  double macs_m() const { return static_cast<double>(counts.macs) / kMega; }
  double nonzero_params_m() const { return static_cast<double>(counts.nonzero_params) / kMega; }

  bool operator==(const Profile&) const = default;
};

// Accuracy is measured only when `ds` is given. MACs are for a batch of one.
Profile profile(const Model& model, const Dataset* ds, Convention c, std::int64_t batch_size = 256,
                const NormalizationConfig& norm = {});

nlohmann::ordered_json to_json(const Profile& p);
Profile profile_from_json(const nlohmann::json& j);

}  // namespace cnx
