#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cnx/data.hpp"
#include "cnx/model.hpp"
#include "cnx/profiler.hpp"

namespace cnx {

enum class MaskMethod { kL1, kRandom };

const char* method_name(MaskMethod m);
MaskMethod method_from_name(const std::string& name);

// One 0/1 float mask per masked weight, in parameter declaration order.
struct MaskSet {
  std::vector<std::pair<std::string, Tensor>> masks;
  MaskMethod method = MaskMethod::kL1;
  double frac_linear = 0.0;
  double frac_conv = 0.0;

  std::int64_t zeros() const;
};

// floor(frac * n), tolerant of representation error in frac.
std::int64_t masked_count(double frac, std::int64_t n);

// Per weight tensor of every Linear / Conv2d node (biases and norms exempt):
// mask the floor(frac * numel) smallest |w|, ties by lower flat index first.
// Quantized weights are skipped.
MaskSet l1_mask(const Model& model, double frac_linear, double frac_conv);

// Same counts as l1_mask, positions drawn uniformly from a seeded generator.
MaskSet random_mask(const Model& model, double frac_linear, double frac_conv, std::uint64_t seed);

// Zeroes masked weights. Shapes and graph are untouched; idempotent.
Model apply_masks(const Model& model, const MaskSet& masks);

struct SweepRow {
  double frac_linear = 0.0;
  double frac_conv = 0.0;
  Profile profile;
};

// "a:b:s" inclusive range, e.g. 0.1:0.9:0.1 -> 0.1, 0.2, ..., 0.9.
std::vector<double> parse_fracs(const std::string& spec);

// Every (fl, fc) pair, each masking a fresh copy of `model`. Accuracy is
// measured only when `eval` is given.
std::vector<SweepRow> sweep(const Model& model, const Dataset* eval, const std::vector<double>& fracs_linear,
                            const std::vector<double>& fracs_conv, MaskMethod method, std::uint64_t seed = 0,
                            Convention c = Convention::kFp32Only, std::int64_t batch_size = 256);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace cnx
