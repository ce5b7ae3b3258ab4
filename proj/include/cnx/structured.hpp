#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnx/data.hpp"
#include "cnx/model.hpp"
#include "cnx/train.hpp"

namespace cnx {

// A set of tensors whose channel axes are tied: pruning channel c of one
// forces pruning channel c of all the others.
struct NodeGroup {
  int id = 0;
  std::int64_t channels = 0;
  // Nodes whose output carries this group's channels; kGraphInput for the image.
  std::vector<int> members;
  // Conv (groups == 1) / Linear nodes reading this group on their input axis.
  std::vector<int> consumers;
  bool prunable = false;
  bool output_adjacent = false;
  bool input_adjacent = false;
  bool contains_unknown = false;
  // A LayerNorm normalizes over these channels, so a zeroed channel still
  // shifts the statistics of the others: not zero-invariant.
  bool normalized = false;
};

struct DependencyGraph {
  std::vector<NodeGroup> node_groups;
  // node_groups index of each node's output, parallel to model.nodes.
  std::vector<int> output_group;
  int input_group = -1;
};

DependencyGraph analyze_dependencies(const Model& model);

struct Slice {
  std::string param;
  int axis = 0;
  std::int64_t index = 0;

  bool operator==(const Slice&) const = default;
};

// One channel of one prunable node group, with every parameter slice that
// has to be zero for the channel to be removable.
struct PruneGroup {
  int id = 0;
  int node_group = 0;
  std::int64_t channel = 0;
  std::vector<Slice> slices;
};

std::vector<PruneGroup> partition_pzigs(const DependencyGraph& graph, const Model& model);

// Flat element offsets covered by a slice of a tensor with `shape`.
std::vector<std::int64_t> slice_offsets(const Shape& shape, int axis, std::int64_t index);

// Sets every slice of `g` to 0.
void zero_group(Model& model, const PruneGroup& g);
bool group_is_zero(const Model& model, const PruneGroup& g);
double group_norm(const Model& model, const PruneGroup& g);

struct DhspgConfig {
  double target_group_sparsity = 0.0;
  // Plain optimizer steps before the redundant set is chosen; < 0 means a
  // quarter of all steps.
  std::int64_t warmup_steps = -1;
  double epsilon_projection = 0.0;
  double lambda_penalty = 1e-2;
  // "l2": group L2 norm; "l2_mean": L2 norm / sqrt(group size).
  std::string saliency = "l2_mean";
  TrainConfig train;

  static DhspgConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

// Half-space step for one group: x <- trial, or x <- 0 when the trial leaves
// the half-space <trial, x> >= epsilon * |x|^2. Returns true if projected.
bool half_space_project(std::span<float> x, std::span<const float> trial, double epsilon);

std::vector<double> saliency_scores(const Model& model, const std::vector<PruneGroup>& groups, const std::string& metric);

struct DhspgResult {
  Model model;
  std::vector<int> redundant;  // PruneGroup ids, all exactly zero in `model`
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 0;
  // Redundant groups still nonzero after the last step, zeroed by the final projection.
  std::int64_t forced_projections = 0;
  std::vector<EpochStats> epochs;
  std::vector<std::string> warnings;
};

// Trains with AdamW for `cfg.train.epochs` while driving exactly
// ceil(target * |groups|) groups to zero.
DhspgResult dhspg_train(const Model& model, const std::vector<PruneGroup>& groups, const Dataset& train_data,
                        const DhspgConfig& cfg);

// Physically removes every all-zero group. Throws ConsistencyError when a
// group is half zeroed (a weight slice is all zero while other elements are not).
Model extract_subnetwork(const Model& model, const std::vector<PruneGroup>& groups);

struct LayerWidth {
  int node = 0;
  std::string name;
  std::string kind;
  std::int64_t in_before = 0, out_before = 0, in_after = 0, out_after = 0;
};

// Per-node feature widths before and after pruning (nodes matched by id).
std::vector<LayerWidth> pruned_architecture(const Model& before, const Model& after);
nlohmann::ordered_json to_json(const std::vector<LayerWidth>& widths);
std::string to_table(const std::vector<LayerWidth>& widths);

}  // namespace cnx
