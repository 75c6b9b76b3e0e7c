#pragma once

#include "ftbench/model.hpp"

#include <json.hpp>

#include <vector>

namespace ftb {

/// Observed bounds of one layer. `min`/`max` cover the raw GEMM output (the
/// injection target); the input bounds cover the GEMM operand X.
struct LayerRange {
  double min = 0.0;
  double max = 0.0;
  double input_min = 0.0;
  double input_max = 0.0;
};

struct RangeProfile {
  std::vector<LayerRange> layers;

  const LayerRange& at(Index layer) const { return layers.at(static_cast<std::size_t>(layer)); }
  /// Elementwise union; both profiles must cover the same layers.
  void merge(const RangeProfile& other);
};

/// Correctly classified members of a dataset, in dataset order.
struct GoldenSet {
  std::vector<Index> sample_ids;
  std::vector<Index> labels;
  std::vector<double> losses;
  std::vector<Matrix2D> inputs;

  Index size() const { return static_cast<Index>(sample_ids.size()); }
  bool empty() const { return sample_ids.empty(); }
};

/// Exact min/max of every layer's output and operand over the dataset.
/// Throws NumericalError naming the layer on a non-finite activation.
RangeProfile profile_ranges(const ModelGraph& model, const Dataset& data, int workers = 1);

/// Samples whose clean prediction equals their label, with their golden loss.
/// Throws std::runtime_error when nothing qualifies.
GoldenSet select_golden(const ModelGraph& model, const Dataset& data);

nlohmann::json to_json(const RangeProfile& ranges);
RangeProfile ranges_from_json(const nlohmann::json& j);

/// Stores ids, labels and losses; inputs are restored from `data`.
nlohmann::json to_json(const GoldenSet& golden);
GoldenSet golden_from_json(const nlohmann::json& j, const Dataset& data);

}  // namespace ftb
