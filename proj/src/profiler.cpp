#include "ftbench/profiler.hpp"

#include "ftbench/errors.hpp"
#include "ftbench/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ftb {

namespace {

RangeProfile empty_profile(Index layers) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  RangeProfile p;
  p.layers.assign(static_cast<std::size_t>(layers), LayerRange{inf, -inf, inf, -inf});
  return p;
}

void widen(double& lo, double& hi, const Matrix2D& m, Index layer, const char* what) {
  for (double v : m.data()) {
    if (!std::isfinite(v))
      throw NumericalError("non-finite " + std::string(what) + " at layer " + std::to_string(layer));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
}

}  // namespace

void RangeProfile::merge(const RangeProfile& other) {
  if (other.layers.size() != layers.size()) throw ShapeError("range profiles cover different layer counts");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& a = layers[i];
    const auto& b = other.layers[i];
    a.min = std::min(a.min, b.min);
    a.max = std::max(a.max, b.max);
    a.input_min = std::min(a.input_min, b.input_min);
    a.input_max = std::max(a.input_max, b.input_max);
  }
}

RangeProfile profile_ranges(const ModelGraph& model, const Dataset& data, int workers) {
  if (data.size() == 0) throw std::invalid_argument("profile_ranges: empty dataset");
  const TapSet taps = all_layers(model);
  // Fixed-size shards merged in order; min/max makes the merge order-free anyway.
  constexpr Index shard = 128;
  const Index shards = (data.size() + shard - 1) / shard;
  std::vector<RangeProfile> partial(static_cast<std::size_t>(shards), empty_profile(model.size()));
  parallel_for(static_cast<std::size_t>(shards), workers, [&](std::size_t s) {
    RangeProfile& p = partial[s];
    const Index begin = static_cast<Index>(s) * shard;
    const Index end = std::min(data.size(), begin + shard);
    for (Index i = begin; i < end; ++i) {
      const auto trace = forward(model, data.inputs[static_cast<std::size_t>(i)], 0, taps);
      for (const auto& [layer, y] : trace.outputs) {
        auto& r = p.layers[static_cast<std::size_t>(layer)];
        widen(r.min, r.max, y, layer, "output");
        widen(r.input_min, r.input_max, trace.inputs.at(layer), layer, "input");
      }
    }
  });
  RangeProfile result = empty_profile(model.size());
  for (const auto& p : partial) result.merge(p);
  return result;
}

GoldenSet select_golden(const ModelGraph& model, const Dataset& data) {
  if (data.labels.size() != data.inputs.size()) throw ShapeError("dataset labels and inputs differ in length");
  GoldenSet g;
  for (Index i = 0; i < data.size(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const auto trace = forward(model, data.inputs[idx], data.labels[idx]);
    if (trace.predicted != data.labels[idx]) continue;
    g.sample_ids.push_back(i);
    g.labels.push_back(data.labels[idx]);
    g.losses.push_back(trace.loss);
    g.inputs.push_back(data.inputs[idx]);
  }
  if (g.empty()) throw std::runtime_error("golden set is empty: the model classifies no sample correctly");
  return g;
}

nlohmann::json to_json(const RangeProfile& ranges) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < ranges.layers.size(); ++i) {
    const auto& r = ranges.layers[i];
    j[std::to_string(i)] = {{"min", r.min}, {"max", r.max}, {"input_min", r.input_min}, {"input_max", r.input_max}};
  }
  return j;
}

RangeProfile ranges_from_json(const nlohmann::json& j) {
  RangeProfile p;
  p.layers.resize(j.size());
  for (const auto& [key, v] : j.items()) {
    const auto i = std::stoul(key);
    if (i >= p.layers.size()) throw FormatError("range profile: layer index " + key + " out of sequence");
    auto& r = p.layers[i];
    r.min = v.at("min").get<double>();
    r.max = v.at("max").get<double>();
    r.input_min = v.value("input_min", r.min);
    r.input_max = v.value("input_max", r.max);
    if (!(r.min <= r.max)) throw FormatError("range profile: min > max at layer " + key);
  }
  return p;
}

nlohmann::json to_json(const GoldenSet& golden) {
  return {{"sample_ids", golden.sample_ids}, {"labels", golden.labels}, {"losses", golden.losses}};
}

GoldenSet golden_from_json(const nlohmann::json& j, const Dataset& data) {
  GoldenSet g;
  g.sample_ids = j.at("sample_ids").get<std::vector<Index>>();
  g.labels = j.at("labels").get<std::vector<Index>>();
  g.losses = j.at("losses").get<std::vector<double>>();
  if (g.labels.size() != g.sample_ids.size() || g.losses.size() != g.sample_ids.size())
    throw FormatError("golden set: field lengths differ");
  for (Index id : g.sample_ids) {
    if (id < 0 || id >= data.size()) throw FormatError("golden set: sample id " + std::to_string(id) + " not in dataset");
    g.inputs.push_back(data.inputs[static_cast<std::size_t>(id)]);
  }
  return g;
}

}  // namespace ftb
