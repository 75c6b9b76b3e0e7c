#pragma once

#include "ftbench/injector.hpp"
#include "ftbench/model.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace ftb {

struct LayerVulnerability {
  Index layer = 0;
  double v_orig = 0.0;
  double p_prop = 0.0;
  double delta_loss = 0.0;
  double v_layer = 0.0;
  Index injections = 0;
  Index mismatches = 0;
};

enum class Scheme : std::uint8_t { duplication, checksum };
std::string_view to_string(Scheme scheme);
Scheme parse_scheme(std::string_view name);

/// MAC share of each layer; sums to 1.
std::vector<double> compute_v_orig(const ModelGraph& model);
std::vector<double> compute_v_orig(std::span<const Index> macs);

/// Mismatch rate of `layer`'s records. Throws std::invalid_argument when the
/// layer has no records.
double compute_p_prop(std::span<const InjectionRecord> records, Index layer);
double compute_p_prop(const CampaignResult& campaign, Index layer);

/// Mean of corrupted_loss - golden_loss over `layer`'s records; positive
/// values mean the faults hurt.
double compute_delta_loss(std::span<const InjectionRecord> records, Index layer);
double compute_delta_loss(const CampaignResult& campaign, Index layer);

/// One row per model layer. Layers without records get p_prop = 0.
std::vector<LayerVulnerability> analyze_vulnerability(const ModelGraph& model,
                                                      std::span<const InjectionRecord> records);

struct CurvePoint {
  double overhead = 0.0;
  double coverage = 0.0;
  Index layer = -1;  // layer added at this point, -1 for the origin
};

struct CoverageCurve {
  std::vector<CurvePoint> points;  // starts at (0, 0)
};

/// Order in which layers are added: value/cost descending, ties by lower
/// cost then lower index. Zero-cost layers come first.
std::vector<Index> ratio_order(std::span<const double> values, std::span<const double> costs);

/// Cumulative (cost, coverage) as layers are added in ratio_order. Coverage
/// is normalized by the total value of the given layers.
CoverageCurve build_coverage_curve(std::span<const double> values, std::span<const double> costs);

enum class SelectionMode : std::uint8_t { greedy, greedy_prefix, exhaustive };
std::string_view to_string(SelectionMode mode);
SelectionMode parse_selection_mode(std::string_view name);

struct Selection {
  std::vector<Index> layers;  // ascending
  double coverage = 0.0;
  double cost = 0.0;
};

/// Cheapest set found whose value share reaches `target` (0 < target <= 1).
///   greedy_prefix: shortest prefix of ratio_order reaching the target.
///   greedy: partial enumeration. Every seed of at most two layers is
///           completed by a ratio walk over layers no dearer than the seed,
///           finishing with the cheapest single layer that reaches the
///           target, then pruned. The cheapest cover found (plain prefix
///           included) is returned; its cost is at most 1.5x optimal.
///   exhaustive: optimal subset by enumeration, at most 20 layers.
/// `forced` layers are always included.
Selection select_layers(std::span<const double> values, std::span<const double> costs, double target,
                        SelectionMode mode = SelectionMode::greedy, std::span<const Index> forced = {});

struct LayerCost {
  Index macs = 0;
  double checksum_flops = 0.0;      // per inference
  double duplication_flops = 0.0;   // 2 flops per MAC
  double checksum_memory = 0.0;     // offline weight checksum + online input and output checksums
  double duplication_memory = 0.0;  // weights, bias and output activation
};

LayerCost checksum_cost_model(const LayerSpec& layer);

struct ProtectionPlan {
  Scheme scheme = Scheme::checksum;
  std::vector<Index> layers;
  double target_coverage = 0.0;
  double predicted_coverage = 0.0;
  double compute_overhead = 0.0;  // scheme flops / model flops (2 per MAC)
  double memory_overhead = 0.0;   // scheme memory / model parameter count
  bool head_always_included = true;

  bool protects(Index layer) const;
};

/// Selects layers for `target` using the scheme's per-layer flops as costs.
/// The head is forced in when `force_head` is set.
ProtectionPlan plan_protection(const ModelGraph& model, std::span<const LayerVulnerability> vulns, double target,
                               Scheme scheme, SelectionMode mode = SelectionMode::greedy, bool force_head = true);

/// Coverage curve over per-layer v_layer with the scheme's compute overhead
/// (fraction of model flops) on the x axis. The head is left out when
/// `include_head` is false.
CoverageCurve scheme_curve(const ModelGraph& model, std::span<const LayerVulnerability> vulns, Scheme scheme,
                           bool include_head);

nlohmann::json to_json(const ProtectionPlan& plan);
ProtectionPlan plan_from_json(const nlohmann::json& j);

void write_vulnerability_csv(std::ostream& out, std::span<const LayerVulnerability> vulns);
std::vector<LayerVulnerability> read_vulnerability_csv(std::istream& in);
void write_curve_csv(std::ostream& out, const CoverageCurve& curve);

}  // namespace ftb
