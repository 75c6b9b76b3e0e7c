#include "ftbench/analysis.hpp"

#include "ftbench/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

namespace ftb {

namespace {

// Coverage comparisons tolerate summation-order noise.
constexpr double kCoverageSlack = 1e-12;

bool reaches(double coverage, double target) { return coverage >= target - kCoverageSlack; }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_inputs(std::span<const double> values, std::span<const double> costs) {
  if (values.size() != costs.size()) throw ShapeError("values and costs differ in length");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(costs[i] >= 0.0) || !std::isfinite(costs[i]))
      throw std::invalid_argument("cost of layer " + std::to_string(i) + " is negative or not finite");
    if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
      throw std::invalid_argument("value of layer " + std::to_string(i) + " is negative or not finite");
  }
}

struct SetEval {
  double coverage = 0.0;
  double cost = 0.0;
};

SetEval evaluate(std::span<const double> values, std::span<const double> costs, const std::vector<Index>& set,
                 double total) {
  SetEval e;
  double v = 0.0;
  for (Index i : set) {
    v += values[static_cast<std::size_t>(i)];
    e.cost += costs[static_cast<std::size_t>(i)];
  }
  e.coverage = total > 0.0 ? v / total : 1.0;
  return e;
}

Selection finish(std::span<const double> values, std::span<const double> costs, std::vector<Index> set,
                 double total) {
  std::sort(set.begin(), set.end());
  const SetEval e = evaluate(values, costs, set, total);
  return Selection{std::move(set), e.coverage, e.cost};
}

double coverage_of(double value, double total) { return total > 0.0 ? value / total : 1.0; }

// Greedy cover starting from `forced` plus `seed`, using only layers that cost
// no more than the cheapest seed layer: walk the ratio order and, at the
// crossing point, take the cheapest layer that completes the cover instead
// of the crossing layer. Layers the cover no longer needs are then dropped,
// most expensive first. Forced layers are never dropped.
std::optional<Selection> complete_cover(std::span<const double> values, std::span<const double> costs,
                                        const std::vector<Index>& order, double target, double total,
                                        const std::vector<char>& forced_flags, const std::vector<Index>& forced,
                                        std::initializer_list<Index> seed) {
  const std::size_t n = values.size();
  std::vector<char> chosen = forced_flags;
  std::vector<Index> set = forced;
  double value = 0.0;
  double max_cost = std::numeric_limits<double>::infinity();
  for (Index f : forced) value += values[static_cast<std::size_t>(f)];
  for (Index s : seed) max_cost = std::min(max_cost, costs[static_cast<std::size_t>(s)]);
  for (std::size_t j = 0; j < n; ++j)
    if (costs[j] > max_cost) chosen[j] = 1;  // ineligible
  for (Index s : seed) {
    chosen[static_cast<std::size_t>(s)] = 1;
    set.push_back(s);
    value += values[static_cast<std::size_t>(s)];
  }
  for (Index i : order) {
    if (reaches(coverage_of(value, total), target)) break;
    if (chosen[static_cast<std::size_t>(i)]) continue;
    if (!reaches(coverage_of(value + values[static_cast<std::size_t>(i)], total), target)) {
      chosen[static_cast<std::size_t>(i)] = 1;
      set.push_back(i);
      value += values[static_cast<std::size_t>(i)];
      continue;
    }
    Index pick = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (chosen[j] || !reaches(coverage_of(value + values[j], total), target)) continue;
      const auto p = static_cast<std::size_t>(pick);
      if (costs[j] < costs[p] || (costs[j] == costs[p] && static_cast<Index>(j) < pick)) pick = static_cast<Index>(j);
    }
    chosen[static_cast<std::size_t>(pick)] = 1;
    set.push_back(pick);
    value += values[static_cast<std::size_t>(pick)];
    break;
  }
  if (!reaches(coverage_of(value, total), target)) return std::nullopt;

  std::vector<Index> removable;
  for (Index i : set)
    if (!forced_flags[static_cast<std::size_t>(i)]) removable.push_back(i);
  std::stable_sort(removable.begin(), removable.end(), [&](Index a, Index b) {
    const double ca = costs[static_cast<std::size_t>(a)];
    const double cb = costs[static_cast<std::size_t>(b)];
    return ca != cb ? ca > cb : a > b;
  });
  for (Index r : removable) {
    const double without = value - values[static_cast<std::size_t>(r)];
    if (reaches(coverage_of(without, total), target)) {
      value = without;
      set.erase(std::find(set.begin(), set.end(), r));
    }
  }
  Selection sel = finish(values, costs, std::move(set), total);
  if (!reaches(sel.coverage, target)) return std::nullopt;
  return sel;
}

Selection select_exhaustive(std::span<const double> values, std::span<const double> costs, double target,
                            double total, std::uint32_t forced_mask) {
  const std::size_t n = values.size();
  if (n > 20) throw std::invalid_argument("exhaustive selection supports at most 20 layers");
  const std::uint32_t masks = 1u << n;
  std::vector<double> value(masks, 0.0);
  std::vector<double> cost(masks, 0.0);
  std::int64_t best = -1;
  for (std::uint32_t m = 1; m < masks; ++m) {
    const int low = std::countr_zero(m);
    const std::uint32_t rest = m & (m - 1);
    value[m] = value[rest] + values[static_cast<std::size_t>(low)];
    cost[m] = cost[rest] + costs[static_cast<std::size_t>(low)];
  }
  for (std::uint32_t m = 0; m < masks; ++m) {
    if ((m & forced_mask) != forced_mask) continue;
    const double coverage = total > 0.0 ? value[m] / total : 1.0;
    if (!reaches(coverage, target)) continue;
    if (best < 0) {
      best = m;
      continue;
    }
    const auto b = static_cast<std::uint32_t>(best);
    if (cost[m] < cost[b] || (cost[m] == cost[b] && std::popcount(m) < std::popcount(b))) best = m;
  }
  if (best < 0) throw std::invalid_argument("target coverage unreachable");
  std::vector<Index> set;
  for (std::size_t i = 0; i < n; ++i)
    if (static_cast<std::uint32_t>(best) & (1u << i)) set.push_back(static_cast<Index>(i));
  return finish(values, costs, std::move(set), total);
}

}  // namespace

std::string_view to_string(Scheme scheme) { return scheme == Scheme::duplication ? "duplication" : "checksum"; }

Scheme parse_scheme(std::string_view name) {
  if (name == "duplication") return Scheme::duplication;
  if (name == "checksum") return Scheme::checksum;
  throw std::invalid_argument("unknown protection scheme '" + std::string(name) + "'");
}

std::string_view to_string(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::greedy: return "greedy";
    case SelectionMode::greedy_prefix: return "greedy_prefix";
    case SelectionMode::exhaustive: return "exhaustive";
  }
  return "unknown";
}

SelectionMode parse_selection_mode(std::string_view name) {
  for (SelectionMode m : {SelectionMode::greedy, SelectionMode::greedy_prefix, SelectionMode::exhaustive})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown selection mode '" + std::string(name) + "'");
}

std::vector<double> compute_v_orig(std::span<const Index> macs) {
  if (macs.empty()) throw std::invalid_argument("compute_v_orig: no layers");
  const auto total = static_cast<double>(std::accumulate(macs.begin(), macs.end(), Index{0}));
  if (total <= 0.0) throw std::invalid_argument("compute_v_orig: total MAC count is zero");
  std::vector<double> v;
  v.reserve(macs.size());
  for (Index m : macs) v.push_back(static_cast<double>(m) / total);
  return v;
}

std::vector<double> compute_v_orig(const ModelGraph& model) {
  std::vector<Index> macs;
  for (const auto& l : model.layers) macs.push_back(mac_count(l));
  return compute_v_orig(macs);
}

double compute_p_prop(std::span<const InjectionRecord> records, Index layer) {
  Index n = 0;
  Index mismatches = 0;
  for (const auto& r : records) {
    if (r.spec.layer != layer) continue;
    ++n;
    if (r.mismatch) ++mismatches;
  }
  if (n == 0) throw std::invalid_argument("no injections recorded for layer " + std::to_string(layer));
  return static_cast<double>(mismatches) / static_cast<double>(n);
}

double compute_p_prop(const CampaignResult& campaign, Index layer) { return compute_p_prop(campaign.records, layer); }

double compute_delta_loss(std::span<const InjectionRecord> records, Index layer) {
  Index n = 0;
  double sum = 0.0;
  for (const auto& r : records) {
    if (r.spec.layer != layer) continue;
    ++n;
    sum += r.corrupted_loss - r.golden_loss;
  }
  if (n == 0) throw std::invalid_argument("no injections recorded for layer " + std::to_string(layer));
  return sum / static_cast<double>(n);
}

double compute_delta_loss(const CampaignResult& campaign, Index layer) {
  return compute_delta_loss(campaign.records, layer);
}

std::vector<LayerVulnerability> analyze_vulnerability(const ModelGraph& model,
                                                      std::span<const InjectionRecord> records) {
  const auto v_orig = compute_v_orig(model);
  std::vector<LayerVulnerability> out;
  for (Index i = 0; i < model.size(); ++i) {
    LayerVulnerability v;
    v.layer = i;
    v.v_orig = v_orig[static_cast<std::size_t>(i)];
    for (const auto& r : records) {
      if (r.spec.layer != i) continue;
      ++v.injections;
      if (r.mismatch) ++v.mismatches;
    }
    if (v.injections > 0) {
      v.p_prop = compute_p_prop(records, i);
      v.delta_loss = compute_delta_loss(records, i);
    }
    v.v_layer = v.v_orig * v.p_prop;
    out.push_back(v);
  }
  return out;
}

std::vector<Index> ratio_order(std::span<const double> values, std::span<const double> costs) {
  check_inputs(values, costs);
  auto ratio = [&](std::size_t i) {
    if (costs[i] == 0.0) return values[i] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return values[i] / costs[i];
  };
  std::vector<Index> order(values.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const auto ia = static_cast<std::size_t>(a);
    const auto ib = static_cast<std::size_t>(b);
    const double ra = ratio(ia);
    const double rb = ratio(ib);
    if (ra != rb) return ra > rb;
    if (costs[ia] != costs[ib]) return costs[ia] < costs[ib];
    return a < b;
  });
  return order;
}

CoverageCurve build_coverage_curve(std::span<const double> values, std::span<const double> costs) {
  const auto order = ratio_order(values, costs);
  const double total = std::accumulate(values.begin(), values.end(), 0.0);
  CoverageCurve curve;
  curve.points.push_back({0.0, 0.0, -1});
  double cost = 0.0;
  double value = 0.0;
  for (Index i : order) {
    cost += costs[static_cast<std::size_t>(i)];
    value += values[static_cast<std::size_t>(i)];
    curve.points.push_back({cost, total > 0.0 ? std::min(1.0, value / total) : 1.0, i});
  }
  if (curve.points.size() > 1) curve.points.back().coverage = 1.0;
  return curve;
}

Selection select_layers(std::span<const double> values, std::span<const double> costs, double target,
                        SelectionMode mode, std::span<const Index> forced) {
  check_inputs(values, costs);
  if (!(target > 0.0 && target <= 1.0)) throw std::invalid_argument("target coverage must lie in (0, 1]");
  const std::size_t n = values.size();
  if (n == 0) throw std::invalid_argument("select_layers: no layers");
  const double total = std::accumulate(values.begin(), values.end(), 0.0);

  std::vector<char> in_set(n, 0);
  std::vector<Index> base;
  std::uint32_t forced_mask = 0;
  for (Index f : forced) {
    if (f < 0 || static_cast<std::size_t>(f) >= n) throw std::out_of_range("forced layer out of range");
    if (in_set[static_cast<std::size_t>(f)]) continue;
    in_set[static_cast<std::size_t>(f)] = 1;
    base.push_back(f);
    if (n <= 20) forced_mask |= 1u << f;
  }

  if (mode == SelectionMode::exhaustive) return select_exhaustive(values, costs, target, total, forced_mask);

  double base_value = 0.0;
  for (Index f : base) base_value += values[static_cast<std::size_t>(f)];
  if (reaches(coverage_of(base_value, total), target)) return finish(values, costs, base, total);

  const auto order = ratio_order(values, costs);

  // Plain prefix walk.
  std::vector<Index> prefix = base;
  double value = base_value;
  bool reached = false;
  for (Index i : order) {
    if (in_set[static_cast<std::size_t>(i)]) continue;
    prefix.push_back(i);
    value += values[static_cast<std::size_t>(i)];
    if (reaches(coverage_of(value, total), target)) {
      reached = true;
      break;
    }
  }
  if (!reached) throw std::invalid_argument("target coverage unreachable");
  Selection best = finish(values, costs, prefix, total);
  if (mode == SelectionMode::greedy_prefix) return best;

  auto consider = [&](std::optional<Selection> cand) {
    if (!cand) return;
    if (cand->cost < best.cost ||
        (cand->cost == best.cost && (cand->layers.size() < best.layers.size() ||
                                     (cand->layers.size() == best.layers.size() && cand->layers < best.layers))))
      best = std::move(*cand);
  };
  // Completed walks seeded with every set of at most two extra layers.
  consider(complete_cover(values, costs, order, target, total, in_set, base, {}));
  for (std::size_t i = 0; i < n; ++i) {
    if (in_set[i]) continue;
    consider(complete_cover(values, costs, order, target, total, in_set, base, {static_cast<Index>(i)}));
    for (std::size_t j = i + 1; j < n; ++j) {
      if (in_set[j]) continue;
      consider(complete_cover(values, costs, order, target, total, in_set, base,
                              {static_cast<Index>(i), static_cast<Index>(j)}));
    }
  }
  return best;
}

LayerCost checksum_cost_model(const LayerSpec& layer) {
  const auto t = static_cast<double>(layer.tokens);
  const auto in = static_cast<double>(layer.in_dim);
  const auto out = static_cast<double>(layer.out_dim);
  LayerCost c;
  c.macs = mac_count(layer);
  c.checksum_flops = t * in + t * out + t * in;
  c.duplication_flops = 2.0 * static_cast<double>(c.macs);
  c.checksum_memory = in + 2.0 * t;
  c.duplication_memory = in * out + out + t * out;
  return c;
}

bool ProtectionPlan::protects(Index layer) const {
  return std::binary_search(layers.begin(), layers.end(), layer);
}

namespace {

double scheme_flops(const LayerCost& c, Scheme scheme) {
  return scheme == Scheme::checksum ? c.checksum_flops : c.duplication_flops;
}

double model_flops(const ModelGraph& model) { return 2.0 * static_cast<double>(total_macs(model)); }

double parameter_count(const ModelGraph& model) {
  double p = 0.0;
  for (const auto& l : model.layers) p += static_cast<double>(l.in_dim * l.out_dim + l.out_dim);
  return p;
}

}  // namespace

ProtectionPlan plan_protection(const ModelGraph& model, std::span<const LayerVulnerability> vulns, double target,
                               Scheme scheme, SelectionMode mode, bool force_head) {
  if (static_cast<Index>(vulns.size()) != model.size()) throw ShapeError("one vulnerability entry per layer required");
  std::vector<double> values;
  std::vector<double> costs;
  std::vector<LayerCost> layer_costs;
  const double flops = model_flops(model);
  for (const auto& l : model.layers) {
    layer_costs.push_back(checksum_cost_model(l));
    values.push_back(vulns[static_cast<std::size_t>(l.index)].v_layer);
    costs.push_back(scheme_flops(layer_costs.back(), scheme) / flops);
  }
  std::vector<Index> forced;
  if (force_head) forced.push_back(model.head_index());
  const Selection sel = select_layers(values, costs, target, mode, forced);

  ProtectionPlan plan;
  plan.scheme = scheme;
  plan.layers = sel.layers;
  plan.target_coverage = target;
  plan.predicted_coverage = sel.coverage;
  plan.head_always_included = force_head;
  double compute = 0.0;
  double memory_static = 0.0;
  double memory_peak = 0.0;
  for (Index i : sel.layers) {
    const LayerSpec& l = model.layer(i);
    const LayerCost& c = layer_costs[static_cast<std::size_t>(i)];
    compute += scheme_flops(c, scheme);
    if (scheme == Scheme::checksum) {
      memory_static += static_cast<double>(l.in_dim);
      memory_peak = std::max(memory_peak, 2.0 * static_cast<double>(l.tokens));
    } else {
      memory_static += static_cast<double>(l.in_dim * l.out_dim + l.out_dim);
      memory_peak = std::max(memory_peak, static_cast<double>(l.tokens * l.out_dim));
    }
  }
  plan.compute_overhead = compute / flops;
  plan.memory_overhead = (memory_static + memory_peak) / parameter_count(model);
  return plan;
}

CoverageCurve scheme_curve(const ModelGraph& model, std::span<const LayerVulnerability> vulns, Scheme scheme,
                           bool include_head) {
  if (static_cast<Index>(vulns.size()) != model.size()) throw ShapeError("one vulnerability entry per layer required");
  std::vector<Index> ids;
  std::vector<double> values;
  std::vector<double> costs;
  const double flops = model_flops(model);
  for (const auto& l : model.layers) {
    if (!include_head && l.index == model.head_index()) continue;
    ids.push_back(l.index);
    values.push_back(vulns[static_cast<std::size_t>(l.index)].v_layer);
    costs.push_back(scheme_flops(checksum_cost_model(l), scheme) / flops);
  }
  CoverageCurve curve = build_coverage_curve(values, costs);
  for (auto& p : curve.points)
    if (p.layer >= 0) p.layer = ids[static_cast<std::size_t>(p.layer)];
  return curve;
}

nlohmann::json to_json(const ProtectionPlan& plan) {
  return {{"scheme", to_string(plan.scheme)},
          {"layers", plan.layers},
          {"target_coverage", plan.target_coverage},
          {"predicted_coverage", plan.predicted_coverage},
          {"compute_overhead", plan.compute_overhead},
          {"memory_overhead", plan.memory_overhead},
          {"head_always_included", plan.head_always_included}};
}

ProtectionPlan plan_from_json(const nlohmann::json& j) {
  ProtectionPlan p;
  p.scheme = parse_scheme(j.at("scheme").get<std::string>());
  p.layers = j.at("layers").get<std::vector<Index>>();
  std::sort(p.layers.begin(), p.layers.end());
  p.target_coverage = j.at("target_coverage").get<double>();
  p.predicted_coverage = j.at("predicted_coverage").get<double>();
  p.compute_overhead = j.at("compute_overhead").get<double>();
  p.memory_overhead = j.at("memory_overhead").get<double>();
  p.head_always_included = j.at("head_always_included").get<bool>();
  return p;
}

void write_vulnerability_csv(std::ostream& out, std::span<const LayerVulnerability> vulns) {
  out << "layer,v_orig,p_prop,delta_loss,v_layer,injections,mismatches\n";
  for (const auto& v : vulns)
    out << v.layer << ',' << format_double(v.v_orig) << ',' << format_double(v.p_prop) << ','
        << format_double(v.delta_loss) << ',' << format_double(v.v_layer) << ',' << v.injections << ','
        << v.mismatches << '\n';
}

std::vector<LayerVulnerability> read_vulnerability_csv(std::istream& in) {
  std::vector<LayerVulnerability> out;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FormatError("vulnerability CSV: expected 7 fields in '" + line + "'");
    try {
      out.push_back(LayerVulnerability{std::stoll(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]),
                                       std::stod(f[4]), std::stoll(f[5]), std::stoll(f[6])});
    } catch (const std::invalid_argument&) {
      throw FormatError("vulnerability CSV: bad number in '" + line + "'");
    }
  }
  return out;
}

void write_curve_csv(std::ostream& out, const CoverageCurve& curve) {
  out << "overhead,coverage,layer\n";
  for (const auto& p : curve.points)
    out << format_double(p.overhead) << ',' << format_double(p.coverage) << ',' << p.layer << '\n';
}

}  // namespace ftb
