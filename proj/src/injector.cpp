#include "ftbench/injector.hpp"

#include "ftbench/errors.hpp"
#include "ftbench/parallel.hpp"
#include "ftbench/stats.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace ftb {

namespace {

constexpr std::uint32_t kCampaignSalt = 0xCA3Fu;

struct Bounds {
  double lo = 0.0;
  double hi = 0.0;
};

Bounds target_bounds(const LayerSpec& layer, const RangeProfile& ranges, Location location) {
  if (location == Location::weight) {
    const auto& w = layer.weight.values();
    return {w.minCoeff(), w.maxCoeff()};
  }
  if (layer.index >= static_cast<Index>(ranges.layers.size()))
    throw std::invalid_argument("range profile does not cover layer " + std::to_string(layer.index));
  const auto& r = ranges.at(layer.index);
  return location == Location::output ? Bounds{r.min, r.max} : Bounds{r.input_min, r.input_max};
}

bool is_bit_mode(InjectionMode mode) { return mode != InjectionMode::random_value && mode != InjectionMode::fixed_value; }

bool mode_applies(InjectionMode mode, DType dtype) {
  if (!is_bit_mode(mode)) return true;
  return (mode == InjectionMode::int_bit) == is_integer(dtype);
}

DType target_dtype(const ModelGraph& model, const LayerSpec& layer, Location location) {
  if (location == Location::output && is_integer(model.dtype)) return DType::int32;
  return layer.dtype();
}

void check_layer(const ModelGraph& model, Index layer) {
  if (layer < 0 || layer >= model.size()) throw ShapeError("layer index " + std::to_string(layer) + " out of range");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

InjectionRecord execute(const ModelGraph& model, const Matrix2D& input, Index label, const InjectionSpec& spec,
                        double golden_loss, Index golden_class) {
  check_layer(model, spec.layer);
  const LayerSpec& layer = model.layer(spec.layer);
  const Matrix2D x = gemm_operand(layer, run_prefix(model, input, spec.layer));
  FaultedGemm f = faulted_gemm(layer, x, spec);

  InjectionRecord rec;
  rec.spec = spec;
  rec.original_value = f.original;
  rec.corrupted_value = f.corrupted;
  rec.golden_loss = golden_loss;
  rec.golden_class = golden_class;
  if (spec.layer == model.head_index()) {
    const Prediction p = classify(model, f.y, label);
    rec.corrupted_loss = p.loss;
    rec.corrupted_class = p.predicted;
  } else {
    const auto trace = forward_from(model, spec.layer + 1, epilogue(model, layer, f.y), label);
    rec.corrupted_loss = trace.loss;
    rec.corrupted_class = trace.predicted;
  }
  rec.mismatch = rec.corrupted_class != rec.golden_class;
  return rec;
}

std::vector<InjectionMode> campaign_modes(const ModelGraph& model, const CampaignOptions& options) {
  return options.modes.empty() ? default_modes(model.dtype) : options.modes;
}

}  // namespace

std::string_view to_string(Location location) {
  switch (location) {
    case Location::input: return "input";
    case Location::output: return "output";
    case Location::weight: return "weight";
  }
  return "unknown";
}

std::string_view to_string(InjectionMode mode) {
  switch (mode) {
    case InjectionMode::int_bit: return "int_bit";
    case InjectionMode::fp_exponent_bit: return "fp_exponent_bit";
    case InjectionMode::fp_mantissa_bit: return "fp_mantissa_bit";
    case InjectionMode::fp_sign_bit: return "fp_sign_bit";
    case InjectionMode::random_value: return "random_value";
    case InjectionMode::fixed_value: return "fixed_value";
  }
  return "unknown";
}

Location parse_location(std::string_view name) {
  for (Location l : {Location::input, Location::output, Location::weight})
    if (to_string(l) == name) return l;
  throw std::invalid_argument("unknown injection location '" + std::string(name) + "'");
}

InjectionMode parse_mode(std::string_view name) {
  for (InjectionMode m : {InjectionMode::int_bit, InjectionMode::fp_exponent_bit, InjectionMode::fp_mantissa_bit,
                          InjectionMode::fp_sign_bit, InjectionMode::random_value, InjectionMode::fixed_value})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown injection mode '" + std::string(name) + "'");
}

std::vector<InjectionMode> default_modes(DType dtype) {
  if (is_integer(dtype)) return {InjectionMode::int_bit};
  return {InjectionMode::fp_exponent_bit, InjectionMode::fp_mantissa_bit};
}

BitRange mode_bits(InjectionMode mode, DType dtype) {
  if (!is_bit_mode(mode) || !mode_applies(mode, dtype))
    throw std::invalid_argument("mode " + std::string(to_string(mode)) + " does not flip bits of " +
                                std::string(to_string(dtype)));
  switch (mode) {
    case InjectionMode::int_bit: return {0, storage_bits(dtype) - 1};
    case InjectionMode::fp_exponent_bit: return exponent_bits(dtype);
    case InjectionMode::fp_mantissa_bit: return mantissa_bits(dtype);
    case InjectionMode::fp_sign_bit: return {sign_bit(dtype), sign_bit(dtype)};
    default: break;
  }
  return {};
}

const LayerTally* CampaignResult::tally(Index layer) const {
  for (const auto& t : tallies)
    if (t.layer == layer) return &t;
  return nullptr;
}

double corrupt_value(double original, const InjectionSpec& spec, DType dtype) {
  if (is_bit_mode(spec.mode)) {
    const BitRange bits = mode_bits(spec.mode, dtype);
    if (spec.bit < bits.first || spec.bit > bits.last)
      throw std::out_of_range("bit " + std::to_string(spec.bit) + " is outside the " +
                              std::string(to_string(spec.mode)) + " range of " + std::string(to_string(dtype)));
    return flip_bit(original, spec.bit, dtype);
  }
  return spec.value;
}

FaultedGemm faulted_gemm(const LayerSpec& layer, const Matrix2D& x, const InjectionSpec& spec) {
  FaultedGemm f;
  auto check_element = [&](const Matrix2D& m) {
    if (spec.element < 0 || spec.element >= m.size())
      throw ShapeError("element " + std::to_string(spec.element) + " out of range for " +
                       std::string(to_string(spec.location)) + " of layer " + layer.name);
  };
  switch (spec.location) {
    case Location::output: {
      f.y = layer_gemm(layer, x);
      check_element(f.y);
      f.original = f.y.at(spec.element);
      f.corrupted = corrupt_value(f.original, spec, f.y.dtype());
      f.y.set(spec.element, f.corrupted);
      break;
    }
    case Location::input: {
      check_element(x);
      Matrix2D xf = x;
      f.original = xf.at(spec.element);
      f.corrupted = corrupt_value(f.original, spec, xf.dtype());
      xf.set(spec.element, f.corrupted);
      f.y = layer_gemm(layer, xf);
      break;
    }
    case Location::weight: {
      check_element(layer.weight);
      Matrix2D w = layer.weight;  // transient: scratch copy only
      f.original = w.at(spec.element);
      f.corrupted = corrupt_value(f.original, spec, w.dtype());
      w.set(spec.element, f.corrupted);
      f.y = layer_gemm(layer, x, w);
      break;
    }
  }
  return f;
}

Index golden_position(const GoldenSet& golden, Index sample_id) {
  const auto it = std::lower_bound(golden.sample_ids.begin(), golden.sample_ids.end(), sample_id);
  if (it == golden.sample_ids.end() || *it != sample_id)
    throw std::invalid_argument("sample " + std::to_string(sample_id) + " is not in the golden set");
  return static_cast<Index>(it - golden.sample_ids.begin());
}

InjectionSpec sample_injection(const ModelGraph& model, const RangeProfile& ranges, const GoldenSet& golden,
                               Index layer_index, const CampaignOptions& options, std::mt19937_64& rng) {
  if (golden.empty()) throw std::invalid_argument("sample_injection: empty golden set");
  if (options.locations.empty()) throw std::invalid_argument("sample_injection: no injection locations");
  check_layer(model, layer_index);
  const LayerSpec& layer = model.layer(layer_index);

  std::uniform_int_distribution<Index> pick_sample(0, golden.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_location(0, options.locations.size() - 1);
  const Index pos = pick_sample(rng);
  const Location location = options.locations[pick_location(rng)];
  const DType dtype = target_dtype(model, layer, location);

  std::vector<InjectionMode> modes;
  for (InjectionMode m : campaign_modes(model, options))
    if (mode_applies(m, dtype)) modes.push_back(m);
  if (modes.empty())
    throw std::invalid_argument("no configured injection mode applies to " + std::string(to_string(dtype)));

  Matrix2D target;
  switch (location) {
    case Location::weight: target = layer.weight; break;
    case Location::input:
      target = gemm_operand(layer, run_prefix(model, golden.inputs[static_cast<std::size_t>(pos)], layer_index));
      break;
    case Location::output:
      target = layer_gemm(layer, gemm_operand(layer, run_prefix(model, golden.inputs[static_cast<std::size_t>(pos)],
                                                                 layer_index)));
      break;
  }
  const Bounds bounds = target_bounds(layer, ranges, location);

  InjectionSpec spec;
  spec.layer = layer_index;
  spec.location = location;
  spec.sample = golden.sample_ids[static_cast<std::size_t>(pos)];
  std::uniform_int_distribution<std::size_t> pick_mode(0, modes.size() - 1);
  std::uniform_int_distribution<Index> pick_element(0, target.size() - 1);
  for (int attempt = 0; attempt < options.max_retries; ++attempt) {
    spec.mode = modes[pick_mode(rng)];
    spec.element = pick_element(rng);
    spec.bit = -1;
    if (is_bit_mode(spec.mode)) {
      const BitRange bits = mode_bits(spec.mode, dtype);
      spec.bit = std::uniform_int_distribution<int>(bits.first, bits.last)(rng);
    } else if (spec.mode == InjectionMode::random_value) {
      spec.value = conform(std::uniform_real_distribution<double>(bounds.lo, bounds.hi)(rng), dtype);
    } else {
      spec.value = options.fixed_value;
    }
    const double original = target.at(spec.element);
    const double corrupted = corrupt_value(original, spec, dtype);
    if (!(corrupted >= bounds.lo && corrupted <= bounds.hi)) continue;
    if (!options.count_noop && corrupted == original) continue;  // also rejects -0.0 vs 0.0
    return spec;
  }
  throw NumericalError("layer " + std::to_string(layer_index) + ": no in-range corruption found after " +
                       std::to_string(options.max_retries) + " attempts");
}

InjectionRecord inject_forward(const ModelGraph& model, const Matrix2D& input, Index label,
                               const InjectionSpec& spec) {
  const auto clean = forward(model, input, label);
  return execute(model, input, label, spec, clean.loss, clean.predicted);
}

std::vector<InjectionSpec> plan_injections(const ModelGraph& model, const GoldenSet& golden,
                                           const RangeProfile& ranges, const CampaignOptions& options,
                                           std::vector<LayerTally>& tallies) {
  if (options.n_per_layer < 0) throw std::invalid_argument("n_per_layer must be >= 0");
  std::vector<Index> layers = options.layers;
  if (layers.empty())
    for (Index i = 0; i < model.size(); ++i) layers.push_back(i);
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  for (Index l : layers) check_layer(model, l);

  tallies.clear();
  if (options.n_per_layer == 0) return {};
  const auto per_layer = static_cast<std::size_t>(options.n_per_layer);
  const std::size_t total = layers.size() * per_layer;
  std::vector<std::optional<InjectionSpec>> specs(total);
  std::vector<std::string> errors(total);
  parallel_for(total, options.workers, [&](std::size_t t) {
    const Index layer = layers[t / per_layer];
    const auto k = static_cast<std::uint64_t>(t % per_layer);
    auto rng = stream_engine(options.seed, static_cast<std::uint64_t>(layer), k, kCampaignSalt);
    try {
      InjectionSpec s = sample_injection(model, ranges, golden, layer, options, rng);
      s.seed = options.seed;
      specs[t] = s;
    } catch (const NumericalError& e) {
      errors[t] = e.what();
    }
  });

  std::vector<InjectionSpec> out;
  out.reserve(total);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    LayerTally tally;
    tally.layer = layers[li];
    for (std::size_t k = 0; k < per_layer; ++k) {
      const std::size_t t = li * per_layer + k;
      if (specs[t]) {
        out.push_back(*specs[t]);
      } else {
        ++tally.skipped;
        if (tally.skip_reason.empty()) tally.skip_reason = errors[t];
      }
    }
    tallies.push_back(std::move(tally));
  }
  return out;
}

CampaignResult run_campaign(const ModelGraph& model, const GoldenSet& golden, const RangeProfile& ranges,
                            const CampaignOptions& options) {
  CampaignResult result;
  result.seed = options.seed;
  result.injections_per_layer = options.n_per_layer;
  const auto specs = plan_injections(model, golden, ranges, options, result.tallies);
  result.records.resize(specs.size());
  parallel_for(specs.size(), options.workers, [&](std::size_t i) {
    const auto pos = static_cast<std::size_t>(golden_position(golden, specs[i].sample));
    result.records[i] = execute(model, golden.inputs[pos], golden.labels[pos], specs[i], golden.losses[pos],
                                golden.labels[pos]);
  });
  for (const auto& rec : result.records) {
    for (auto& t : result.tallies) {
      if (t.layer != rec.spec.layer) continue;
      ++t.injections;
      if (rec.mismatch) ++t.mismatches;
    }
  }
  return result;
}

std::vector<LayerTally> tally_records(const std::vector<InjectionRecord>& records) {
  std::vector<LayerTally> tallies;
  for (const auto& rec : records) {
    auto it = std::find_if(tallies.begin(), tallies.end(), [&](const LayerTally& t) { return t.layer == rec.spec.layer; });
    if (it == tallies.end()) {
      tallies.push_back(LayerTally{rec.spec.layer, 0, 0, 0, {}});
      it = tallies.end() - 1;
    }
    ++it->injections;
    if (rec.mismatch) ++it->mismatches;
  }
  std::sort(tallies.begin(), tallies.end(), [](const LayerTally& a, const LayerTally& b) { return a.layer < b.layer; });
  return tallies;
}

double margin_of_error(Index n, double p, double confidence) {
  if (n < 1) throw std::domain_error("margin_of_error: n must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("margin_of_error: p must lie in (0, 1)");
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::domain_error("margin_of_error: confidence must lie in (0, 1)");
  return two_sided_z(confidence) * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

void write_campaign_csv(std::ostream& out, const CampaignResult& result) {
  out << "layer,location,element,bit,mode,sample,orig,corrupt,golden_loss,corrupt_loss,mismatch,detected,"
         "detection_layer\n";
  for (const auto& r : result.records) {
    out << r.spec.layer << ',' << to_string(r.spec.location) << ',' << r.spec.element << ',' << r.spec.bit << ','
        << to_string(r.spec.mode) << ',' << r.spec.sample << ',' << format_double(r.original_value) << ','
        << format_double(r.corrupted_value) << ',' << format_double(r.golden_loss) << ','
        << format_double(r.corrupted_loss) << ',' << (r.mismatch ? 1 : 0) << ',';
    if (r.detected) out << (*r.detected ? 1 : 0);
    out << ',';
    if (r.detection_layer) out << *r.detection_layer;
    out << '\n';
  }
}

std::vector<InjectionRecord> read_campaign_csv(std::istream& in) {
  std::vector<InjectionRecord> records;
  std::string line;
  bool header = false;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 13) throw FormatError("campaign CSV line " + std::to_string(line_no) + ": expected 13 fields");
    try {
      InjectionRecord r;
      r.spec.layer = std::stoll(f[0]);
      r.spec.location = parse_location(f[1]);
      r.spec.element = std::stoll(f[2]);
      r.spec.bit = std::stoi(f[3]);
      r.spec.mode = parse_mode(f[4]);
      r.spec.sample = std::stoll(f[5]);
      r.original_value = std::stod(f[6]);
      r.corrupted_value = std::stod(f[7]);
      r.golden_loss = std::stod(f[8]);
      r.corrupted_loss = std::stod(f[9]);
      r.mismatch = f[10] == "1";
      if (!f[11].empty()) r.detected = f[11] == "1";
      if (!f[12].empty()) r.detection_layer = std::stoll(f[12]);
      records.push_back(r);
    } catch (const std::invalid_argument& e) {
      throw FormatError("campaign CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

nlohmann::json campaign_summary(const CampaignResult& result) {
  nlohmann::json layers = nlohmann::json::array();
  Index injections = 0;
  Index mismatches = 0;
  for (const auto& t : result.tallies) {
    layers.push_back({{"layer", t.layer},
                      {"injections", t.injections},
                      {"mismatches", t.mismatches},
                      {"skipped", t.skipped},
                      {"skip_reason", t.skip_reason}});
    injections += t.injections;
    mismatches += t.mismatches;
  }
  nlohmann::json j = {{"seed", result.seed},
                      {"injections_per_layer", result.injections_per_layer},
                      {"injections", injections},
                      {"mismatches", mismatches},
                      {"layers", layers}};
  if (injections > 0) {
    const double p = static_cast<double>(mismatches) / static_cast<double>(injections);
    j["mismatch_rate"] = p;
    if (p > 0.0 && p < 1.0) j["margin_of_error_99"] = margin_of_error(injections, p, 0.99);
  }
  return j;
}

}  // namespace ftb
