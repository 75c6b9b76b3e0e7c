#pragma once

#include "ftbench/model.hpp"
#include "ftbench/profiler.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ftb {

enum class Location : std::uint8_t { input, output, weight };

enum class InjectionMode : std::uint8_t {
  int_bit,
  fp_exponent_bit,
  fp_mantissa_bit,
  fp_sign_bit,
  random_value,
  fixed_value,
};

std::string_view to_string(Location location);
std::string_view to_string(InjectionMode mode);
Location parse_location(std::string_view name);
InjectionMode parse_mode(std::string_view name);

/// Single-bit flips valid for `dtype`: int_bit for integers, exponent and
/// mantissa flips for floats.
std::vector<InjectionMode> default_modes(DType dtype);

/// Bits a mode may flip in `dtype`; throws std::invalid_argument when the mode
/// does not apply to the dtype or flips no bit.
BitRange mode_bits(InjectionMode mode, DType dtype);

struct InjectionSpec {
  Index layer = 0;
  Location location = Location::output;
  Index element = 0;  // flat row-major index into the target tensor
  int bit = -1;       // -1 for value modes
  InjectionMode mode = InjectionMode::fp_exponent_bit;
  double value = 0.0;  // replacement for random_value and fixed_value
  Index sample = 0;    // dataset sample id
  std::uint64_t seed = 0;
};

struct InjectionRecord {
  InjectionSpec spec;
  double original_value = 0.0;
  double corrupted_value = 0.0;
  double golden_loss = 0.0;
  double corrupted_loss = 0.0;
  Index golden_class = -1;
  Index corrupted_class = -1;
  bool mismatch = false;
  std::optional<bool> detected;
  std::optional<Index> detection_layer;
};

struct LayerTally {
  Index layer = 0;
  Index injections = 0;
  Index mismatches = 0;
  Index skipped = 0;
  std::string skip_reason;
};

struct CampaignResult {
  std::vector<InjectionRecord> records;  // ordered by (layer, k)
  std::vector<LayerTally> tallies;       // one per targeted layer, ascending
  std::uint64_t seed = 0;
  Index injections_per_layer = 0;

  const LayerTally* tally(Index layer) const;
};

struct CampaignOptions {
  Index n_per_layer = 0;
  std::vector<InjectionMode> modes;  // empty: default_modes(model dtype)
  std::vector<Location> locations{Location::output};
  std::vector<Index> layers;  // empty: every layer
  std::uint64_t seed = 0;
  bool count_noop = false;
  int max_retries = 64;
  double fixed_value = 0.0;
  int workers = 1;
};

/// Value that `spec` writes over `original`.
double corrupt_value(double original, const InjectionSpec& spec, DType dtype);

/// Raw GEMM output of `layer` with `spec` applied to its operand, output or a
/// scratch copy of its weight. `x` is the clean operand.
struct FaultedGemm {
  Matrix2D y;
  double original = 0.0;
  double corrupted = 0.0;
};
FaultedGemm faulted_gemm(const LayerSpec& layer, const Matrix2D& x, const InjectionSpec& spec);

/// Draws one range-constrained injection for `layer` from `rng`: a golden
/// sample, a location, then up to `options.max_retries` (element, mode, bit)
/// picks until the corrupted value lies inside the layer's profiled bounds
/// and differs from the original. Throws NumericalError when the budget runs out.
InjectionSpec sample_injection(const ModelGraph& model, const RangeProfile& ranges, const GoldenSet& golden,
                               Index layer, const CampaignOptions& options, std::mt19937_64& rng);

/// Forward pass of `input` with the single fault described by `spec`.
InjectionRecord inject_forward(const ModelGraph& model, const Matrix2D& input, Index label,
                               const InjectionSpec& spec);

/// n_per_layer injections into every selected layer. Injection k of layer l
/// draws from its own stream (seed, l, k), so the records do not depend on
/// the worker count. Layers whose sampling fails are tallied as skipped.
CampaignResult run_campaign(const ModelGraph& model, const GoldenSet& golden, const RangeProfile& ranges,
                            const CampaignOptions& options);

/// Sampled specs of a campaign without executing them, ordered by (layer, k).
/// Skipped layers are reported through `tallies`.
std::vector<InjectionSpec> plan_injections(const ModelGraph& model, const GoldenSet& golden,
                                           const RangeProfile& ranges, const CampaignOptions& options,
                                           std::vector<LayerTally>& tallies);

/// Position of dataset sample `sample_id` inside `golden`.
Index golden_position(const GoldenSet& golden, Index sample_id);

/// Per-layer tallies recomputed from records.
std::vector<LayerTally> tally_records(const std::vector<InjectionRecord>& records);

/// Two-sided margin of error z * sqrt(p (1 - p) / n) of a proportion.
double margin_of_error(Index n, double p, double confidence);

void write_campaign_csv(std::ostream& out, const CampaignResult& result);
std::vector<InjectionRecord> read_campaign_csv(std::istream& in);
nlohmann::json campaign_summary(const CampaignResult& result);

}  // namespace ftb
