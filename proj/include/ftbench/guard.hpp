#pragma once

#include "ftbench/analysis.hpp"
#include "ftbench/injector.hpp"
#include "ftbench/model.hpp"
#include "ftbench/profiler.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

namespace ftb {

/// Offline column checksum of a layer's transposed weight.
struct WeightChecksum {
  Index layer = 0;
  Eigen::VectorXd w_sum;  // w_sum[k] = sum_o Wt[k, o]
  double bias_sum = 0.0;
  Precision precision = Precision::binary64;
};

/// Per-layer fit of clean checksum discrepancies. Integer layers use exact
/// equality: mu = sigma = 0 and the interval is [0, 0].
struct EpsilonModel {
  Index layer = 0;
  double mu = 0.0;
  double sigma = 0.0;
  double confidence = 0.0;
  double threshold_low = 0.0;
  double threshold_high = 0.0;
  Index n_samples = 0;
  Precision precision = Precision::binary64;

  bool exact() const { return precision == Precision::int64_exact; }
  double width() const { return threshold_high - threshold_low; }
};

struct DetectionOutcome {
  Index layer = 0;
  Eigen::VectorXd d;  // predicted - observed, per GEMM row
  std::vector<Index> flagged;
  double max_discrepancy = 0.0;  // max |d|
  bool triggered = false;
};

/// Throws NumericalError when an integer layer is summed in anything but
/// int64_exact, std::invalid_argument for int64_exact on a float layer.
WeightChecksum offline_checksum(const LayerSpec& layer, Precision precision);

/// Per-row check X[b,:] . w_sum + bias_sum against sum_o Y[b,o], evaluated in
/// the checksum's precision. Float layers need `eps`; integer layers compare
/// exactly and ignore it.
DetectionOutcome verify_layer(const Matrix2D& x, const Matrix2D& y, const WeightChecksum& chk,
                              const EpsilonModel* eps);

/// Whole-batch variant: one discrepancy for the sum over all rows.
double batch_discrepancy(const Matrix2D& x, const Matrix2D& y, const WeightChecksum& chk);

/// mu -+ z sigma with z the two-sided normal quantile of `confidence`.
std::pair<double, double> threshold_from_confidence(double mu, double sigma, double confidence);

enum class CalibrationStatistic : std::uint8_t { per_sample, batch_average };
std::string_view to_string(CalibrationStatistic statistic);
CalibrationStatistic parse_statistic(std::string_view name);

struct CalibrationOptions {
  double confidence = 0.9999;
  /// per_sample fits every GEMM row's discrepancy, the unit the detector
  /// tests at run time; batch_average fits the mean over an inference's rows.
  CalibrationStatistic statistic = CalibrationStatistic::per_sample;
  int workers = 1;
};

/// Fits an EpsilonModel for each of `layers` from clean passes over the
/// golden set. `precisions` holds one entry per model layer; integer layers
/// always use int64_exact.
std::map<Index, EpsilonModel> calibrate_epsilon(const ModelGraph& model, const GoldenSet& golden,
                                                std::span<const Index> layers, std::span<const Precision> precisions,
                                                const CalibrationOptions& options = {});

struct PrecisionChoice {
  Precision precision = Precision::binary64;
  bool saturated = false;  // no precision met both bounds; binary64 returned
};

/// Narrowest floating precision p with n * vmax < 2^-10 * max_finite(p) and
/// n * u(p) * n * vmax < 1e-3 * span, where n = in_dim + out_dim.
PrecisionChoice choose_layer_precision(DType dtype, Index in_dim, Index out_dim, double vmax, double span);

/// Per-layer choice from weights, biases and profiled input/output ranges.
std::vector<PrecisionChoice> choose_checksum_precision(const ModelGraph& model, const RangeProfile& ranges);

enum class CorrectionKind : std::uint8_t { detect_only, replay, skip_same_size, skip_next_block, skip_to_head };
std::string_view to_string(CorrectionKind kind);
CorrectionKind parse_correction(std::string_view name);

struct CorrectionPolicy {
  CorrectionKind kind = CorrectionKind::replay;
  int max_replays = 1;
};

/// Everything a protected inference reads: immutable, shareable across threads.
struct Guard {
  std::set<Index> layers;
  std::map<Index, WeightChecksum> checksums;
  std::map<Index, EpsilonModel> epsilons;

  bool protects(Index layer) const { return layers.contains(layer); }
};

/// Offline checksums for the plan's layers. Throws std::invalid_argument when
/// a float layer lacks an epsilon model.
Guard make_guard(const ModelGraph& model, const ProtectionPlan& plan, std::span<const Precision> precisions,
                 std::map<Index, EpsilonModel> epsilons);

struct GuardEvent {
  enum class Kind : std::uint8_t { triggered, replayed, skipped };
  Kind kind = Kind::triggered;
  Index layer = 0;
  Index target = -1;  // skip destination
  double max_discrepancy = 0.0;
};

/// What the guard saw at the faulted layer on the faulty attempt.
struct FaultProbe {
  Index layer = 0;
  Index row = 0;  // GEMM row with the largest margin of shift over bound
  double original = 0.0;
  double corrupted = 0.0;
  double shift = 0.0;        // exact change of the row's output sum
  double bound = 0.0;        // threshold width + rounding bound of the checksum path
  double discrepancy = 0.0;  // d of that row under the fault
  bool verified = false;     // layer is protected
  bool clean_in_interval = true;
  bool detected = false;
};

struct ProtectedRun {
  Eigen::VectorXd logits;
  Index predicted = -1;
  double loss = 0.0;
  std::vector<GuardEvent> events;
  std::optional<Index> first_trigger;
  Index checks = 0;
  Index triggered_checks = 0;
  Index replays = 0;
  Index extra_macs = 0;
  double checksum_flops = 0.0;
  std::optional<FaultProbe> probe;
};

/// Layer-by-layer forward that verifies every guarded layer's raw GEMM output.
/// Only the activation entering the current layer is kept. On a trigger:
///   replay recomputes the layer from it (at most max_replays times);
///   skip policies feed it to a later layer of matching width;
///   detect_only records the event and continues.
/// `fault`, when given, is applied on the first execution of its layer only.
/// Throws CorrectionError on an exhausted replay budget or a missing skip target.
ProtectedRun protected_forward(const ModelGraph& model, const Matrix2D& input, Index label, const Guard& guard,
                               const CorrectionPolicy& policy, const InjectionSpec* fault = nullptr);

struct DetectionPoint {
  Index layer = 0;
  Index sample = 0;
  double discrepancy = 0.0;
  double shift = 0.0;
  double bound = 0.0;
  bool clean_in_interval = true;
  bool mismatch = false;
  bool detected = false;
};

struct DetectionReport {
  std::vector<InjectionRecord> records;
  std::vector<DetectionPoint> points;  // injections into guarded layers
  std::vector<EpsilonModel> thresholds;
  std::vector<LayerTally> skipped;

  Index detected_mismatch = 0;
  Index missed_mismatch = 0;
  Index detected_benign = 0;
  Index undetected_benign = 0;

  Index clean_inferences = 0;
  Index clean_false_positives = 0;  // clean inferences with any trigger
  Index clean_checks = 0;
  Index clean_check_false_positives = 0;

  Index corrected = 0;          // detected injections whose corrected class equals golden
  Index correction_failures = 0;
  Index correction_extra_macs = 0;
  Index correction_base_macs = 0;

  double coverage() const;
  double false_positive_rate() const;        // per verification check
  double inference_false_positive_rate() const;
  double correction_overhead() const;
};

struct EvaluationOptions {
  CampaignOptions campaign;
  CorrectionPolicy correction{CorrectionKind::replay, 1};
};

/// Detect-only injection campaign through protected_forward, a clean pass over
/// `clean` for false positives, and a correction pass over detected injections.
DetectionReport evaluate_detection(const ModelGraph& model, const GoldenSet& golden, const RangeProfile& ranges,
                                   const Guard& guard, const GoldenSet& clean, const EvaluationOptions& options);

nlohmann::json to_json(const std::map<Index, EpsilonModel>& models);
std::map<Index, EpsilonModel> epsilons_from_json(const nlohmann::json& j);
nlohmann::json detection_summary(const DetectionReport& report);
void write_detection_csv(std::ostream& out, const DetectionReport& report);
void write_thresholds_csv(std::ostream& out, const DetectionReport& report);

}  // namespace ftb
