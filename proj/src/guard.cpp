#include "ftbench/guard.hpp"

#include "ftbench/errors.hpp"
#include "ftbench/parallel.hpp"
#include "ftbench/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace ftb {

namespace {

constexpr Index kMinCalibrationSamples = 30;

struct RowCheck {
  double predicted = 0.0;
  double observed = 0.0;
  double d = 0.0;
};

RowCheck check_row(const Matrix2D& x, const Matrix2D& y, Index b, const WeightChecksum& chk) {
  RowCheck r;
  if (chk.precision == Precision::int64_exact) {
    std::int64_t predicted = static_cast<std::int64_t>(chk.bias_sum);
    for (Index k = 0; k < x.cols(); ++k)
      predicted += static_cast<std::int64_t>(x(b, k)) * static_cast<std::int64_t>(chk.w_sum[k]);
    std::int64_t observed = 0;
    for (Index o = 0; o < y.cols(); ++o) observed += static_cast<std::int64_t>(y(b, o));
    r.predicted = static_cast<double>(predicted);
    r.observed = static_cast<double>(observed);
    r.d = static_cast<double>(predicted - observed);
    return r;
  }
  const std::span<const double> w{chk.w_sum.data(), static_cast<std::size_t>(chk.w_sum.size())};
  r.predicted = add_in(dot_in(x.row_span(b), w, chk.precision), chk.bias_sum, chk.precision);
  r.observed = sum_in(y.row_span(b), chk.precision);
  r.d = add_in(r.predicted, -r.observed, chk.precision);
  return r;
}

bool outside(double d, const EpsilonModel& eps) {
  if (eps.exact()) return d != 0.0;
  return !(d >= eps.threshold_low && d <= eps.threshold_high);  // NaN triggers
}

void check_dims(const Matrix2D& x, const Matrix2D& y, const WeightChecksum& chk) {
  if (x.cols() != chk.w_sum.size())
    throw ShapeError("verify_layer: X has " + std::to_string(x.cols()) + " columns, checksum covers " +
                     std::to_string(chk.w_sum.size()));
  if (x.rows() != y.rows()) throw ShapeError("verify_layer: X and Y row counts differ");
}

// Rounding bound of the checksum path for one row: error of both observed
// sums plus the two final subtractions, doubled for slack.
double rounding_bound(const Matrix2D& y_clean, const Matrix2D& y_fault, Index b, const RowCheck& clean,
                      const RowCheck& fault, Precision p) {
  if (p == Precision::int64_exact) return 0.0;
  const double u = unit_roundoff(p);
  const double n = static_cast<double>(y_clean.cols());
  const double gamma = n * u / (1.0 - n * u);
  double abs_sum = 0.0;
  for (Index o = 0; o < y_clean.cols(); ++o) abs_sum += std::fabs(y_clean(b, o)) + std::fabs(y_fault(b, o));
  return 2.0 * (gamma * abs_sum +
                u * (std::fabs(clean.predicted) + std::fabs(clean.observed) + std::fabs(fault.observed)));
}

Index skip_target(const ModelGraph& model, Index from, Index width, CorrectionKind kind) {
  const LayerSpec& layer = model.layer(from);
  Index target = -1;
  switch (kind) {
    case CorrectionKind::skip_same_size:
      for (Index j = from + 1; j < model.size(); ++j)
        if (model.layer(j).in_dim == width) {
          target = j;
          break;
        }
      break;
    case CorrectionKind::skip_next_block:
      if (from != model.head_index()) {
        target = model.head_index();
        for (Index j = from + 1; j < model.size(); ++j)
          if (model.layer(j).block == layer.block + 1) {
            target = j;
            break;
          }
      }
      break;
    case CorrectionKind::skip_to_head:
      if (from != model.head_index()) target = model.head_index();
      break;
    default: break;
  }
  if (target < 0 || model.layer(target).in_dim != width)
    throw CorrectionError("skip target nonexistent: no layer after " + layer.name + " accepts width " +
                          std::to_string(width) + " under " + std::string(to_string(kind)));
  return target;
}

}  // namespace

WeightChecksum offline_checksum(const LayerSpec& layer, Precision precision) {
  const bool integer = is_integer(layer.dtype());
  if (integer && precision != Precision::int64_exact)
    throw NumericalError("layer " + layer.name + ": integer checksums overflow unless accumulated in int64_exact");
  if (!integer && precision == Precision::int64_exact)
    throw std::invalid_argument("layer " + layer.name + ": int64_exact applies to integer layers only");
  WeightChecksum c;
  c.layer = layer.index;
  c.precision = precision;
  c.w_sum.resize(layer.in_dim);
  if (integer) {
    const VectorXi64 s = reduce_rows_exact(layer.weight);
    for (Index k = 0; k < layer.in_dim; ++k) c.w_sum[k] = static_cast<double>(s[k]);
    std::int64_t b = 0;
    for (Index o = 0; o < layer.bias.size(); ++o) b += static_cast<std::int64_t>(layer.bias[o]);
    c.bias_sum = static_cast<double>(b);
    return c;
  }
  for (Index k = 0; k < layer.in_dim; ++k) c.w_sum[k] = sum_in(layer.weight.row_span(k), precision);
  c.bias_sum = sum_in(layer.bias_span(), precision);
  return c;
}

DetectionOutcome verify_layer(const Matrix2D& x, const Matrix2D& y, const WeightChecksum& chk,
                              const EpsilonModel* eps) {
  check_dims(x, y, chk);
  const bool exact = chk.precision == Precision::int64_exact;
  if (!exact && eps == nullptr) throw std::invalid_argument("verify_layer: floating layer needs an epsilon model");
  EpsilonModel exact_model;
  exact_model.layer = chk.layer;
  exact_model.precision = Precision::int64_exact;
  const EpsilonModel& model = exact ? exact_model : *eps;

  DetectionOutcome out;
  out.layer = chk.layer;
  out.d.resize(x.rows());
  for (Index b = 0; b < x.rows(); ++b) {
    const double d = check_row(x, y, b, chk).d;
    out.d[b] = d;
    out.max_discrepancy = std::max(out.max_discrepancy, std::fabs(d));
    if (outside(d, model)) out.flagged.push_back(b);
  }
  out.triggered = !out.flagged.empty();
  return out;
}

double batch_discrepancy(const Matrix2D& x, const Matrix2D& y, const WeightChecksum& chk) {
  check_dims(x, y, chk);
  if (chk.precision == Precision::int64_exact) {
    double d = 0.0;
    for (Index b = 0; b < x.rows(); ++b) d += check_row(x, y, b, chk).d;
    return d;
  }
  // Column-summed X against w_sum, rows of bias, against the total of Y.
  Eigen::VectorXd xs(x.cols());
  for (Index k = 0; k < x.cols(); ++k) {
    double s = 0.0;
    for (Index b = 0; b < x.rows(); ++b) s = add_in(s, x(b, k), chk.precision);
    xs[k] = s;
  }
  const std::span<const double> xspan{xs.data(), static_cast<std::size_t>(xs.size())};
  const std::span<const double> w{chk.w_sum.data(), static_cast<std::size_t>(chk.w_sum.size())};
  const double predicted =
      add_in(dot_in(xspan, w, chk.precision), mul_in(chk.bias_sum, static_cast<double>(x.rows()), chk.precision),
             chk.precision);
  return add_in(predicted, -sum_in(y.data(), chk.precision), chk.precision);
}

std::pair<double, double> threshold_from_confidence(double mu, double sigma, double confidence) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::domain_error("sigma must be finite and >= 0");
  if (!std::isfinite(mu)) throw std::domain_error("mu must be finite");
  if (!(confidence > 0.5 && confidence < 1.0)) throw std::domain_error("confidence must lie in (0.5, 1)");
  const double half = two_sided_z(confidence) * sigma;
  return {mu - half, mu + half};
}

std::string_view to_string(CalibrationStatistic statistic) {
  return statistic == CalibrationStatistic::per_sample ? "per_sample" : "batch_average";
}

CalibrationStatistic parse_statistic(std::string_view name) {
  if (name == "per_sample") return CalibrationStatistic::per_sample;
  if (name == "batch_average") return CalibrationStatistic::batch_average;
  throw std::invalid_argument("unknown calibration statistic '" + std::string(name) + "'");
}

std::map<Index, EpsilonModel> calibrate_epsilon(const ModelGraph& model, const GoldenSet& golden,
                                                std::span<const Index> layers, std::span<const Precision> precisions,
                                                const CalibrationOptions& options) {
  if (golden.empty()) throw std::invalid_argument("calibrate_epsilon: empty golden set");
  if (static_cast<Index>(precisions.size()) != model.size())
    throw ShapeError("calibrate_epsilon: one precision per model layer required");
  TapSet taps;
  std::map<Index, WeightChecksum> checksums;
  for (Index l : layers) {
    if (l < 0 || l >= model.size()) throw ShapeError("calibrate_epsilon: layer " + std::to_string(l) + " out of range");
    const LayerSpec& layer = model.layer(l);
    const Precision p = is_integer(layer.dtype()) ? Precision::int64_exact : precisions[static_cast<std::size_t>(l)];
    checksums.emplace(l, offline_checksum(layer, p));
    taps.insert(l);
  }

  // samples[i][layer] -> discrepancies of golden member i
  std::vector<std::map<Index, std::vector<double>>> samples(static_cast<std::size_t>(golden.size()));
  parallel_for(samples.size(), options.workers, [&](std::size_t i) {
    const auto trace = forward(model, golden.inputs[i], golden.labels[i], taps);
    for (const auto& [l, chk] : checksums) {
      const Matrix2D& x = trace.inputs.at(l);
      const Matrix2D& y = trace.outputs.at(l);
      auto& out = samples[i][l];
      if (options.statistic == CalibrationStatistic::per_sample) {
        for (Index b = 0; b < x.rows(); ++b) out.push_back(check_row(x, y, b, chk).d);
      } else {
        double s = 0.0;
        for (Index b = 0; b < x.rows(); ++b) s += check_row(x, y, b, chk).d;
        out.push_back(s / static_cast<double>(x.rows()));
      }
    }
  });

  std::map<Index, EpsilonModel> result;
  for (const auto& [l, chk] : checksums) {
    std::vector<double> d;
    for (const auto& s : samples) d.insert(d.end(), s.at(l).begin(), s.at(l).end());
    const auto n = static_cast<Index>(d.size());
    if (n < kMinCalibrationSamples)
      throw std::invalid_argument("calibrate_epsilon: layer " + std::to_string(l) + " has " + std::to_string(n) +
                                  " samples, at least 30 required");
    EpsilonModel m;
    m.layer = l;
    m.confidence = options.confidence;
    m.n_samples = n;
    m.precision = chk.precision;
    const bool any_nonzero = std::any_of(d.begin(), d.end(), [](double v) { return v != 0.0; });
    if (chk.precision == Precision::int64_exact) {
      if (any_nonzero)
        throw NumericalError("layer " + std::to_string(l) + ": clean integer checksum mismatch (accumulator wrap)");
      result.emplace(l, m);
      continue;
    }
    const SampleMoments mom = sample_moments(d);
    if (!std::isfinite(mom.mean) || !std::isfinite(mom.stddev))
      throw NumericalError("layer " + std::to_string(l) + ": non-finite checksum discrepancy");
    if (mom.stddev == 0.0 && any_nonzero)
      throw NumericalError("layer " + std::to_string(l) + ": constant nonzero discrepancy (precision saturation)");
    m.mu = mom.mean;
    m.sigma = mom.stddev;
    std::tie(m.threshold_low, m.threshold_high) = threshold_from_confidence(m.mu, m.sigma, options.confidence);
    result.emplace(l, m);
  }
  return result;
}

PrecisionChoice choose_layer_precision(DType dtype, Index in_dim, Index out_dim, double vmax, double span) {
  if (is_integer(dtype)) return {Precision::int64_exact, false};
  const double n = static_cast<double>(in_dim + out_dim);
  const double magnitude = n * vmax;
  for (Precision p : {Precision::binary16, Precision::binary32, Precision::binary64}) {
    const bool fits = magnitude < std::ldexp(max_finite(p), -10);
    const bool accurate = n * unit_roundoff(p) * magnitude < 1e-3 * span;
    if (fits && accurate) return {p, false};
  }
  return {Precision::binary64, true};
}

std::vector<PrecisionChoice> choose_checksum_precision(const ModelGraph& model, const RangeProfile& ranges) {
  if (static_cast<Index>(ranges.layers.size()) != model.size())
    throw std::invalid_argument("choose_checksum_precision: range profile does not cover the model");
  std::vector<PrecisionChoice> out;
  for (const auto& l : model.layers) {
    const LayerRange& r = ranges.at(l.index);
    double vmax = l.weight.values().cwiseAbs().maxCoeff();
    if (l.bias.size() > 0) vmax = std::max(vmax, l.bias.cwiseAbs().maxCoeff());
    for (double v : {r.min, r.max, r.input_min, r.input_max}) vmax = std::max(vmax, std::fabs(v));
    out.push_back(choose_layer_precision(l.dtype(), l.in_dim, l.out_dim, vmax, r.max - r.min));
  }
  return out;
}

std::string_view to_string(CorrectionKind kind) {
  switch (kind) {
    case CorrectionKind::detect_only: return "detect_only";
    case CorrectionKind::replay: return "replay";
    case CorrectionKind::skip_same_size: return "skip_same_size";
    case CorrectionKind::skip_next_block: return "skip_next_block";
    case CorrectionKind::skip_to_head: return "skip_to_head";
  }
  return "unknown";
}

CorrectionKind parse_correction(std::string_view name) {
  for (CorrectionKind k : {CorrectionKind::detect_only, CorrectionKind::replay, CorrectionKind::skip_same_size,
                           CorrectionKind::skip_next_block, CorrectionKind::skip_to_head})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown correction policy '" + std::string(name) + "'");
}

Guard make_guard(const ModelGraph& model, const ProtectionPlan& plan, std::span<const Precision> precisions,
                 std::map<Index, EpsilonModel> epsilons) {
  if (static_cast<Index>(precisions.size()) != model.size())
    throw ShapeError("make_guard: one precision per model layer required");
  Guard g;
  for (Index l : plan.layers) {
    if (l < 0 || l >= model.size()) throw ShapeError("plan layer " + std::to_string(l) + " out of range");
    const LayerSpec& layer = model.layer(l);
    const bool integer = is_integer(layer.dtype());
    const auto eps = epsilons.find(l);
    const Precision p = integer ? Precision::int64_exact
                        : eps != epsilons.end() ? eps->second.precision
                                                : precisions[static_cast<std::size_t>(l)];
    if (!integer && eps == epsilons.end())
      throw std::invalid_argument("make_guard: no epsilon model for protected layer " + std::to_string(l));
    g.layers.insert(l);
    g.checksums.emplace(l, offline_checksum(layer, p));
  }
  for (auto& [l, m] : epsilons)
    if (g.layers.contains(l)) g.epsilons.emplace(l, m);
  return g;
}

ProtectedRun protected_forward(const ModelGraph& model, const Matrix2D& input, Index label, const Guard& guard,
                               const CorrectionPolicy& policy, const InjectionSpec* fault) {
  if (policy.kind == CorrectionKind::replay && policy.max_replays < 1)
    throw std::invalid_argument("replay policy needs max_replays >= 1");
  if (input.rows() != model.tokens || input.cols() != model.input_dim)
    throw ShapeError("input must be " + std::to_string(model.tokens) + "x" + std::to_string(model.input_dim));
  if (fault != nullptr && (fault->layer < 0 || fault->layer >= model.size()))
    throw ShapeError("fault layer out of range");

  ProtectedRun run;
  bool fault_pending = fault != nullptr;
  Matrix2D carried = input;  // the single saved activation
  Index i = 0;
  while (i < model.size()) {
    const LayerSpec& layer = model.layer(i);
    const Matrix2D x = gemm_operand(layer, carried);
    const bool guarded = guard.protects(i);
    const WeightChecksum* chk = guarded ? &guard.checksums.at(i) : nullptr;
    const EpsilonModel* eps = nullptr;
    if (guarded && chk->precision != Precision::int64_exact) eps = &guard.epsilons.at(i);

    Matrix2D y;
    int replays = 0;
    Index skip_to = -1;
    for (;;) {
      const bool faulty = fault_pending && fault->layer == i;
      Matrix2D y_clean;
      if (faulty) {
        FaultedGemm f = faulted_gemm(layer, x, *fault);
        fault_pending = false;
        y = std::move(f.y);
        if (fault->location == Location::output) {
          y_clean = y;
          y_clean.set(fault->element, f.original);
        } else {
          y_clean = layer_gemm(layer, x);
        }
        FaultProbe probe;
        probe.layer = i;
        probe.original = f.original;
        probe.corrupted = f.corrupted;
        probe.verified = guarded;
        probe.bound = std::numeric_limits<double>::infinity();
        double best_margin = -std::numeric_limits<double>::infinity();
        for (Index b = 0; b < y.rows(); ++b) {
          long double s = 0.0L;
          for (Index o = 0; o < y.cols(); ++o) s += static_cast<long double>(y(b, o)) - y_clean(b, o);
          const double shift = static_cast<double>(s);
          double bound = std::numeric_limits<double>::infinity();
          RowCheck fault_row;
          bool clean_ok = true;
          if (guarded) {
            const RowCheck clean_row = check_row(x, y_clean, b, *chk);
            fault_row = check_row(x, y, b, *chk);
            const double width = eps != nullptr ? eps->width() : 0.0;
            bound = width + rounding_bound(y_clean, y, b, clean_row, fault_row, chk->precision);
            EpsilonModel exact_model;
            exact_model.precision = Precision::int64_exact;
            clean_ok = !outside(clean_row.d, eps != nullptr ? *eps : exact_model);
          }
          const double margin = std::fabs(shift) - bound;
          if (b == 0 || margin > best_margin || (std::isnan(best_margin) && !std::isnan(margin))) {
            best_margin = margin;
            probe.row = b;
            probe.shift = shift;
            probe.bound = bound;
            probe.discrepancy = fault_row.d;
            probe.clean_in_interval = clean_ok;
          }
        }
        run.probe = probe;
      } else {
        y = layer_gemm(layer, x);
      }
      if (!guarded) break;

      const DetectionOutcome outcome = verify_layer(x, y, *chk, eps);
      ++run.checks;
      run.checksum_flops += checksum_cost_model(layer).checksum_flops;
      if (faulty) run.probe->detected = outcome.triggered;
      if (!outcome.triggered) break;

      ++run.triggered_checks;
      run.events.push_back({GuardEvent::Kind::triggered, i, -1, outcome.max_discrepancy});
      if (!run.first_trigger) run.first_trigger = i;
      if (policy.kind == CorrectionKind::detect_only) break;
      if (policy.kind == CorrectionKind::replay) {
        if (replays >= policy.max_replays)
          throw CorrectionError("replay budget exhausted at layer " + layer.name + " after " +
                                std::to_string(replays) + " replays (persistent fault suspected)");
        ++replays;
        ++run.replays;
        run.extra_macs += mac_count(layer);
        run.events.push_back({GuardEvent::Kind::replayed, i, -1, outcome.max_discrepancy});
        continue;
      }
      skip_to = skip_target(model, i, carried.cols(), policy.kind);
      run.events.push_back({GuardEvent::Kind::skipped, i, skip_to, outcome.max_discrepancy});
      break;
    }

    if (skip_to >= 0) {
      i = skip_to;  // carried is still the saved input of the faulty layer
      continue;
    }
    if (i == model.head_index()) {
      Prediction p = classify(model, y, label);
      run.logits = std::move(p.logits);
      run.predicted = p.predicted;
      run.loss = p.loss;
      break;
    }
    carried = epilogue(model, layer, y);
    ++i;
  }
  return run;
}

double DetectionReport::coverage() const {
  const Index mismatches = detected_mismatch + missed_mismatch;
  return mismatches == 0 ? 1.0 : static_cast<double>(detected_mismatch) / static_cast<double>(mismatches);
}

double DetectionReport::false_positive_rate() const {
  return clean_checks == 0 ? 0.0 : static_cast<double>(clean_check_false_positives) / static_cast<double>(clean_checks);
}

double DetectionReport::inference_false_positive_rate() const {
  return clean_inferences == 0 ? 0.0
                               : static_cast<double>(clean_false_positives) / static_cast<double>(clean_inferences);
}

double DetectionReport::correction_overhead() const {
  return correction_base_macs == 0 ? 0.0
                                   : static_cast<double>(correction_extra_macs) /
                                         static_cast<double>(correction_base_macs);
}

DetectionReport evaluate_detection(const ModelGraph& model, const GoldenSet& golden, const RangeProfile& ranges,
                                   const Guard& guard, const GoldenSet& clean, const EvaluationOptions& options) {
  DetectionReport report;
  for (const auto& [l, m] : guard.epsilons) report.thresholds.push_back(m);
  for (const auto& [l, chk] : guard.checksums) {
    if (guard.epsilons.contains(l)) continue;
    EpsilonModel m;
    m.layer = l;
    m.precision = chk.precision;
    report.thresholds.push_back(m);
  }
  std::sort(report.thresholds.begin(), report.thresholds.end(),
            [](const EpsilonModel& a, const EpsilonModel& b) { return a.layer < b.layer; });

  const auto specs = plan_injections(model, golden, ranges, options.campaign, report.skipped);
  const CorrectionPolicy detect{CorrectionKind::detect_only, 1};
  struct Outcome {
    InjectionRecord record;
    std::optional<FaultProbe> probe;
    bool corrected = false;
    bool failed = false;
    Index extra_macs = 0;
  };
  std::vector<Outcome> outcomes(specs.size());
  parallel_for(specs.size(), options.campaign.workers, [&](std::size_t t) {
    const InjectionSpec& spec = specs[t];
    const auto pos = static_cast<std::size_t>(golden_position(golden, spec.sample));
    const ProtectedRun run = protected_forward(model, golden.inputs[pos], golden.labels[pos], guard, detect, &spec);
    Outcome& o = outcomes[t];
    InjectionRecord& r = o.record;
    r.spec = spec;
    r.original_value = run.probe->original;
    r.corrupted_value = run.probe->corrupted;
    r.golden_loss = golden.losses[pos];
    r.golden_class = golden.labels[pos];
    r.corrupted_loss = run.loss;
    r.corrupted_class = run.predicted;
    r.mismatch = r.corrupted_class != r.golden_class;
    r.detected = run.first_trigger.has_value();
    if (run.first_trigger) r.detection_layer = *run.first_trigger;
    o.probe = run.probe;
    if (!*r.detected || options.correction.kind == CorrectionKind::detect_only) return;
    try {
      const ProtectedRun fixed =
          protected_forward(model, golden.inputs[pos], golden.labels[pos], guard, options.correction, &spec);
      o.corrected = fixed.predicted == golden.labels[pos];
      o.extra_macs = fixed.extra_macs;
    } catch (const CorrectionError&) {
      o.failed = true;
    }
  });

  const Index base_macs = total_macs(model);
  for (auto& o : outcomes) {
    const InjectionRecord& r = o.record;
    const bool detected = *r.detected;
    if (r.mismatch) (detected ? report.detected_mismatch : report.missed_mismatch)++;
    else (detected ? report.detected_benign : report.undetected_benign)++;
    if (detected && options.correction.kind != CorrectionKind::detect_only) {
      if (o.corrected) ++report.corrected;
      if (o.failed) ++report.correction_failures;
      report.correction_extra_macs += o.extra_macs;
      report.correction_base_macs += base_macs;
    }
    if (o.probe && o.probe->verified) {
      report.points.push_back({o.probe->layer, r.spec.sample, o.probe->discrepancy, o.probe->shift, o.probe->bound,
                               o.probe->clean_in_interval, r.mismatch, o.probe->detected});
    }
    report.records.push_back(r);
  }
  for (auto& t : report.skipped) {
    for (const auto& r : report.records) {
      if (r.spec.layer != t.layer) continue;
      ++t.injections;
      if (r.mismatch) ++t.mismatches;
    }
  }

  std::vector<ProtectedRun> clean_runs(static_cast<std::size_t>(clean.size()));
  parallel_for(clean_runs.size(), options.campaign.workers, [&](std::size_t i) {
    clean_runs[i] = protected_forward(model, clean.inputs[i], clean.labels[i], guard, detect);
  });
  for (const auto& run : clean_runs) {
    ++report.clean_inferences;
    report.clean_checks += run.checks;
    report.clean_check_false_positives += run.triggered_checks;
    if (run.first_trigger) ++report.clean_false_positives;
  }
  return report;
}

nlohmann::json to_json(const std::map<Index, EpsilonModel>& models) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [l, m] : models) {
    j[std::to_string(l)] = {{"mu", m.mu},
                            {"sigma", m.sigma},
                            {"confidence", m.confidence},
                            {"threshold_low", m.threshold_low},
                            {"threshold_high", m.threshold_high},
                            {"n", m.n_samples},
                            {"precision", to_string(m.precision)}};
  }
  return j;
}

std::map<Index, EpsilonModel> epsilons_from_json(const nlohmann::json& j) {
  std::map<Index, EpsilonModel> out;
  for (const auto& [key, v] : j.items()) {
    EpsilonModel m;
    m.layer = std::stoll(key);
    m.mu = v.at("mu").get<double>();
    m.sigma = v.at("sigma").get<double>();
    m.confidence = v.at("confidence").get<double>();
    m.threshold_low = v.at("threshold_low").get<double>();
    m.threshold_high = v.at("threshold_high").get<double>();
    m.n_samples = v.at("n").get<Index>();
    m.precision = parse_precision(v.at("precision").get<std::string>());
    if (m.sigma < 0.0 || m.threshold_low > m.threshold_high)
      throw FormatError("epsilon model for layer " + key + " is inconsistent");
    out.emplace(m.layer, m);
  }
  return out;
}

nlohmann::json detection_summary(const DetectionReport& r) {
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& t : r.skipped)
    if (t.skipped > 0) skipped.push_back({{"layer", t.layer}, {"skipped", t.skipped}, {"reason", t.skip_reason}});
  Index guaranteed = 0;
  Index guaranteed_detected = 0;
  for (const auto& p : r.points) {
    if (!p.clean_in_interval || !(std::fabs(p.shift) > p.bound)) continue;
    ++guaranteed;
    if (p.detected) ++guaranteed_detected;
  }
  return {{"injections", static_cast<Index>(r.records.size())},
          {"detected_mismatch", r.detected_mismatch},
          {"missed_mismatch", r.missed_mismatch},
          {"detected_benign", r.detected_benign},
          {"undetected_benign", r.undetected_benign},
          {"coverage", r.coverage()},
          {"guaranteed_injections", guaranteed},
          {"guaranteed_detected", guaranteed_detected},
          {"clean_inferences", r.clean_inferences},
          {"clean_false_positives", r.clean_false_positives},
          {"clean_checks", r.clean_checks},
          {"clean_check_false_positives", r.clean_check_false_positives},
          {"false_positive_rate", r.false_positive_rate()},
          {"inference_false_positive_rate", r.inference_false_positive_rate()},
          {"corrected", r.corrected},
          {"correction_failures", r.correction_failures},
          {"correction_extra_macs", r.correction_extra_macs},
          {"correction_overhead", r.correction_overhead()},
          {"skipped", skipped}};
}

void write_detection_csv(std::ostream& out, const DetectionReport& report) {
  char buf[40];
  out << "layer,discrepancy,mismatch,detected\n";
  for (const auto& p : report.points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.discrepancy);
    out << p.layer << ',' << buf << ',' << (p.mismatch ? 1 : 0) << ',' << (p.detected ? 1 : 0) << '\n';
  }
}

void write_thresholds_csv(std::ostream& out, const DetectionReport& report) {
  char buf[4][40];
  out << "layer,mu,sigma,threshold_low,threshold_high\n";
  for (const auto& m : report.thresholds) {
    std::snprintf(buf[0], sizeof buf[0], "%.17g", m.mu);
    std::snprintf(buf[1], sizeof buf[1], "%.17g", m.sigma);
    std::snprintf(buf[2], sizeof buf[2], "%.17g", m.threshold_low);
    std::snprintf(buf[3], sizeof buf[3], "%.17g", m.threshold_high);
    out << m.layer << ',' << buf[0] << ',' << buf[1] << ',' << buf[2] << ',' << buf[3] << '\n';
  }
}

}  // namespace ftb
