#include "ftbench/workbench.hpp"

#include "ftbench/errors.hpp"
#include "ftbench/profiler.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace ftb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvaluationSeedMix = 0x9E3779B97F4A7C15ull;

// Section reader that rejects unknown keys and wrong types.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) {
      node_ = json::object();
    } else {
      node_ = root.at(name);
      if (!node_.is_object()) throw ConfigError("config section '" + name + "' must be an object");
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!node_.contains(key)) return fallback;
    try {
      return node_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + name_ + "." + key + "' has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : node_.items())
      if (!seen_.contains(key)) throw ConfigError("unknown config field '" + name_ + "." + key + "'");
  }

 private:
  std::string name_;
  json node_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

template <typename Parse>
auto parse_or_config_error(Parse&& parse, const std::string& what) {
  try {
    return parse();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::string csv_header(const WorkbenchConfig& c) {
  return "# config_hash=" + hash_hex(c.hash) + ",seed=" + std::to_string(c.seed) + "\n";
}

fs::path artifact(const fs::path& out, const std::string& name) { return out / name; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& out, const std::string& name, json payload, const WorkbenchConfig& c) {
  payload["config_hash"] = hash_hex(c.hash);
  payload["seed"] = c.seed;
  write_text(artifact(out, name), payload.dump(2) + "\n");
}

template <typename Writer>
void write_csv(const fs::path& out, const std::string& name, const WorkbenchConfig& c, Writer&& writer) {
  std::ostringstream s;
  s << csv_header(c);
  writer(s);
  write_text(artifact(out, name), s.str());
}

std::string read_text(const fs::path& out, const std::string& name, Stage producer) {
  const fs::path path = artifact(out, name);
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw StageError(std::string(to_string(producer)), "missing artifact '" + name + "'; run the '" +
                                                           std::string(to_string(producer)) + "' stage first");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void check_hash(const std::string& found, const std::string& name, Stage producer, const WorkbenchConfig& c) {
  if (found != hash_hex(c.hash))
    throw StageError(std::string(to_string(producer)), "artifact '" + name + "' was produced under config hash " +
                                                           found + "; rerun the '" +
                                                           std::string(to_string(producer)) + "' stage");
}

json read_json(const fs::path& out, const std::string& name, Stage producer, const WorkbenchConfig& c) {
  json j;
  try {
    j = json::parse(read_text(out, name, producer));
  } catch (const json::exception& e) {
    throw FormatError("artifact '" + name + "' is not valid JSON: " + e.what());
  }
  check_hash(j.value("config_hash", std::string{}), name, producer, c);
  return j;
}

std::string read_csv(const fs::path& out, const std::string& name, Stage producer, const WorkbenchConfig& c) {
  const std::string text = read_text(out, name, producer);
  const std::string prefix = "# config_hash=";
  std::string hash;
  if (text.rfind(prefix, 0) == 0) hash = text.substr(prefix.size(), 16);
  check_hash(hash, name, producer, c);
  return text;
}

ModelGraph make_model(const WorkbenchConfig& c) {
  if (c.model_source == "file") return load_weights(c.model_path);
  return build_toy_model(c.blocks, c.dim, c.tokens, c.classes, c.model_seed, c.dtype);
}

std::vector<Precision> precisions_from(const ModelGraph& model, const std::map<Index, EpsilonModel>& eps) {
  std::vector<Precision> p(static_cast<std::size_t>(model.size()), Precision::binary64);
  for (const auto& l : model.layers) {
    if (is_integer(l.dtype())) p[static_cast<std::size_t>(l.index)] = Precision::int64_exact;
    const auto it = eps.find(l.index);
    if (it != eps.end()) p[static_cast<std::size_t>(l.index)] = it->second.precision;
  }
  return p;
}

CampaignOptions campaign_options(const WorkbenchConfig& c, Index n, std::uint64_t seed, int workers) {
  CampaignOptions o;
  o.n_per_layer = n;
  o.modes = c.modes;
  o.locations = c.locations;
  o.seed = seed;
  o.count_noop = c.count_noop;
  o.workers = workers;
  return o;
}

std::vector<InjectionRecord> load_campaign(const fs::path& out, const WorkbenchConfig& c) {
  std::istringstream s(read_csv(out, "campaign.csv", Stage::inject, c));
  return read_campaign_csv(s);
}

std::vector<LayerVulnerability> load_vulnerability(const fs::path& out, const WorkbenchConfig& c) {
  std::istringstream s(read_csv(out, "vulnerability.csv", Stage::analyze, c));
  return read_vulnerability_csv(s);
}

struct Upstream {
  ModelGraph model;
  Dataset data;
  RangeProfile ranges;
  GoldenSet golden;
};

Upstream load_profiled(const fs::path& out, const WorkbenchConfig& c) {
  Upstream u;
  u.model = make_model(c);
  u.data = make_dataset(u.model, c.dataset_size, c.dataset_seed);
  u.ranges = ranges_from_json(read_json(out, "ranges.json", Stage::profile, c).at("layers"));
  u.golden = golden_from_json(read_json(out, "golden.json", Stage::profile, c).at("golden"), u.data);
  return u;
}

void stage_profile(const WorkbenchConfig& c, const fs::path& out, int workers) {
  const ModelGraph model = make_model(c);
  const Dataset data = make_dataset(model, c.dataset_size, c.dataset_seed);
  const RangeProfile ranges = profile_ranges(model, data, workers);
  const GoldenSet golden = select_golden(model, data);
  write_json(out, "ranges.json", {{"layers", to_json(ranges)}}, c);
  write_json(out, "golden.json", {{"golden", to_json(golden)}, {"dataset_size", data.size()}}, c);
  const auto v = compute_v_orig(model);
  json layers = json::array();
  for (const auto& l : model.layers)
    layers.push_back({{"layer", l.index},
                      {"name", l.name},
                      {"kind", to_string(l.kind)},
                      {"macs", mac_count(l)},
                      {"v_orig", v[static_cast<std::size_t>(l.index)]}});
  write_json(out, "v_orig.json", {{"layers", layers}, {"total_macs", total_macs(model)}}, c);
}

void stage_inject(const WorkbenchConfig& c, const fs::path& out, int workers) {
  const Upstream u = load_profiled(out, c);
  const CampaignResult result = run_campaign(u.model, u.golden, u.ranges, campaign_options(c, c.n_per_layer, c.seed, workers));
  write_csv(out, "campaign.csv", c, [&](std::ostream& s) { write_campaign_csv(s, result); });
  write_json(out, "campaign.json", campaign_summary(result), c);
}

void stage_analyze(const WorkbenchConfig& c, const fs::path& out) {
  const ModelGraph model = make_model(c);
  const auto records = load_campaign(out, c);
  const auto vulns = analyze_vulnerability(model, records);
  write_csv(out, "vulnerability.csv", c, [&](std::ostream& s) { write_vulnerability_csv(s, vulns); });
  for (Scheme scheme : {Scheme::duplication, Scheme::checksum}) {
    const auto curve = scheme_curve(model, vulns, scheme, c.curves_include_head);
    write_csv(out, "curve_" + std::string(to_string(scheme)) + ".csv", c,
              [&](std::ostream& s) { write_curve_csv(s, curve); });
  }
  // The same duplication curve ranked by loss shift instead of mismatches.
  auto by_loss = vulns;
  for (auto& v : by_loss) v.v_layer = v.v_orig * std::max(0.0, v.delta_loss);
  const auto loss_curve = scheme_curve(model, by_loss, Scheme::duplication, c.curves_include_head);
  write_csv(out, "curve_delta_loss.csv", c, [&](std::ostream& s) { write_curve_csv(s, loss_curve); });
}

void stage_calibrate(const WorkbenchConfig& c, const fs::path& out) {
  const Upstream u = load_profiled(out, c);
  std::vector<Precision> precisions;
  json saturated = json::array();
  if (c.precision == "auto") {
    const auto choices = choose_checksum_precision(u.model, u.ranges);
    for (std::size_t i = 0; i < choices.size(); ++i) {
      precisions.push_back(choices[i].precision);
      if (choices[i].saturated) saturated.push_back(static_cast<Index>(i));
    }
  } else {
    const Precision p = parse_precision(c.precision);
    for (const auto& l : u.model.layers) precisions.push_back(is_integer(l.dtype()) ? Precision::int64_exact : p);
  }
  std::vector<Index> layers;
  for (const auto& l : u.model.layers) layers.push_back(l.index);
  CalibrationOptions opt;
  opt.confidence = c.confidence;
  opt.statistic = c.statistic;
  const auto eps = calibrate_epsilon(u.model, u.golden, layers, precisions, opt);
  write_json(out, "epsilon.json",
             {{"layers", to_json(eps)},
              {"precision_policy", c.precision},
              {"statistic", to_string(c.statistic)},
              {"saturated_layers", saturated}},
             c);
}

void stage_plan(const WorkbenchConfig& c, const fs::path& out) {
  const ModelGraph model = make_model(c);
  const auto vulns = load_vulnerability(out, c);
  if (static_cast<Index>(vulns.size()) != model.size())
    throw FormatError("vulnerability.csv does not cover every layer of the model");
  json plans = json::object();
  for (Scheme scheme : {Scheme::checksum, Scheme::duplication})
    plans[std::string(to_string(scheme))] =
        to_json(plan_protection(model, vulns, c.target_coverage, scheme, c.selection, true));
  write_json(out, "plan.json", {{"plans", plans}, {"selection", to_string(c.selection)}}, c);
}

void stage_evaluate(const WorkbenchConfig& c, const fs::path& out, int workers) {
  const Upstream u = load_profiled(out, c);
  const auto eps = epsilons_from_json(read_json(out, "epsilon.json", Stage::calibrate, c).at("layers"));
  const ProtectionPlan plan = plan_from_json(read_json(out, "plan.json", Stage::plan, c).at("plans").at("checksum"));
  const Guard guard = make_guard(u.model, plan, precisions_from(u.model, eps), eps);
  const Dataset held_out = make_dataset(u.model, c.held_out_size, c.held_out_seed);
  const GoldenSet clean = select_golden(u.model, held_out);

  EvaluationOptions opt;
  opt.campaign = campaign_options(c, c.eval_n_per_layer, c.seed ^ kEvaluationSeedMix, workers);
  opt.correction = c.correction;
  const DetectionReport report = evaluate_detection(u.model, u.golden, u.ranges, guard, clean, opt);
  write_csv(out, "detection.csv", c, [&](std::ostream& s) { write_detection_csv(s, report); });
  write_csv(out, "thresholds.csv", c, [&](std::ostream& s) { write_thresholds_csv(s, report); });
  json summary = detection_summary(report);
  summary["protected_layers"] = plan.layers;
  summary["correction_policy"] = to_string(c.correction.kind);
  write_json(out, "evaluation.json", summary, c);
}

void stage_report(const WorkbenchConfig& c, const fs::path& out) {
  const json v_orig = read_json(out, "v_orig.json", Stage::profile, c);
  const json campaign = read_json(out, "campaign.json", Stage::inject, c);
  const auto vulns = load_vulnerability(out, c);
  const json eps = read_json(out, "epsilon.json", Stage::calibrate, c);
  const json plans = read_json(out, "plan.json", Stage::plan, c).at("plans");
  const json eval = read_json(out, "evaluation.json", Stage::evaluate, c);

  // Vulnerability: per-inference SDC probability and the most vulnerable layers.
  double sdc = 0.0;
  std::vector<LayerVulnerability> ranked = vulns;
  for (const auto& v : vulns) sdc += v.v_layer;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const LayerVulnerability& a, const LayerVulnerability& b) { return a.v_layer > b.v_layer; });
  json top = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i)
    top.push_back({{"layer", ranked[i].layer},
                   {"v_layer", ranked[i].v_layer},
                   {"p_prop", ranked[i].p_prop},
                   {"delta_loss", ranked[i].delta_loss}});

  const json& chk = plans.at("checksum");
  const json& dup = plans.at("duplication");
  const double chk_cost = chk.at("compute_overhead").get<double>();
  const double dup_cost = dup.at("compute_overhead").get<double>();

  json report = {
      {"vulnerability",
       {{"sdc_probability", sdc},
        {"campaign_mismatch_rate", campaign.value("mismatch_rate", 0.0)},
        {"margin_of_error_99", campaign.value("margin_of_error_99", 0.0)},
        {"most_vulnerable", top},
        {"total_macs", v_orig.at("total_macs")}}},
      {"selective_protection",
       {{"target_coverage", chk.at("target_coverage")},
        {"checksum", chk},
        {"duplication", dup},
        {"duplication_to_checksum_cost_ratio", chk_cost > 0.0 ? dup_cost / chk_cost : 0.0}}},
      {"detection",
       {{"coverage", eval.at("coverage")},
        {"detected_mismatch", eval.at("detected_mismatch")},
        {"missed_mismatch", eval.at("missed_mismatch")},
        {"false_positive_rate", eval.at("false_positive_rate")},
        {"inference_false_positive_rate", eval.at("inference_false_positive_rate")},
        {"guaranteed_injections", eval.at("guaranteed_injections")},
        {"guaranteed_detected", eval.at("guaranteed_detected")},
        {"confidence", c.confidence},
        {"precision_policy", eps.at("precision_policy")}}},
      {"correction",
       {{"policy", eval.at("correction_policy")},
        {"corrected", eval.at("corrected")},
        {"failures", eval.at("correction_failures")},
        {"overhead", eval.at("correction_overhead")}}},
  };
  write_json(out, "report.json", report, c);
}

}  // namespace

std::uint64_t config_hash(const json& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

WorkbenchConfig parse_config(const json& j, std::optional<std::uint64_t> seed_override) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const std::set<std::string> sections{"seed", "model", "dataset", "campaign", "guard", "correction", "evaluate"};
  for (const auto& [key, value] : j.items())
    if (!sections.contains(key)) throw ConfigError("unknown config field '" + key + "'");

  WorkbenchConfig c;
  try {
    c.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : 1;
  } catch (const json::exception&) {
    throw ConfigError("config field 'seed' must be an unsigned integer");
  }
  if (seed_override) c.seed = *seed_override;

  Section model(j, "model");
  c.model_source = model.get<std::string>("source", "synthetic");
  require(c.model_source == "synthetic" || c.model_source == "file", "model.source must be 'synthetic' or 'file'");
  c.model_path = model.get<std::string>("path", "");
  c.blocks = model.get<Index>("blocks", c.blocks);
  c.dim = model.get<Index>("dim", c.dim);
  c.tokens = model.get<Index>("tokens", c.tokens);
  c.classes = model.get<Index>("classes", c.classes);
  c.model_seed = model.get<std::uint64_t>("seed", c.model_seed);
  const std::string dtype = model.get<std::string>("dtype", "binary16");
  c.dtype = parse_or_config_error([&] { return parse_dtype(dtype); }, "model.dtype");
  model.finish();
  if (c.model_source == "file") {
    require(!c.model_path.empty(), "model.path is required when model.source is 'file'");
    require(fs::exists(c.model_path), "model file '" + c.model_path.string() + "' does not exist");
  } else {
    require(c.blocks >= 1, "model.blocks must be >= 1");
    require(c.dim >= 4 && c.dim % 4 == 0, "model.dim must be a positive multiple of 4");
    require(c.tokens >= 1, "model.tokens must be >= 1");
    require(c.classes >= 2, "model.classes must be >= 2");
    require(c.dtype != DType::int32, "model.dtype int32 is not supported; use int8");
  }

  Section data(j, "dataset");
  c.dataset_seed = data.get<std::uint64_t>("seed", c.dataset_seed);
  c.dataset_size = data.get<Index>("size", c.dataset_size);
  c.held_out_seed = data.get<std::uint64_t>("held_out_seed", c.dataset_seed + 1);
  c.held_out_size = data.get<Index>("held_out_size", c.held_out_size);
  data.finish();
  require(c.dataset_size >= 1, "dataset.size must be >= 1");
  require(c.held_out_size >= 1, "dataset.held_out_size must be >= 1");
  require(c.held_out_seed != c.dataset_seed, "dataset.held_out_seed must differ from dataset.seed");

  Section campaign(j, "campaign");
  c.n_per_layer = campaign.get<Index>("n_per_layer", c.n_per_layer);
  for (const auto& m : campaign.get<std::vector<std::string>>("modes", {}))
    c.modes.push_back(parse_or_config_error([&] { return parse_mode(m); }, "campaign.modes"));
  const auto locations = campaign.get<std::vector<std::string>>("locations", {"output"});
  c.locations.clear();
  for (const auto& l : locations)
    c.locations.push_back(parse_or_config_error([&] { return parse_location(l); }, "campaign.locations"));
  c.count_noop = campaign.get<bool>("count_noop", false);
  campaign.finish();
  require(c.n_per_layer >= 0, "campaign.n_per_layer must be >= 0");
  require(!c.locations.empty(), "campaign.locations must not be empty");
  for (InjectionMode m : c.modes)
    require(m != InjectionMode::fixed_value, "campaign.modes: fixed_value is for single injections only");

  Section guard(j, "guard");
  c.confidence = guard.get<double>("confidence", c.confidence);
  c.precision = guard.get<std::string>("precision", c.precision);
  c.target_coverage = guard.get<double>("target_coverage", c.target_coverage);
  const std::string statistic = guard.get<std::string>("statistic", "per_sample");
  c.statistic = parse_or_config_error([&] { return parse_statistic(statistic); }, "guard.statistic");
  const std::string selection = guard.get<std::string>("selection", "greedy");
  c.selection = parse_or_config_error([&] { return parse_selection_mode(selection); }, "guard.selection");
  c.curves_include_head = guard.get<bool>("curves_include_head", false);
  guard.finish();
  require(c.confidence > 0.5 && c.confidence < 1.0, "guard.confidence must lie in (0.5, 1)");
  require(c.target_coverage > 0.0 && c.target_coverage <= 1.0, "guard.target_coverage must lie in (0, 1]");
  if (c.precision != "auto") {
    const Precision p = parse_or_config_error([&] { return parse_precision(c.precision); }, "guard.precision");
    require(is_floating(p), "guard.precision must be 'auto' or a floating precision");
  }

  Section correction(j, "correction");
  const std::string kind = correction.get<std::string>("kind", "replay");
  c.correction.kind = parse_or_config_error([&] { return parse_correction(kind); }, "correction.kind");
  c.correction.max_replays = correction.get<int>("max_replays", 1);
  correction.finish();
  require(c.correction.max_replays >= 1, "correction.max_replays must be >= 1");

  Section evaluate(j, "evaluate");
  c.eval_n_per_layer = evaluate.get<Index>("n_per_layer", c.eval_n_per_layer);
  evaluate.finish();
  require(c.eval_n_per_layer >= 0, "evaluate.n_per_layer must be >= 0");

  json modes = json::array();
  for (InjectionMode m : c.modes) modes.push_back(to_string(m));
  json locs = json::array();
  for (Location l : c.locations) locs.push_back(to_string(l));
  json model_json = {{"source", c.model_source}};
  if (c.model_source == "file") {
    model_json["path"] = c.model_path.string();
  } else {
    model_json.update({{"blocks", c.blocks},
                       {"dim", c.dim},
                       {"tokens", c.tokens},
                       {"classes", c.classes},
                       {"seed", c.model_seed},
                       {"dtype", to_string(c.dtype)}});
  }
  c.canonical = {
      {"seed", c.seed},
      {"model", model_json},
      {"dataset",
       {{"seed", c.dataset_seed}, {"size", c.dataset_size}, {"held_out_seed", c.held_out_seed},
        {"held_out_size", c.held_out_size}}},
      {"campaign", {{"n_per_layer", c.n_per_layer}, {"modes", modes}, {"locations", locs}, {"count_noop", c.count_noop}}},
      {"guard",
       {{"confidence", c.confidence},
        {"precision", c.precision},
        {"target_coverage", c.target_coverage},
        {"statistic", to_string(c.statistic)},
        {"selection", to_string(c.selection)},
        {"curves_include_head", c.curves_include_head}}},
      {"correction", {{"kind", to_string(c.correction.kind)}, {"max_replays", c.correction.max_replays}}},
      {"evaluate", {{"n_per_layer", c.eval_n_per_layer}}},
  };
  c.hash = config_hash(c.canonical);
  return c;
}

WorkbenchConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j, seed_override);
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::profile: return "profile";
    case Stage::inject: return "inject";
    case Stage::analyze: return "analyze";
    case Stage::calibrate: return "calibrate";
    case Stage::plan: return "plan";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "unknown";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::profile, Stage::inject,   Stage::analyze, Stage::calibrate,
                                         Stage::plan,    Stage::evaluate, Stage::report};
  return stages;
}

Stage parse_stage(std::string_view name) {
  for (Stage s : all_stages())
    if (to_string(s) == name) return s;
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

std::vector<std::string> stage_artifacts(Stage stage) {
  switch (stage) {
    case Stage::profile: return {"ranges.json", "golden.json", "v_orig.json"};
    case Stage::inject: return {"campaign.csv", "campaign.json"};
    case Stage::analyze:
      return {"vulnerability.csv", "curve_duplication.csv", "curve_checksum.csv", "curve_delta_loss.csv"};
    case Stage::calibrate: return {"epsilon.json"};
    case Stage::plan: return {"plan.json"};
    case Stage::evaluate: return {"detection.csv", "thresholds.csv", "evaluation.json"};
    case Stage::report: return {"report.json"};
  }
  return {};
}

void run_stage(Stage stage, const WorkbenchConfig& config, const fs::path& out, int workers) {
  fs::create_directories(out);
  switch (stage) {
    case Stage::profile: stage_profile(config, out, workers); break;
    case Stage::inject: stage_inject(config, out, workers); break;
    case Stage::analyze: stage_analyze(config, out); break;
    case Stage::calibrate: stage_calibrate(config, out); break;
    case Stage::plan: stage_plan(config, out); break;
    case Stage::evaluate: stage_evaluate(config, out, workers); break;
    case Stage::report: stage_report(config, out); break;
  }
}

void run_pipeline(const WorkbenchConfig& config, const fs::path& out, int workers) {
  for (Stage s : all_stages()) run_stage(s, config, out, workers);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const StageError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const NumericalError*>(&e) != nullptr) return 4;
  return 1;
}

}  // namespace ftb
