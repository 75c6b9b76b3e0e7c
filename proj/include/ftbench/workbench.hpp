#pragma once

#include "ftbench/analysis.hpp"
#include "ftbench/guard.hpp"
#include "ftbench/injector.hpp"
#include "ftbench/model.hpp"

#include <json.hpp>

#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ftb {

/// Parsed pipeline configuration. `canonical` holds every field with defaults
/// filled in; its hash identifies the artifacts a run produces.
struct WorkbenchConfig {
  nlohmann::json canonical;
  std::uint64_t hash = 0;
  std::uint64_t seed = 0;

  std::string model_source = "synthetic";  // synthetic | file
  std::filesystem::path model_path;
  Index blocks = 2;
  Index dim = 32;
  Index tokens = 4;
  Index classes = 10;
  std::uint64_t model_seed = 7;
  DType dtype = DType::binary16;

  std::uint64_t dataset_seed = 11;
  Index dataset_size = 256;
  std::uint64_t held_out_seed = 12;
  Index held_out_size = 256;

  Index n_per_layer = 100;
  std::vector<InjectionMode> modes;
  std::vector<Location> locations{Location::output};
  bool count_noop = false;

  double confidence = 0.9999;
  std::string precision = "auto";  // auto or a floating precision name
  double target_coverage = 0.99;
  CalibrationStatistic statistic = CalibrationStatistic::per_sample;
  SelectionMode selection = SelectionMode::greedy;
  bool curves_include_head = false;

  CorrectionPolicy correction{CorrectionKind::replay, 1};
  Index eval_n_per_layer = 100;
};

/// Validates `j` and fills defaults. Throws ConfigError.
WorkbenchConfig parse_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = std::nullopt);
WorkbenchConfig load_config(const std::filesystem::path& path,
                            std::optional<std::uint64_t> seed_override = std::nullopt);

/// FNV-1a 64 of the canonical JSON text.
std::uint64_t config_hash(const nlohmann::json& canonical);
std::string hash_hex(std::uint64_t hash);

enum class Stage : std::uint8_t { profile, inject, analyze, calibrate, plan, evaluate, report };
std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view name);
const std::vector<Stage>& all_stages();

/// Runs one stage, reading upstream artifacts from `out` and writing its own.
/// Throws StageError naming the missing stage when an input is absent or was
/// produced under a different config.
void run_stage(Stage stage, const WorkbenchConfig& config, const std::filesystem::path& out, int workers = 1);

/// Every stage in pipeline order.
void run_pipeline(const WorkbenchConfig& config, const std::filesystem::path& out, int workers = 1);

/// Process exit status for an exception: 2 config, 3 stage dependency,
/// 4 numerical, 1 anything else.
int exit_code_for(const std::exception& e);

/// File names each stage writes.
std::vector<std::string> stage_artifacts(Stage stage);

}  // namespace ftb
