// Command-line front-end for the fault-tolerance workbench.

#include "ftbench/errors.hpp"
#include "ftbench/workbench.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return fallback;
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ftb::ConfigError(std::string(name) + " must be an integer");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault-injection, checksum detection and protection planning for GEMM inference"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int workers = 0;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "pipeline configuration (JSON)")->required();
  app.add_option("--out", out_dir, "artifact directory (default: $FTBENCH_OUT or ./ftbench-out)");
  app.add_option("--workers", workers, "campaign worker threads (default: $FTBENCH_WORKERS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "override the config seed");

  std::vector<ftb::Stage> stages;
  for (ftb::Stage s : ftb::all_stages()) {
    auto* sub = app.add_subcommand(std::string(ftb::to_string(s)), "run the " + std::string(ftb::to_string(s)) + " stage");
    sub->callback([&stages, s] { stages.push_back(s); });
  }
  app.add_subcommand("all", "run every stage in order")->callback([&stages] { stages = ftb::all_stages(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (out_dir.empty()) {
      const char* env = std::getenv("FTBENCH_OUT");
      out_dir = env != nullptr && *env != '\0' ? env : "ftbench-out";
    }
    if (workers == 0) workers = env_int("FTBENCH_WORKERS", 1);
    if (workers < 1) throw ftb::ConfigError("worker count must be >= 1");

    const ftb::WorkbenchConfig config = ftb::load_config(config_path, seed);
    for (ftb::Stage s : stages) {
      ftb::run_stage(s, config, out_dir, workers);
      std::cerr << ftb::to_string(s) << ": wrote";
      for (const auto& a : ftb::stage_artifacts(s)) std::cerr << ' ' << a;
      std::cerr << " (config " << ftb::hash_hex(config.hash) << ")\n";
    }
  } catch (const ftb::StageError& e) {
    std::cerr << "error: " << e.what() << " [requires stage: " << e.required_stage() << "]\n";
    return ftb::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ftb::exit_code_for(e);
  }
  return 0;
}
