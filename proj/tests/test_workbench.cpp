#include "ftbench/errors.hpp"
#include "ftbench/workbench.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <functional>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ftb;
namespace fs = std::filesystem;

namespace {

nlohmann::json small_config() {
  return nlohmann::json::parse(R"({
    "seed": 3,
    "model": {"blocks": 1, "dim": 8, "tokens": 4, "classes": 5, "seed": 7, "dtype": "binary16"},
    "dataset": {"seed": 11, "size": 60, "held_out_size": 40},
    "campaign": {"n_per_layer": 20},
    "guard": {"confidence": 0.9999, "precision": "binary64", "target_coverage": 0.9},
    "evaluate": {"n_per_layer": 10}
  })");
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ftbench_wb_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int exit_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace

TEST_CASE("config defaults and hashing") {
  const auto c = parse_config(nlohmann::json::object());
  CHECK(c.seed == 1);
  CHECK(c.dtype == DType::binary16);
  CHECK(c.held_out_seed == c.dataset_seed + 1);
  CHECK(c.canonical.contains("guard"));
  CHECK(hash_hex(c.hash).size() == 16);
  CHECK(c.hash == config_hash(c.canonical));

  const auto a = parse_config(small_config());
  const auto b = parse_config(small_config());
  CHECK(a.hash == b.hash);
  CHECK(parse_config(small_config(), 4).hash != a.hash);
  CHECK(parse_config(small_config(), 4).seed == 4);

  // reference FNV-1a 64, pinned to published test vectors
  auto fnv = [](const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ull;
    return h;
  };
  CHECK(fnv("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv("foobar") == 0x85944171f73967e8ull);
  CHECK(config_hash(c.canonical) == fnv(c.canonical.dump()));
  CHECK(hash_hex(0xcbf29ce484222325ull) == "cbf29ce484222325");
  CHECK(hash_hex(0xfull) == "000000000000000f");
}

TEST_CASE("config errors exit with status 2") {
  const std::vector<std::string> bad{
      R"({"bogus": 1})",
      R"({"model": {"dim": 6}})",
      R"({"model": {"dtype": "int4"}})",
      R"({"model": {"blocks": "two"}})",
      R"({"guard": {"confidence": 1.5}})",
      R"({"guard": {"target_coverage": 0}})",
      R"({"guard": {"precision": "int64_exact"}})",
      R"({"campaign": {"modes": ["fixed_value"]}})",
      R"({"campaign": {"locations": []}})",
      R"({"correction": {"kind": "pray"}})",
      R"({"dataset": {"seed": 5, "held_out_seed": 5}})",
      R"({"model": {"source": "file"}})",
  };
  for (const auto& text : bad) {
    CAPTURE(text);
    CHECK_THROWS_AS(parse_config(nlohmann::json::parse(text)), ConfigError);
    CHECK(exit_code_of([&] { parse_config(nlohmann::json::parse(text)); }) == 2);
  }
  CHECK(exit_code_of([] { load_config("/nonexistent/config.json"); }) == 2);
}

TEST_CASE("exit codes by error type") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(StageError("profile", "x")) == 3);
  CHECK(exit_code_for(NumericalError("x")) == 4);
  CHECK(exit_code_for(CorrectionError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("stages refuse to run before their inputs exist") {
  const auto c = parse_config(small_config());
  const auto out = fresh_dir("order");
  try {
    run_stage(Stage::evaluate, c, out);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.required_stage() == "profile");
    CHECK(exit_code_for(e) == 3);
  }
  run_stage(Stage::profile, c, out);
  run_stage(Stage::inject, c, out);
  run_stage(Stage::analyze, c, out);
  // evaluate needs calibrate
  try {
    run_stage(Stage::evaluate, c, out);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.required_stage() == "calibrate");
  }

  // artifacts of another config are stale
  const auto other = parse_config(small_config(), 99);
  try {
    run_stage(Stage::analyze, other, out);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(std::string(e.what()).find("config hash") != std::string::npos);
  }
  fs::remove_all(out);
}

TEST_CASE("analysis curves are monotone") {
  const auto c = parse_config(small_config());
  const auto out = fresh_dir("curves");
  run_stage(Stage::profile, c, out);
  run_stage(Stage::inject, c, out);
  run_stage(Stage::analyze, c, out);
  for (const std::string name : {"curve_checksum.csv", "curve_duplication.csv"}) {
    std::istringstream in(slurp(out / name));
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("# config_hash=" + hash_hex(c.hash) + ",seed=3", 0) == 0);
    std::getline(in, line);
    CHECK(line == "overhead,coverage,layer");
    double prev_x = -1, prev_y = -1, last_y = 0;
    int rows = 0;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string a, b;
      std::getline(row, a, ',');
      std::getline(row, b, ',');
      const double x = std::stod(a), y = std::stod(b);
      CHECK(x >= prev_x);
      CHECK(y >= prev_y);
      prev_x = x, prev_y = y, last_y = y;
      ++rows;
    }
    CHECK(rows >= 2);
    CHECK(last_y == 1.0);
  }
  fs::remove_all(out);
}

TEST_CASE("pipeline is deterministic and complete") {
  const auto c = parse_config(small_config());
  const auto a = fresh_dir("det_a");
  const auto b = fresh_dir("det_b");
  run_pipeline(c, a, 1);
  run_pipeline(c, b, 2);
  for (Stage s : all_stages())
    for (const auto& name : stage_artifacts(s)) {
      CAPTURE(name);
      REQUIRE(fs::exists(a / name));
      CHECK(slurp(a / name) == slurp(b / name));
    }
  const auto report = nlohmann::json::parse(slurp(a / "report.json"));
  for (const char* key : {"vulnerability", "selective_protection", "detection", "correction"})
    CHECK(report.contains(key));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("command line exit codes") {
  const auto dir = fresh_dir("cli");
  {
    std::ofstream(dir / "bad.json") << R"({"bogus": true})";
    std::ofstream(dir / "good.json") << small_config().dump();
  }
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(FTBENCH_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  const std::string out = " --out " + (dir / "out").string();
  CHECK(run("--config " + (dir / "bad.json").string() + out + " profile") == 2);
  CHECK(run("--config " + (dir / "good.json").string() + out + " evaluate") == 3);
  CHECK(run("--config " + (dir / "good.json").string() + out + " profile") == 0);
  CHECK(fs::exists(dir / "out" / "ranges.json"));
  fs::remove_all(dir);
}
