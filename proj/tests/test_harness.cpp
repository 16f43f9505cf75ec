#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "freelab/harness.hpp"
#include "freelab/nclaw.hpp"

using namespace freelab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("freelab_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

int run(const fs::path& config, const fs::path& out, int threads = 1, std::string format = "csv") {
  RunOptions o;
  o.config_path = config.string();
  o.out_dir = out.string();
  o.threads = threads;
  o.format = std::move(format);
  return run_command(o);
}

}  // namespace

TEST_CASE("number formatting and hashing") {
  CHECK(format_number(0.1) == "0.10000000000000001");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(format_number(-INFINITY) == "-inf");
  CHECK(fnv1a("") == 14695981039346656037ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("every kind has a fixed header") {
  for (const std::string& k : experiment_kinds()) CHECK(!csv_header(k).empty());
  CHECK(csv_header("sweep") == std::vector<std::string>{"K", "N", "R", "n", "value", "stderr", "abs_diff_prev"});
  CHECK_THROWS_AS(csv_header("nope"), ConfigError);
}

TEST_CASE("experiment validation happens before work") {
  CHECK_THROWS_AS(Experiment::parse(R"({"kind": "spectrum", "n": [0]})", 0), ConfigError);
  CHECK_THROWS_AS(Experiment::parse(R"({"kind": "spectrum", "typo": 1})", 0), ConfigError);
  CHECK_THROWS_AS(Experiment::parse(R"({"kind": "unknown"})", 0), ConfigError);
  CHECK_THROWS_AS(Experiment::parse(R"({"kind": "laplacian-check", "n": [40], "d": 3})", 0), ConfigError);
  CHECK_THROWS_AS(Experiment::parse(R"({"kind": "value", "problem": {"beta_c": 0.5}, "policy": {"K": 8, "N": 4}})", 0),
                  ConfigError);
  CHECK_THROWS_AS(Experiment::parse(R"({"kind": "sweep", "grid": [[3, 2], [4, 2]]})", 0), ConfigError);
  const Experiment e = Experiment::parse(R"({"kind": "gaussdisc-check"})", 3);
  CHECK(e.name() == "gaussdisc-check_3");
}

TEST_CASE("empty experiment list") {
  TempDir dir("empty");
  CHECK(run(write_config(dir.path, R"({"experiments": []})"), dir.path / "out") == 0);
  const auto m = nlohmann::json::parse(slurp(dir.path / "out" / "manifest.json"));
  CHECK(m["experiments"].empty());
}

TEST_CASE("exit codes") {
  TempDir dir("codes");
  CHECK(run(dir.path / "missing.json", dir.path / "out") == 1);
  CHECK(run(write_config(dir.path, "{not json"), dir.path / "out") == 1);
  CHECK(run(write_config(dir.path, R"({"experiments": [{"kind": "spectrum", "n": [-1]}]})"), dir.path / "out") == 1);
  std::ofstream(dir.path / "blocker") << "x";
  CHECK(run(write_config(dir.path, R"({"experiments": []})"), dir.path / "blocker" / "sub") == 3);
  const std::string numerical = R"({"experiments": [{"kind": "gaussdisc-check", "N": 8, "delta": 1e-4}]})";
  CHECK(run(write_config(dir.path, numerical), dir.path / "num") == 2);
}

TEST_CASE("output directory precedence") {
  TempDir dir("precedence");
  const fs::path cfg = write_config(dir.path, R"({"output_dir": ")" + (dir.path / "from_config").string() +
                                                  R"(", "experiments": []})");
  RunOptions o;
  o.config_path = cfg.string();
  CHECK(run_command(o) == 0);
  CHECK(fs::exists(dir.path / "from_config" / "manifest.json"));
  setenv("FREELAB_OUT_DIR", (dir.path / "from_env").string().c_str(), 1);
  CHECK(run_command(o) == 0);
  CHECK(fs::exists(dir.path / "from_env" / "manifest.json"));
  o.out_dir = (dir.path / "from_flag").string();
  CHECK(run_command(o) == 0);
  CHECK(fs::exists(dir.path / "from_flag" / "manifest.json"));
  unsetenv("FREELAB_OUT_DIR");
}

TEST_CASE("small experiments produce declared CSVs and a summary") {
  TempDir dir("kinds");
  const std::string cfg = R"({
    "seed": 5,
    "experiments": [
      {"name": "spec", "kind": "spectrum", "n": [32], "samples": 3, "norm_samples": 3, "tol": 0.5},
      {"name": "free", "kind": "freeness", "n": [4, 16], "samples": 10},
      {"name": "lap", "kind": "laplacian-check", "instances": 4},
      {"name": "gd", "kind": "gaussdisc-check", "N": 2, "delta": 0.25},
      {"name": "trunc", "kind": "truncation-check", "instances": 5},
      {"name": "val", "kind": "value", "n": [3], "problem": {"beta_c": 0.5, "beta_f": 1}, "reference": "lq",
       "policy": {"K": 2, "N": 1}, "optimizer": {"train_samples": 8, "validation_samples": 16, "max_iterations": 5},
       "write_logs": true},
      {"name": "sw", "kind": "sweep", "n": 3, "grid": [[1, 2], [2, 4]],
       "problem": {"beta_f": 1, "cost": {"template": "quartic"}},
       "optimizer": {"train_samples": 8, "validation_samples": 16, "max_iterations": 5}},
      {"name": "ld", "kind": "ldp", "n": [3], "lhs_samples": 50, "steps": 2,
       "psi": {"terminal": {"outer": "0.5*u1", "inners": ["x1^2"]}},
       "optimizer": {"train_samples": 8, "validation_samples": 16, "max_iterations": 5}}
    ]})";
  CHECK(run(write_config(dir.path, cfg), dir.path / "out") == 0);
  const fs::path out = dir.path / "out";
  for (const auto& [file, kind] : std::vector<std::pair<std::string, std::string>>{
           {"spec", "spectrum"}, {"free", "freeness"}, {"lap", "laplacian-check"}, {"gd", "gaussdisc-check"},
           {"trunc", "truncation-check"}, {"val", "value"}, {"sw", "sweep"}, {"ld", "ldp"}}) {
    std::ifstream in(out / (file + ".csv"));
    std::string header;
    std::getline(in, header);
    std::string expected;
    for (const auto& h : csv_header(kind)) expected += (expected.empty() ? "" : ",") + h;
    CHECK(header == expected);
  }
  CHECK(fs::exists(out / "val_iterations_n3.csv"));
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  CHECK(summary["experiments"].size() == 8);
  CHECK(summary["experiments"][3]["checks"]["unit_mass"] == true);
  CHECK(summary["experiments"][6]["checks"].contains("monotone_decay"));
}

TEST_CASE("determinism across worker counts and resume") {
  TempDir dir("determinism");
  const std::string cfg = R"({
    "seed": 9,
    "experiments": [
      {"name": "spec", "kind": "spectrum", "n": [24], "samples": 4},
      {"name": "val", "kind": "value", "n": [3], "problem": {"beta_c": 0.5, "beta_f": 1},
       "policy": {"K": 2, "N": 1}, "optimizer": {"train_samples": 16, "validation_samples": 32, "max_iterations": 8}}
    ]})";
  const fs::path c = write_config(dir.path, cfg);
  CHECK(run(c, dir.path / "one", 1) == 0);
  CHECK(run(c, dir.path / "eight", 8) == 0);
  CHECK(slurp(dir.path / "one" / "spec.csv") == slurp(dir.path / "eight" / "spec.csv"));
  CHECK(slurp(dir.path / "one" / "val.csv") == slurp(dir.path / "eight" / "val.csv"));

  const std::string manifest = slurp(dir.path / "one" / "manifest.json");
  const auto before = fs::last_write_time(dir.path / "one" / "val.csv");
  CHECK(run(c, dir.path / "one", 1) == 0);
  CHECK(slurp(dir.path / "one" / "manifest.json") == manifest);
  CHECK(fs::last_write_time(dir.path / "one" / "val.csv") == before);

  RunOptions o;
  o.config_path = c.string();
  o.out_dir = (dir.path / "one").string();
  o.seed = 10;
  CHECK(run_command(o) == 0);
  CHECK(slurp(dir.path / "one" / "manifest.json") != manifest);
}

TEST_CASE("json format") {
  TempDir dir("json");
  const fs::path c = write_config(dir.path, R"({"experiments": [{"name": "g", "kind": "gaussdisc-check", "N": 1}]})");
  CHECK(run(c, dir.path / "out", 1, "json") == 0);
  const auto t = nlohmann::json::parse(slurp(dir.path / "out" / "g.json"));
  CHECK(t["rows"].size() == 4);
  CHECK(t["columns"][0] == "j");
  CHECK(run(c, dir.path / "out", 1, "xml") == 1);
}

TEST_CASE("acceptance decision rules catch sabotage") {
  CHECK(semicircle_rule({1.0, 2.0, 5.0, 14.0}).pass);
  // Doubling the GUE scales tr S^2k by 4^k.
  CHECK_FALSE(semicircle_rule({4.0, 32.0, 320.0, 3584.0}).pass);
  CHECK(operator_norm_rule(2.0).pass);
  CHECK_FALSE(operator_norm_rule(4.0).pass);
  CHECK(freeness_rule({0.1, 0.03, 0.01}).pass);
  CHECK_FALSE(freeness_rule({0.1, 0.03, 0.04}).pass);
  CHECK_FALSE(freeness_rule({0.3, 0.2, 0.06}).pass);

  const RngStream rng(7);
  std::vector<double> doubled(4, 0.0);
  for (int s = 0; s < 5; ++s) {
    RngStream r = rng.split(s);
    const RVector ev = eigenvalues(sample_gue(128, r) * 2.0);
    for (int k = 1; k <= 4; ++k) doubled[k - 1] += ev.array().pow(2 * k).mean() / 5;
  }
  CHECK(doubled[0] == doctest::Approx(4.0).epsilon(0.05));
  CHECK_FALSE(semicircle_rule(doubled).pass);
}
