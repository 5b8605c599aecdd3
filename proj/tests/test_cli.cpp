#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MMOU_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mmou_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

std::vector<std::vector<double>> numeric_rows(const std::string& csv) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

const std::string kData = MMOU_TEST_DATA;

}  // namespace

TEST_CASE("moments output matches the frozen table") {
  const fs::path dir = scratch("moments");
  REQUIRE(run_cli("moments --config " + kData + "/model_a.json --out " + dir.string()) == 0);
  const std::string got = slurp(dir / "moments.csv");
  const std::string want = slurp(kData + "/moments_model_a.csv");
  CHECK(got.substr(0, got.find('\n')) == want.substr(0, want.find('\n')));
  const auto a = numeric_rows(got);
  const auto b = numeric_rows(want);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].size() == b[i].size());
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      CHECK(std::abs(a[i][j] - b[i][j]) <= 1e-13 * std::max(1.0, std::abs(b[i][j])));
    }
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["status"] == "ok");
  CHECK(manifest["command"] == "moments");
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["outputs"].size() >= 2);
}

TEST_CASE("simulate output is identical across thread counts") {
  const fs::path dir = scratch("threads");
  const fs::path cfg = write(dir, R"({
    "command": "simulate", "seed": 3, "n_paths": 3000, "times": [0.5, 1],
    "model": {"generator": [[-1, 1], [2, -2]], "alpha": [1, 3], "gamma": [1, 1], "sigma2": [0.5, 2]}
  })");
  REQUIRE(run_cli("simulate --config " + cfg.string() + " --threads 1 --out " + (dir / "a").string()) ==
          0);
  REQUIRE(run_cli("simulate --config " + cfg.string() + " --threads 4 --out " + (dir / "b").string()) ==
          0);
  for (const char* f : {"paths.csv", "simulate_summary.csv"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  CHECK(run_cli("simulate --config " + cfg.string() + " --seed 4 --threads 2 --out " +
                (dir / "c").string()) == 0);
  CHECK(slurp(dir / "a" / "paths.csv") != slurp(dir / "c" / "paths.csv"));
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit");
  const fs::path reducible = write(dir, R"({
    "command": "validate", "seed": 1,
    "model": {"generator": [[-1, 1], [0, 0]], "alpha": [1, 3], "gamma": [1, 1], "sigma2": [0.5, 2]}
  })");
  CHECK(run_cli("validate --config " + reducible.string() + " --out " + dir.string()) == 2);

  const fs::path broken = dir / "broken.json";
  std::ofstream(broken) << "{ \"seed\": ";
  CHECK(run_cli("moments --config " + broken.string() + " --out " + dir.string()) == 2);

  const fs::path unstable = dir / "unstable.json";
  std::ofstream(unstable) << R"({
    "command": "simulate", "seed": 1, "simulate": {"method": "euler", "dt": 0.9},
    "model": {"generator": [[-1, 1], [2, -2]], "alpha": [1, 3], "gamma": [1, 1], "sigma2": [0.5, 2]}
  })";
  const fs::path out3 = dir / "numerical";
  CHECK(run_cli("simulate --config " + unstable.string() + " --out " + out3.string()) == 3);
  const auto manifest = nlohmann::json::parse(slurp(out3 / "manifest.json"));
  CHECK(manifest["status"] == "numerical_error");

  CHECK(run_cli("validate --config " + (kData + "/model_a.json") + " --out " + dir.string()) == 0);
  CHECK(run_cli("validate") == 2);
  CHECK(run_cli("moments --config " + (kData + "/model_a.json") + " --threads 0") == 2);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("emit-config prints the canonical form") {
  const fs::path dir = scratch("emit");
  const std::string cmd = std::string("\"") + MMOU_CLI_PATH + "\" emit-config --config " + kData +
                          "/model_a.json > " + (dir / "once.json").string();
  REQUIRE(std::system(cmd.c_str()) == 0);
  const std::string cmd2 = std::string("\"") + MMOU_CLI_PATH + "\" emit-config --config " +
                           (dir / "once.json").string() + " > " + (dir / "twice.json").string();
  REQUIRE(std::system(cmd2.c_str()) == 0);
  CHECK(slurp(dir / "once.json") == slurp(dir / "twice.json"));
  CHECK(!slurp(dir / "once.json").empty());
}
