#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Workdir {
  fs::path dir;
  Workdir() {
    dir = fs::temp_directory_path() / ("slalom_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workdir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& stdout_path = "/dev/null", const std::string& env = "") {
  const std::string cmd = env + " " + SLALOM_CLI_PATH + " " + args + " > " + stdout_path + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

// Data rows of a CSV with a leading comment line.
std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& line : lines_of(text)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("gen-data writes the requested records reproducibly") {
  Workdir w;
  REQUIRE(run("gen-data --preset linear --n 1000 --seed 7 --out " + (w / "a.ndjson")) == 0);
  REQUIRE(run("gen-data --preset linear --n 1000 --seed 7 --out " + (w / "b.ndjson")) == 0);
  REQUIRE(run("gen-data --preset linear --n 1000 --seed 8 --out " + (w / "c.ndjson")) == 0);
  const auto a = slurp(w / "a.ndjson");
  CHECK(lines_of(a).size() == 1000);
  CHECK(a == slurp(w / "b.ndjson"));
  CHECK(a != slurp(w / "c.ndjson"));
  for (const auto& line : lines_of(a)) {
    auto j = json::parse(line);
    CHECK(j.contains("ids"));
    CHECK(j.contains("log_odds"));
  }
  auto meta = json::parse(slurp(w / "a.ndjson.meta.json"))["meta"];
  CHECK(meta["seed"] == 7);
  CHECK(meta["version"] == SLALOM_VERSION);
  CHECK(meta["config_hash"].get<std::string>().size() == 16);
  CHECK(slurp(w / "a.ndjson.vocab.txt").rfind("the\nwe\n", 0) == 0);
}

TEST_CASE("slalom preset writes a params sidecar that recover reproduces") {
  Workdir w;
  REQUIRE(run("gen-data --preset slalom --vocab-size 200 --n 50 --seed 3 --out " + (w / "s.ndjson")) == 0);
  auto truth = json::parse(slurp(w / "s.ndjson.params.json"));
  CHECK(truth["s"].size() == 200);
  REQUIRE(run("recover --oracle slalom:" + (w / "s.ndjson.params.json") + " --out " + (w / "r.json")) == 0);
  auto rec = json::parse(slurp(w / "r.json"));
  CHECK(rec["queries"] == 399);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(std::abs(rec["s"][i].get<double>() - truth["s"][i].get<double>()) < 1e-9);
    CHECK(std::abs(rec["v"][i].get<double>() - truth["v"][i].get<double>()) < 1e-9);
  }
}

TEST_CASE("explain emits values matching single-token scores of an analytic oracle") {
  Workdir w;
  const std::string params = w / "p.json";
  std::ofstream(params) << R"({"s":[0.5,-0.5,0.2,1.0],"v":[1.0,-1.0,0.3,-0.2],"gamma":0})";
  REQUIRE(run("explain --oracle slalom:" + params + " --ids 0,1,2,3,0 --seed 4", w / "e1.csv") == 0);
  REQUIRE(run("explain --oracle slalom:" + params + " --ids 0,1,2,3,0 --seed 4", w / "e2.csv") == 0);
  const auto text = slurp(w / "e1.csv");
  CHECK(text == slurp(w / "e2.csv"));
  CHECK(text.rfind("# slalom " SLALOM_VERSION, 0) == 0);
  CHECK(text.find("seed=4") != std::string::npos);
  auto rows = csv_rows(text);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == std::vector<std::string>{"position", "token", "value_v", "importance_s", "linearized", "shapley"});
  const double truth[] = {1.0, -1.0, 0.3, -0.2, 1.0};
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::stod(rows[i + 1][2]) == doctest::Approx(truth[i]).epsilon(1e-6));

  REQUIRE(run("explain --oracle slalom:" + params + " --ids 0,1,2,3,0,1,2,3 --method fidel --samples 2000 --max-del 5",
              w / "f.csv") == 0);
  CHECK(csv_rows(slurp(w / "f.csv")).size() == 9);
}

TEST_CASE("fidel fits on short inputs shrink the default deletion budget but honor an explicit one") {
  Workdir w;
  const std::string params = w / "p.json";
  std::ofstream(params) << R"({"s":[0.5,-0.5,0.2],"v":[1.0,-1.0,0.3],"gamma":0})";
  REQUIRE(run("fit --oracle slalom:" + params + " --ids 0,1,2 --method fidel --samples 300", w / "fit.json") == 0);
  auto j = json::parse(slurp(w / "fit.json"));
  CHECK(j["final_loss"].get<double>() < 1e-4);
  CHECK(j["meta"]["config"]["max_del"].is_null());
  CHECK(run("fit --oracle slalom:" + params + " --ids 0,1,2 --method fidel --max-del 3") == 2);
}

TEST_CASE("explain through the wire protocol matches the in-process oracle") {
  Workdir w;
  const std::string params = w / "p.json";
  std::ofstream(params) << R"({"s":[0.5,-0.5,0.2],"v":[1.0,-1.0,0.3],"gamma":0})";
  const std::string remote = std::string("\"exec:") + STUB_MODEL_PATH + " --kind slalom --params " + params + "\"";
  REQUIRE(run("explain --oracle " + remote + " --ids 0,1,2,1 --steps 2000", w / "wire.csv") == 0);
  REQUIRE(run("explain --oracle slalom:" + params + " --ids 0,1,2,1 --steps 2000", w / "local.csv") == 0);
  CHECK(csv_rows(slurp(w / "wire.csv")) == csv_rows(slurp(w / "local.csv")));
}

TEST_CASE("verify-theory passes and reports json") {
  Workdir w;
  REQUIRE(run("verify-theory --draws 30 --report json --seed 5", w / "v.json") == 0);
  auto j = json::parse(slurp(w / "v.json"));
  CHECK(j["pass"] == true);
  CHECK(j["suites"].size() == 3);
  CHECK(j["meta"]["seed"] == 5);
}

TEST_CASE("eval emits long-format curves and a summary") {
  Workdir w;
  REQUIRE(run("gen-model --vocab-size 30 --d 8 --d-head 4 --heads 2 --seed 1 --out " + (w / "m.json")) == 0);
  REQUIRE(run("eval --oracle microformer:" + (w / "m.json") +
                  " --n 2 --length 15 --max-k 4 --trials 5 --aopc-k 5 --samples 300 --iters 3"
                  " --methods fidel,linear --seed 2 --summary " + (w / "sum.csv"),
              w / "curves.csv") == 0);
  auto rows = csv_rows(slurp(w / "curves.csv"));
  REQUIRE(!rows.empty());
  CHECK(rows[0] == std::vector<std::string>{"metric", "method", "k", "value"});
  std::size_t fidelity_rows = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][0] == "fidelity") ++fidelity_rows;
  }
  CHECK(fidelity_rows == 8);
  auto summary = csv_rows(slurp(w / "sum.csv"));
  CHECK(summary[0] == std::vector<std::string>{"metric", "method", "value", "inputs"});
}

TEST_CASE("exit codes") {
  Workdir w;
  CHECK(run("explain --ids 1") == 2);
  CHECK(run("gen-data --preset nonsense --out " + (w / "x")) == 2);
  CHECK(run("recover --oracle slalom:" + (w / "missing.json")) == 2);
  CHECK(run("explain --oracle exec:/nonexistent/model --ids 1") == 3);
  CHECK(run("recover --oracle tcp:127.0.0.1:1 --vocab-size 3") == 3);
  const std::string silent = std::string("\"exec:") + STUB_MODEL_PATH + " --kind silent\"";
  CHECK(run("recover --vocab-size 3 --oracle " + silent, "/dev/null", "SLALOM_ORACLE_TIMEOUT_MS=200") == 3);
}
