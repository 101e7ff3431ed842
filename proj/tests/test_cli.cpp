#include <catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "asurv/io.hpp"

namespace {

namespace fs = std::filesystem;

struct CliFixture {
  fs::path dir;
  CliFixture() {
    dir = fs::temp_directory_path() / ("asurv_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~CliFixture() { fs::remove_all(dir); }

  std::string file(const std::string& name) const { return (dir / name).string(); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(ASURV_BIN) + " " + args + " >" + file("stdout.txt") +
                            " 2>" + file("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(file(name));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
};

}  // namespace

TEST_CASE("cli: simulate, fit, evaluate pipeline") {
  CliFixture cli;
  REQUIRE(cli.run("simulate --scenario 1 --n 250 --tgap 12 --seed 5 --out " + cli.file("d.jsonl")) ==
          0);
  REQUIRE(fs::exists(cli.file("d.jsonl")));
  REQUIRE(fs::exists(cli.file("d.jsonl.manifest.json")));

  REQUIRE(cli.run("fit " + cli.file("d.jsonl") +
                  " --method osf-i --r 4 --lambda 0.1 --out " + cli.file("rule.json")) == 0);
  const auto rf = asurv::read_rule(cli.file("rule.json"));
  CHECK(rf.rule.coef.size() == 5);  // 4 covariates + log time
  CHECK(rf.meta.at("method") == "osf-i");
  const auto stdout_text = cli.slurp("stdout.txt");
  CHECK(stdout_text.find("lambda:") != std::string::npos);
  CHECK(stdout_text.find("training value:") != std::string::npos);

  for (const std::string ev : {"kr-i", "ipcw", "kr-cs", "oracle"}) {
    REQUIRE(cli.run("evaluate " + cli.file("rule.json") + " " + cli.file("d.jsonl") +
                    " --evaluator " + ev + " --r 4 --out " + cli.file("rep_" + ev + ".csv")) == 0);
    const auto csv = cli.slurp("rep_" + ev + ".csv");
    CHECK(csv.rfind("method,landmark,tau,tpr,tnr,rho,xi,value,ess", 0) == 0);
    CHECK(csv.find(ev + ",avg") != std::string::npos);
  }

  // always-biopsy rule scores TPR 1 under the oracle
  asurv::RuleFile always;
  always.rule.intercept = 5.0;
  always.rule.coef = {0.0, 0.0, 0.0, 0.0, 0.0};
  always.rule.feat_mean.assign(5, 0.0);
  always.rule.feat_sd.assign(5, 1.0);
  always.landmarks = {12.0, 24.0, 36.0, 48.0};
  always.tau = 12.0;
  always.xi.assign(4, 1.0);
  asurv::write_rule(cli.file("always.json"), always);
  REQUIRE(cli.run("evaluate " + cli.file("always.json") + " " + cli.file("d.jsonl") +
                  " --evaluator oracle --xi 1 --out " + cli.file("always.csv")) == 0);
  std::ifstream in(cli.file("always.csv"));
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // method
    std::getline(ss, cell, ',');  // landmark
    std::getline(ss, cell, ',');  // tau
    std::getline(ss, cell, ',');  // tpr
    if (!cell.empty()) {
      CHECK(cell == "1");
      ++rows;
    }
  }
  CHECK(rows >= 1);
}

TEST_CASE("cli: usage errors exit 2") {
  CliFixture cli;
  REQUIRE(cli.run("simulate --scenario 1 --n 60 --tgap 12 --seed 5 --out " + cli.file("d.jsonl")) ==
          0);
  // both --r and --xi
  CHECK(cli.run("fit " + cli.file("d.jsonl") + " --r 4 --xi 1,1,1,1 --out " +
                cli.file("r.json")) == 2);
  // neither
  CHECK(cli.run("fit " + cli.file("d.jsonl") + " --out " + cli.file("r.json")) == 2);
  // missing dataset file
  CHECK(cli.run("fit /no/such/file.jsonl --r 4 --out " + cli.file("r.json")) == 2);
  const auto err = cli.slurp("stderr.txt");
  CHECK(err.find("/no/such/file.jsonl") != std::string::npos);
  // unknown flag
  CHECK(cli.run("fit " + cli.file("d.jsonl") + " --r 4 --bogus 1") == 2);
  // unknown subcommand
  CHECK(cli.run("frobnicate") == 2);
}

TEST_CASE("cli: oracle on truth-less data exits 2, kr-i succeeds") {
  CliFixture cli;
  REQUIRE(cli.run("simulate --scenario 1 --n 200 --tgap 12 --seed 6 --out " + cli.file("d.jsonl")) ==
          0);
  auto data = asurv::read_dataset_jsonl(cli.file("d.jsonl"));
  for (auto& rec : data) rec.truth.reset();
  asurv::write_dataset_jsonl(cli.file("observed.jsonl"), data);

  REQUIRE(cli.run("fit " + cli.file("d.jsonl") + " --method osf-i --r 4 --lambda 0.1 --out " +
                  cli.file("rule.json")) == 0);
  CHECK(cli.run("evaluate " + cli.file("rule.json") + " " + cli.file("observed.jsonl") +
                " --evaluator oracle --r 4 --out " + cli.file("o.csv")) == 2);
  CHECK(cli.run("evaluate " + cli.file("rule.json") + " " + cli.file("observed.jsonl") +
                " --evaluator kr-i --r 4 --out " + cli.file("k.csv")) == 0);
}

TEST_CASE("cli: degenerate estimation exits 3") {
  CliFixture cli;
  REQUIRE(cli.run("simulate --scenario 1 --n 80 --tgap 12 --seed 7 --out " + cli.file("d.jsonl")) ==
          0);
  // landmarks far beyond any biopsy leave every window empty
  CHECK(cli.run("fit " + cli.file("d.jsonl") + " --r 4 --landmarks 500,600 --out " +
                cli.file("r.json")) == 3);
}

TEST_CASE("cli: evaluate with bootstrap emits interval columns") {
  CliFixture cli;
  REQUIRE(cli.run("simulate --scenario 1 --n 150 --tgap 12 --seed 9 --out " + cli.file("d.jsonl")) ==
          0);
  REQUIRE(cli.run("fit " + cli.file("d.jsonl") + " --r 4 --lambda 0.1 --out " +
                  cli.file("rule.json")) == 0);
  REQUIRE(cli.run("evaluate " + cli.file("rule.json") + " " + cli.file("d.jsonl") +
                  " --evaluator oracle --r 4 --bootstrap 20 --seed 3 --out " +
                  cli.file("boot.csv")) == 0);
  const auto csv = cli.slurp("boot.csv");
  CHECK(csv.find("value_lo,value_hi") != std::string::npos);
}

TEST_CASE("cli: compare runs a small experiment end to end") {
  CliFixture cli;
  nlohmann::json cfg;
  cfg["mode"] = "policy-value";
  cfg["scenario"] = 1;
  cfg["n_train"] = 60;
  cfg["n_test"] = 80;
  cfg["tgap"] = 12.0;
  cfg["r_values"] = {4.0};
  cfg["methods"] = {"osf-i"};
  cfg["evaluators"] = {"oracle"};
  cfg["replications"] = 1;
  cfg["seed"] = 21;
  cfg["lambda_grid"] = {0.1};
  std::ofstream(cli.file("cfg.json")) << cfg.dump();
  REQUIRE(cli.run("compare --config " + cli.file("cfg.json") + " --out " + cli.file("exp")) == 0);
  CHECK(fs::exists(cli.file("exp/metrics.csv")));
  CHECK(fs::exists(cli.file("exp/summary.csv")));
  CHECK(fs::exists(cli.file("exp/manifest.json")));
  const auto metrics = cli.slurp("exp/metrics.csv");
  CHECK(metrics.rfind("rep,r,method,evaluator,landmark,tau,tpr,tnr,rho,xi,value,ess", 0) == 0);
  // one row per landmark plus the average
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 1 + 5);

  CHECK(cli.run("compare --config /no/such/cfg.json --out " + cli.file("exp2")) == 2);
}
