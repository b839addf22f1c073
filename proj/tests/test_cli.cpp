// Copyright 2026 The KSM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ksm/errors.hpp"
#include "ksm/run_config.hpp"

using namespace ksm;
using namespace ksm::cli;
namespace fs = std::filesystem;

namespace {

std::string data_path(const std::string& name) { return std::string(KSM_TEST_DATA) + "/" + name; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

RunConfig small(const Scratch& s) {
  RunConfig c;
  c.set("d", "8");
  c.set("n_heads", "2");
  c.set("d_kb", "8");
  c.set("max_epochs", "2");
  c.set("kb_epochs", "10");
  c.set("log", s / "log.jsonl");
  return c;
}

struct Outcome {
  int status;
  std::string out;
  std::string err;
};

Outcome run_cmd(const std::string& sub, const RunConfig& c) {
  std::ostringstream out, err;
  int status = run(sub, c, out, err);
  return {status, out.str(), err.str()};
}

}  // namespace

TEST_CASE("every key has a default and unknown keys are rejected") {
  RunConfig c;
  for (const auto& k : run_config_keys()) {
    CHECK_FALSE(k.help.empty());
    CHECK(c.get(k.key) == k.default_value);
  }
  CHECK_THROWS_AS(c.set("nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(c.merge_json(nlohmann::json{{"nonsense", 1}}, "cfg"), ConfigError);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("defaults resolve to the documented model and training settings") {
  RunConfig c;
  auto m = c.model_config();
  CHECK(m.d == 100);
  CHECK(m.n_heads == 4);
  CHECK(m.d_head == 25);
  CHECK(m.n_blocks == 2);
  auto t = c.train_config();
  CHECK(t.lr == 0.02);
  CHECK(t.batch_size == 64);
  CHECK(t.rho == 0.95);
  CHECK(t.eps == 1e-6);
}

TEST_CASE("flags override the config file, which overrides defaults") {
  Scratch s("ksm_cli_precedence");
  {
    std::ofstream f(s / "cfg.json");
    f << R"({"lr": 0.5, "batch_size": 16, "shared_encoder": true, "pooling": "max"})";
  }
  RunConfig c;
  c.load_file(s / "cfg.json");
  c.set("lr", "0.25");
  CHECK(c.get_double("lr") == 0.25);
  CHECK(c.get_int("batch_size") == 16);
  CHECK(c.get_bool("shared_encoder"));
  CHECK(c.get("pooling") == "max");
  CHECK(c.get_int("patience") == 5);
  CHECK(c.is_set("lr"));
  CHECK_FALSE(c.is_set("patience"));
}

TEST_CASE("bad values fail validation before any work") {
  RunConfig c;
  c.set("batch_size", "ten");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  RunConfig d;
  d.set("selector_op", "product");
  CHECK_THROWS_AS(d.validate(), ConfigError);
  RunConfig e;
  e.set("heldout_fraction", "1.5");
  CHECK_THROWS_AS(e.validate(), ConfigError);
  RunConfig f;
  f.set("seed", "-3");
  CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("ablation grids have the expected rows") {
  CHECK(ablation_grid("selector").size() == 6);
  CHECK(ablation_grid("selector_full").size() == 9);
  CHECK(ablation_grid("target").size() == 4);
  CHECK(ablation_grid("architecture").size() == 6);
  CHECK(ablation_grid("all").size() == 19);
  CHECK_THROWS_AS(ablation_grid("everything"), ConfigError);
  std::set<std::pair<std::string, std::string>> cells;
  for (const auto& v : ablation_grid("selector")) cells.emplace(v.overrides.at("selector_op"), v.overrides.at("selector_activation"));
  CHECK(cells.size() == 6);
}

TEST_CASE("missing inputs exit nonzero with one diagnostic line") {
  Scratch s("ksm_cli_missing");
  RunConfig c = small(s);
  auto r = run_cmd("train", c);
  CHECK(r.status == 2);
  CHECK(r.err.find("needs --corpus") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  c.set("corpus", s / "absent.jsonl");
  c.set("out", s / "model.json");
  r = run_cmd("train", c);
  CHECK(r.status == 2);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  CHECK(run_cmd("dance", RunConfig{}).status == 2);
}

TEST_CASE("malformed inputs report the line number") {
  Scratch s("ksm_cli_malformed");
  {
    std::ofstream f(s / "bad.jsonl");
    f << slurp(data_path("toy_corpus.jsonl")) << "{\"doc_id\": 3}\n";
  }
  RunConfig c = small(s);
  c.set("corpus", s / "bad.jsonl");
  c.set("out", s / "inst.jsonl");
  auto r = run_cmd("preprocess", c);
  CHECK(r.status == 3);
  CHECK(r.err.find(":4") != std::string::npos);
}

TEST_CASE("preprocess is byte-stable and leaves its input alone") {
  Scratch s("ksm_cli_preprocess");
  const std::string before = slurp(data_path("toy_corpus.jsonl"));
  RunConfig c = small(s);
  c.set("corpus", data_path("toy_corpus.jsonl"));
  c.set("out", s / "a.jsonl");
  REQUIRE(run_cmd("preprocess", c).status == 0);
  c.set("out", s / "b.jsonl");
  REQUIRE(run_cmd("preprocess", c).status == 0);
  CHECK(slurp(s / "a.jsonl") == slurp(s / "b.jsonl"));
  CHECK(slurp(s / "a.jsonl") == slurp(data_path("toy_instances.golden.jsonl")));
  CHECK(slurp(data_path("toy_corpus.jsonl")) == before);
  c.set("out", data_path("toy_corpus.jsonl"));
  CHECK(run_cmd("preprocess", c).status == 2);
  CHECK(slurp(data_path("toy_corpus.jsonl")) == before);
}

TEST_CASE("evaluate on gold predictions reports 100 percent") {
  Scratch s("ksm_cli_evaluate");
  RunConfig c = small(s);
  c.set("predictions", data_path("toy_gold_predictions.tsv"));
  c.set("gold", data_path("toy_corpus.jsonl"));
  auto r = run_cmd("evaluate", c);
  REQUIRE(r.status == 0);
  CHECK(r.out.find("precision: 100.00\nrecall: 100.00\nf1: 100.00\n") != std::string::npos);
}

TEST_CASE("train-kb, train, predict and evaluate chain and rerun identically") {
  Scratch s("ksm_cli_pipeline");
  RunConfig c = small(s);
  c.set("triples", data_path("toy_triples.tsv"));
  c.set("corpus", data_path("toy_corpus.jsonl"));
  c.set("out", s / "kb");
  REQUIRE(run_cmd("train-kb", c).status == 0);
  CHECK(fs::exists(s / "kb.entities.txt"));
  CHECK(fs::exists(s / "kb.relations.txt"));

  c.set("kb", s / "kb");
  c.set("out", s / "model.json");
  REQUIRE(run_cmd("train", c).status == 0);
  c.set("out", s / "model2.json");
  REQUIRE(run_cmd("train", c).status == 0);
  CHECK(slurp(s / "model.json") == slurp(s / "model2.json"));
  std::istringstream log(slurp(s / "log.jsonl"));
  std::string line;
  int records = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("schema") == 1);
    CHECK(j.at("command") == "train");
    ++records;
  }
  CHECK(records > 2);

  RunConfig p = small(s);
  p.set("checkpoint", s / "model.json");
  p.set("corpus", data_path("toy_corpus.jsonl"));
  p.set("kb", s / "kb");
  p.set("triples", data_path("toy_triples.tsv"));
  p.set("out", s / "pred.tsv");
  REQUIRE(run_cmd("predict", p).status == 0);
  p.set("out", s / "pred2.tsv");
  REQUIRE(run_cmd("predict", p).status == 0);
  CHECK(slurp(s / "pred.tsv") == slurp(s / "pred2.tsv"));

  RunConfig e = small(s);
  e.set("predictions", s / "pred.tsv");
  e.set("gold", data_path("toy_corpus.jsonl"));
  e.set("out", s / "report.txt");
  REQUIRE(run_cmd("evaluate", e).status == 0);
  CHECK(slurp(s / "report.txt").rfind("schema: 1\nprecision: ", 0) == 0);

  RunConfig wrong = p;
  wrong.set("d", "16");
  wrong.set("out", s / "pred3.tsv");
  auto r = run_cmd("predict", wrong);
  CHECK(r.status == 2);
  CHECK(r.err.find("config differs") != std::string::npos);
}

TEST_CASE("ablate prints one row per variant") {
  Scratch s("ksm_cli_ablate");
  RunConfig c = small(s);
  c.set("corpus", data_path("toy_corpus.jsonl"));
  c.set("test_corpus", data_path("toy_corpus.jsonl"));
  c.set("max_epochs", "1");
  auto r = run_cmd("ablate", c);
  REQUIRE(r.status == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 7);
  CHECK(r.out.rfind("variant\tprecision\trecall\tf1\n", 0) == 0);
  CHECK(r.out.find("KSM(sum) sigmoid\t") != std::string::npos);
}

TEST_CASE("gradcheck reports PASS with the largest relative error") {
  Scratch s("ksm_cli_gradcheck");
  RunConfig c = small(s);
  c.set("gradcheck_variants", "false");
  auto r = run_cmd("gradcheck", c);
  CHECK(r.status == 0);
  CHECK(r.out.find("\nPASS ") != std::string::npos);
  CHECK(r.out.find("max_rel_error=") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}
