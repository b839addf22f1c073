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

// ksm: preprocessing, knowledge-base embedding, training, prediction,
// evaluation, ablation and gradient checks from the command line.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ksm/run_config.hpp"

namespace {

const std::map<std::string, std::string> kDescriptions = {
    {"preprocess", "build candidate instances from a corpus"},
    {"train-kb", "train TransE embeddings and export a knowledge store"},
    {"train", "train the relation classifier and write a checkpoint"},
    {"predict", "predict document-level pairs with a checkpoint"},
    {"evaluate", "score predictions against gold relations"},
    {"ablate", "train and score each variant of an ablation grid"},
    {"gradcheck", "run the finite-difference gradient suites"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-selecting relation extraction toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<CLI::App*, std::vector<std::pair<std::string, CLI::Option*>>> options;
  std::map<std::string, std::string> storage;
  for (const auto& k : ksm::cli::run_config_keys()) storage[k.key];

  for (const auto& name : ksm::cli::kSubcommands) {
    CLI::App* sub = app.add_subcommand(name, kDescriptions.at(name));
    sub->add_option("--config", config_path, "flat JSON configuration file");
    for (const auto& k : ksm::cli::run_config_keys()) {
      std::string help = k.help + " (default: " + (k.default_value.empty() ? "none" : k.default_value) + ")";
      options[sub].emplace_back(k.key, sub->add_option("--" + k.key, storage[k.key], help));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "ksm: error: " << e.what() << '\n';
    return 2;
  }

  for (auto& [sub, opts] : options) {
    if (!sub->parsed()) continue;
    ksm::cli::RunConfig config;
    try {
      if (!config_path.empty()) config.load_file(config_path);
      for (const auto& [key, opt] : opts) {
        if (opt->count() > 0) config.set(key, storage[key]);
      }
    } catch (const std::exception& e) {
      std::cerr << "ksm " << sub->get_name() << ": error: " << e.what() << '\n';
      return 2;
    }
    return ksm::cli::run(sub->get_name(), config, std::cout, std::cerr);
  }
  return 2;
}
