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

#pragma once

// Flat run configuration shared by every subcommand, and the subcommand
// dispatcher.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ksm/corpus.hpp"
#include "ksm/knowledge.hpp"
#include "ksm/model.hpp"
#include "ksm/training.hpp"

namespace ksm::cli {

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default and description.
const std::vector<KeySpec>& run_config_keys();

/// Key -> value map. Values are kept as text and parsed by the typed
/// accessors; unknown keys throw ConfigError.
class RunConfig {
 public:
  RunConfig();

  /// Merges a flat JSON object. Strings, numbers and booleans are accepted.
  void merge_json(const nlohmann::json& j, const std::string& source);
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  bool is_set(const std::string& key) const { return explicit_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_seed() const;

  model::ModelConfig model_config() const;
  train::TrainConfig train_config() const;
  kb::TransEConfig transe_config() const;
  corpus::WindowRules window_rules() const;

  /// Parses every typed group; throws ConfigError on the first bad value.
  void validate() const;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

inline const std::vector<std::string> kSubcommands = {"preprocess", "train-kb", "train",    "predict",
                                                      "evaluate",   "ablate",   "gradcheck"};

/// Runs one subcommand. Reports go to `out`, structured log records and
/// diagnostics to `err` unless the config names a log file. Returns the
/// process exit status: 0 success, 1 failed check, 2 usage or config error,
/// 3 malformed input.
int run(const std::string& subcommand, const RunConfig& config, std::ostream& out, std::ostream& err);

/// Ablation grid rows: display name plus key overrides.
struct Variant {
  std::string name;
  std::map<std::string, std::string> overrides;
};
std::vector<Variant> ablation_grid(const std::string& grid);

}  // namespace ksm::cli
