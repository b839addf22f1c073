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

// Annotated documents and candidate-instance extraction.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ksm::corpus {

/// Unordered entity pair, stored with the lexicographically smaller id first.
struct EntityPair {
  std::string first;
  std::string second;

  EntityPair() = default;
  EntityPair(std::string a, std::string b);

  auto operator<=>(const EntityPair&) const = default;
};

struct Mention {
  std::string entity_id;
  std::size_t sentence = 0;
  std::size_t start = 0;  // token offsets within the sentence, [start, end)
  std::size_t end = 0;

  bool operator==(const Mention&) const = default;
};

struct Document {
  std::string doc_id;
  std::vector<std::vector<std::string>> sentences;
  std::vector<Mention> mentions;
  std::set<EntityPair> gold_relations;

  std::size_t token_count() const;
};

enum class Label { negative, positive, unlabeled };
enum class Phase { train, test };

const char* to_string(Label label);
Label label_from_string(const std::string& s);
Phase phase_from_string(const std::string& s);

struct CandidateInstance {
  std::string doc_id;
  std::string entity1;  // entity of the earlier focal mention
  std::string entity2;
  std::vector<std::string> tokens;
  std::vector<int> pos1;
  std::vector<int> pos2;
  Label label = Label::unlabeled;

  EntityPair pair() const { return EntityPair(entity1, entity2); }
  std::size_t length() const { return tokens.size(); }
  bool operator==(const CandidateInstance&) const = default;
};

/// Knobs of window construction. Defaults reproduce the standard recipe.
struct WindowRules {
  int expansion = 3;              // context tokens kept on each side
  int max_sentence_distance = 3;  // pairs need |sentence difference| < this
  std::string masked_mention = "gene0";
  std::string number_token = "NUMBER";
  /// Substrings deleted from every token.
  std::vector<std::string> strip_chars = {"*", "†", "‡", "§", "®", "™"};
  /// Tokens dropped when they stand alone.
  std::vector<std::string> drop_tokens = {"(", ")", "[", "]", "{", "}"};
};

/// Integer or decimal with optional sign and trailing percent.
bool is_number_token(const std::string& token);

/// Parses one JSON document record. `source`/`line` locate errors.
/// Structural problems throw FormatError; gold ids without any mention are
/// appended to `warnings`.
Document parse_document(const std::string& json_line, const std::string& source, std::size_t line,
                        std::vector<std::string>* warnings = nullptr);
std::vector<Document> load_corpus(const std::string& path, std::vector<std::string>* warnings = nullptr);
std::vector<Document> read_corpus(std::istream& in, const std::string& source,
                                  std::vector<std::string>* warnings = nullptr);

/// Mention pairs with distinct entities and sentence distance below the
/// limit, in document order of (first start, second start).
std::vector<std::pair<Mention, Mention>> generate_candidate_pairs(const Document& doc,
                                                                  const WindowRules& rules = {});

/// Builds the masked context window. Returns nullopt (and sets `drop_reason`)
/// when nothing survives masking.
std::optional<CandidateInstance> build_context_window(const Document& doc, const Mention& m1, const Mention& m2,
                                                      const WindowRules& rules = {},
                                                      std::string* drop_reason = nullptr);

void assign_labels(std::vector<CandidateInstance>& instances, const std::set<EntityPair>& gold, Phase phase);

/// Pairs, windows and labels for one document. Dropped windows are reported
/// through `dropped`.
std::vector<CandidateInstance> extract_instances(const Document& doc, Phase phase, const WindowRules& rules = {},
                                                 std::vector<std::string>* dropped = nullptr);

/// Instance file: one JSON object per line.
void write_instances(std::ostream& out, const std::vector<CandidateInstance>& instances);
std::vector<CandidateInstance> read_instances(std::istream& in, const std::string& source);

/// Entity id -> distinct mention words observed in the corpus.
std::map<std::string, std::vector<std::string>> mention_lexicon(const std::vector<Document>& docs);

/// doc_id -> gold pairs.
std::map<std::string, std::set<EntityPair>> gold_by_document(const std::vector<Document>& docs);

}  // namespace ksm::corpus
