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

#include "ksm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <regex>

#include "json.hpp"
#include "ksm/errors.hpp"

namespace ksm::corpus {

using nlohmann::json;

EntityPair::EntityPair(std::string a, std::string b) {
  if (b < a) std::swap(a, b);
  first = std::move(a);
  second = std::move(b);
}

std::size_t Document::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

const char* to_string(Label label) {
  switch (label) {
    case Label::positive: return "positive";
    case Label::negative: return "negative";
    case Label::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

Label label_from_string(const std::string& s) {
  if (s == "positive") return Label::positive;
  if (s == "negative") return Label::negative;
  if (s == "unlabeled") return Label::unlabeled;
  throw UsageError("unknown label: " + s);
}

Phase phase_from_string(const std::string& s) {
  if (s == "train") return Phase::train;
  if (s == "test") return Phase::test;
  throw UsageError("phase must be train or test, got " + s);
}

bool is_number_token(const std::string& token) {
  static const std::regex number(R"(^[+-]?(\d+(\.\d*)?|\.\d+)%?$)");
  return std::regex_match(token, number);
}

Document parse_document(const std::string& json_line, const std::string& source, std::size_t line,
                        std::vector<std::string>* warnings) {
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw FormatError(source, line, std::string("invalid JSON: ") + e.what());
  }
  Document doc;
  try {
    doc.doc_id = j.at("doc_id").get<std::string>();
    doc.sentences = j.at("sentences").get<std::vector<std::vector<std::string>>>();
    for (const auto& m : j.at("mentions")) {
      Mention mention;
      mention.entity_id = m.at("entity_id").get<std::string>();
      mention.sentence = m.at("sentence").get<std::size_t>();
      auto span = m.at("token_span").get<std::vector<std::size_t>>();
      if (span.size() != 2) throw FormatError(source, line, "token_span must have two entries");
      mention.start = span[0];
      mention.end = span[1];
      doc.mentions.push_back(std::move(mention));
    }
    if (j.contains("gold_relations")) {
      for (const auto& r : j.at("gold_relations")) {
        auto ids = r.get<std::vector<std::string>>();
        if (ids.size() != 2) throw FormatError(source, line, "gold relation must pair two entity ids");
        if (ids[0] == ids[1]) {
          if (warnings) warnings->push_back(doc.doc_id + ": ignoring self-relation " + ids[0]);
          continue;
        }
        doc.gold_relations.emplace(ids[0], ids[1]);
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(source, line, std::string("bad document record: ") + e.what());
  }
  if (doc.doc_id.empty()) throw FormatError(source, line, "empty doc_id");
  std::set<std::string> mentioned;
  for (const Mention& m : doc.mentions) {
    if (m.entity_id.empty()) throw FormatError(source, line, "mention with empty entity_id");
    if (m.sentence >= doc.sentences.size()) {
      throw FormatError(source, line, "mention sentence index " + std::to_string(m.sentence) + " out of range");
    }
    if (!(m.start < m.end) || m.end > doc.sentences[m.sentence].size()) {
      throw FormatError(source, line,
                        "mention span [" + std::to_string(m.start) + ", " + std::to_string(m.end) +
                            ") invalid for sentence " + std::to_string(m.sentence));
    }
    mentioned.insert(m.entity_id);
  }
  for (const EntityPair& p : doc.gold_relations) {
    for (const std::string* id : {&p.first, &p.second}) {
      if (!mentioned.count(*id) && warnings) {
        warnings->push_back(doc.doc_id + ": gold entity " + *id + " has no mention");
      }
    }
  }
  return doc;
}

std::vector<Document> read_corpus(std::istream& in, const std::string& source, std::vector<std::string>* warnings) {
  std::vector<Document> docs;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Document d = parse_document(line, source, lineno, warnings);
    if (!seen.insert(d.doc_id).second) throw FormatError(source, lineno, "duplicate doc_id " + d.doc_id);
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<Document> load_corpus(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open corpus file " + path);
  return read_corpus(in, path, warnings);
}

namespace {

// Document-order view of the mentions with global token offsets.
struct FlatMention {
  std::size_t index;  // into doc.mentions
  std::size_t start;
  std::size_t end;
};

std::vector<std::size_t> sentence_offsets(const Document& doc) {
  std::vector<std::size_t> off(doc.sentences.size() + 1, 0);
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) off[s + 1] = off[s] + doc.sentences[s].size();
  return off;
}

std::vector<FlatMention> flat_mentions(const Document& doc, const std::vector<std::size_t>& off) {
  std::vector<FlatMention> out;
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    const Mention& m = doc.mentions[i];
    out.push_back({i, off[m.sentence] + m.start, off[m.sentence] + m.end});
  }
  std::stable_sort(out.begin(), out.end(), [](const FlatMention& a, const FlatMention& b) {
    return std::tie(a.start, a.end) < std::tie(b.start, b.end);
  });
  return out;
}

int span_distance(std::size_t t, std::size_t start, std::size_t end) {
  if (t < start) return static_cast<int>(start - t);
  if (t >= end) return static_cast<int>(t - end + 1);
  return 0;
}

std::string strip(std::string token, const WindowRules& rules) {
  for (const std::string& c : rules.strip_chars) {
    if (c.empty()) continue;
    for (auto pos = token.find(c); pos != std::string::npos; pos = token.find(c, pos)) token.erase(pos, c.size());
  }
  return token;
}

}  // namespace

std::vector<std::pair<Mention, Mention>> generate_candidate_pairs(const Document& doc, const WindowRules& rules) {
  auto off = sentence_offsets(doc);
  auto flat = flat_mentions(doc, off);
  std::vector<std::pair<Mention, Mention>> pairs;
  for (std::size_t a = 0; a < flat.size(); ++a) {
    for (std::size_t b = a + 1; b < flat.size(); ++b) {
      const Mention& m1 = doc.mentions[flat[a].index];
      const Mention& m2 = doc.mentions[flat[b].index];
      if (m1.entity_id == m2.entity_id) continue;
      std::size_t gap = m1.sentence > m2.sentence ? m1.sentence - m2.sentence : m2.sentence - m1.sentence;
      if (gap >= static_cast<std::size_t>(rules.max_sentence_distance)) continue;
      pairs.emplace_back(m1, m2);
    }
  }
  return pairs;
}

std::optional<CandidateInstance> build_context_window(const Document& doc, const Mention& m1, const Mention& m2,
                                                      const WindowRules& rules, std::string* drop_reason) {
  auto off = sentence_offsets(doc);
  std::vector<std::string> text;
  text.reserve(off.back());
  for (const auto& s : doc.sentences) text.insert(text.end(), s.begin(), s.end());
  const std::size_t n = text.size();

  const std::size_t s1 = off[m1.sentence] + m1.start, e1 = off[m1.sentence] + m1.end;
  const std::size_t s2 = off[m2.sentence] + m2.start, e2 = off[m2.sentence] + m2.end;
  const auto expansion = static_cast<std::size_t>(std::max(rules.expansion, 0));

  std::vector<bool> focal(n, false);
  for (std::size_t t = s1; t < e1; ++t) focal[t] = true;
  for (std::size_t t = s2; t < e2; ++t) focal[t] = true;

  // Token -> first non-focal mention covering it, in document order.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(n, kNone);
  for (const FlatMention& fm : flat_mentions(doc, off)) {
    const Mention& m = doc.mentions[fm.index];
    if (m == m1 || m == m2) continue;
    for (std::size_t t = fm.start; t < fm.end; ++t) {
      if (owner[t] == kNone) owner[t] = fm.index;
    }
  }

  const std::size_t lo = std::min(s1, s2) >= expansion ? std::min(s1, s2) - expansion : 0;
  const std::size_t hi = std::min(n, std::max(e1, e2) + expansion);

  CandidateInstance inst;
  inst.doc_id = doc.doc_id;
  inst.entity1 = m1.entity_id;
  inst.entity2 = m2.entity_id;
  std::set<std::size_t> collapsed;
  for (std::size_t t = lo; t < hi; ++t) {
    if (focal[t]) continue;
    std::string token;
    if (owner[t] != kNone) {
      if (!collapsed.insert(owner[t]).second) continue;
      token = rules.masked_mention;
    } else {
      token = strip(text[t], rules);
      if (token.empty()) continue;
      if (std::find(rules.drop_tokens.begin(), rules.drop_tokens.end(), token) != rules.drop_tokens.end()) continue;
      if (is_number_token(token)) token = rules.number_token;
    }
    inst.tokens.push_back(std::move(token));
    inst.pos1.push_back(span_distance(t, s1, e1));
    inst.pos2.push_back(span_distance(t, s2, e2));
  }
  if (inst.tokens.empty()) {
    if (drop_reason) {
      *drop_reason = doc.doc_id + ": empty window for pair (" + m1.entity_id + ", " + m2.entity_id + ")";
    }
    return std::nullopt;
  }
  return inst;
}

void assign_labels(std::vector<CandidateInstance>& instances, const std::set<EntityPair>& gold, Phase phase) {
  for (CandidateInstance& inst : instances) {
    if (phase == Phase::test) {
      inst.label = Label::unlabeled;
    } else {
      inst.label = gold.count(inst.pair()) ? Label::positive : Label::negative;
    }
  }
}

std::vector<CandidateInstance> extract_instances(const Document& doc, Phase phase, const WindowRules& rules,
                                                 std::vector<std::string>* dropped) {
  std::vector<CandidateInstance> out;
  for (const auto& [m1, m2] : generate_candidate_pairs(doc, rules)) {
    std::string reason;
    auto inst = build_context_window(doc, m1, m2, rules, &reason);
    if (inst) {
      out.push_back(std::move(*inst));
    } else if (dropped) {
      dropped->push_back(reason);
    }
  }
  assign_labels(out, doc.gold_relations, phase);
  return out;
}

void write_instances(std::ostream& out, const std::vector<CandidateInstance>& instances) {
  for (const CandidateInstance& inst : instances) {
    json j;
    j["doc_id"] = inst.doc_id;
    j["entity1"] = inst.entity1;
    j["entity2"] = inst.entity2;
    j["tokens"] = inst.tokens;
    j["pos1"] = inst.pos1;
    j["pos2"] = inst.pos2;
    j["label"] = to_string(inst.label);
    out << j.dump() << '\n';
  }
}

std::vector<CandidateInstance> read_instances(std::istream& in, const std::string& source) {
  std::vector<CandidateInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      CandidateInstance inst;
      inst.doc_id = j.at("doc_id").get<std::string>();
      inst.entity1 = j.at("entity1").get<std::string>();
      inst.entity2 = j.at("entity2").get<std::string>();
      inst.tokens = j.at("tokens").get<std::vector<std::string>>();
      inst.pos1 = j.at("pos1").get<std::vector<int>>();
      inst.pos2 = j.at("pos2").get<std::vector<int>>();
      inst.label = label_from_string(j.at("label").get<std::string>());
      if (inst.tokens.empty() || inst.tokens.size() != inst.pos1.size() || inst.tokens.size() != inst.pos2.size()) {
        throw FormatError(source, lineno, "tokens/pos1/pos2 lengths differ or are empty");
      }
      out.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw FormatError(source, lineno, std::string("bad instance record: ") + e.what());
    } catch (const UsageError& e) {
      throw FormatError(source, lineno, e.what());
    }
  }
  return out;
}

std::map<std::string, std::vector<std::string>> mention_lexicon(const std::vector<Document>& docs) {
  std::map<std::string, std::set<std::string>> words;
  for (const Document& d : docs) {
    for (const Mention& m : d.mentions) {
      const auto& sent = d.sentences[m.sentence];
      for (std::size_t t = m.start; t < m.end; ++t) words[m.entity_id].insert(sent[t]);
    }
  }
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [id, w] : words) out[id] = std::vector<std::string>(w.begin(), w.end());
  return out;
}

std::map<std::string, std::set<EntityPair>> gold_by_document(const std::vector<Document>& docs) {
  std::map<std::string, std::set<EntityPair>> out;
  for (const Document& d : docs) out[d.doc_id] = d.gold_relations;
  return out;
}

}  // namespace ksm::corpus
