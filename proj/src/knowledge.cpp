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

#include "ksm/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "ksm/errors.hpp"

namespace ksm::kb {

std::vector<Triple> read_triples(std::istream& in, const std::string& source) {
  std::vector<Triple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      auto tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 3) throw FormatError(source, lineno, "expected head<TAB>relation<TAB>tail");
    for (const auto& f : fields) {
      if (f.empty()) throw FormatError(source, lineno, "empty field in triple");
    }
    out.push_back({fields[0], fields[1], fields[2]});
  }
  return out;
}

std::vector<Triple> load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open triple file " + path);
  return read_triples(in, path);
}

std::size_t EmbeddingTable::add(const std::string& id, const RowVec& v) {
  if (v.size() != dim_) throw UsageError("embedding width mismatch for " + id);
  if (index_.count(id)) throw UsageError("duplicate embedding id " + id);
  std::size_t i = ids_.size();
  ids_.push_back(id);
  index_.emplace(id, i);
  vectors_.conservativeResize(static_cast<Eigen::Index>(ids_.size()), dim_);
  vectors_.row(static_cast<Eigen::Index>(i)) = v;
  return i;
}

std::optional<std::size_t> EmbeddingTable::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingTable read_embeddings(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t count = 0;
  Eigen::Index dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  {
    std::istringstream header(line);
    long long c = -1, d = -1;
    if (!(header >> c >> d) || c < 0 || d <= 0) throw FormatError(source, lineno, "header must be `count dim`");
    count = static_cast<std::size_t>(c);
    dim = static_cast<Eigen::Index>(d);
  }
  EmbeddingTable table(dim);
  RowVec v(dim);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string id;
    ls >> id;
    for (Eigen::Index k = 0; k < dim; ++k) {
      if (!(ls >> v(k))) throw FormatError(source, lineno, "expected " + std::to_string(dim) + " values for " + id);
    }
    std::string extra;
    if (ls >> extra) throw FormatError(source, lineno, "too many values for " + id);
    if (table.find(id)) throw FormatError(source, lineno, "duplicate id " + id);
    table.add(id, v);
  }
  if (table.size() != count) {
    throw FormatError(source, 1,
                      "header announces " + std::to_string(count) + " rows, found " + std::to_string(table.size()));
  }
  return table;
}

EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open embedding file " + path);
  return read_embeddings(in, path);
}

void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  out << table.size() << ' ' << table.dim() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.id(i);
    for (Eigen::Index k = 0; k < table.dim(); ++k) out << ' ' << table.row(i)(k);
    out << '\n';
  }
}

MultiRelationPolicy multi_relation_from_string(const std::string& s) {
  if (s == "mean") return MultiRelationPolicy::mean;
  if (s == "first") return MultiRelationPolicy::first;
  throw ConfigError("multi-relation policy must be mean or first, got " + s);
}

KnowledgeStore KnowledgeStore::empty(Eigen::Index d_kb) {
  KnowledgeStore s;
  s.d_kb = d_kb;
  s.entities = EmbeddingTable(d_kb);
  s.relations = EmbeddingTable(d_kb);
  s.null_relation = RowVec::Zero(d_kb);
  return s;
}

void KnowledgeStore::index_pairs(const std::vector<Triple>& triples) {
  pair_relations.clear();
  for (const Triple& t : triples) pair_relations[corpus::EntityPair(t.head, t.tail)].insert(t.relation);
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Uniform in [0, 1) from the raw engine output, identical on every platform.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

RowVec fallback_entity(const std::string& id, const EmbeddingTable& words, const MentionLexicon& lexicon,
                       Eigen::Index dim) {
  RowVec acc = RowVec::Zero(dim);
  int known = 0;
  if (auto it = lexicon.find(id); it != lexicon.end() && !words.empty()) {
    for (const std::string& w : it->second) {
      if (auto row = words.find(w)) {
        acc += words.row(*row);
        ++known;
      }
    }
  }
  if (known > 0) return acc / known;
  std::mt19937_64 rng(fnv1a(id));
  for (Eigen::Index k = 0; k < dim; ++k) acc(k) = 0.2 * unit_uniform(rng) - 0.1;
  return acc;
}

KnowledgeStore init_embeddings(const std::vector<Triple>& triples, const EmbeddingTable& words,
                               const MentionLexicon& lexicon, Eigen::Index d_kb, std::uint64_t seed) {
  if (triples.empty()) throw UsageError("init_embeddings: empty triple set");
  if (d_kb <= 0) throw UsageError("init_embeddings: d_kb must be positive");
  if (!words.empty() && words.dim() != d_kb) {
    throw UsageError("word embedding width " + std::to_string(words.dim()) + " differs from d_kb " +
                     std::to_string(d_kb));
  }
  KnowledgeStore store = KnowledgeStore::empty(d_kb);
  std::set<std::string> entity_ids, relation_ids;
  for (const Triple& t : triples) {
    entity_ids.insert(t.head);
    entity_ids.insert(t.tail);
    relation_ids.insert(t.relation);
  }
  for (const std::string& id : entity_ids) store.entities.add(id, fallback_entity(id, words, lexicon, d_kb));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d_kb)));
  RowVec v(d_kb);
  for (const std::string& r : relation_ids) {
    for (Eigen::Index k = 0; k < d_kb; ++k) v(k) = normal(rng);
    store.relations.add(r, v);
  }
  store.index_pairs(triples);
  return store;
}

double transe_energy(const RowVec& h, const RowVec& r, const RowVec& t) {
  if (h.size() != r.size() || r.size() != t.size()) throw UsageError("transe_energy: dimension mismatch");
  return (h + r - t).norm();
}

TransELog transe_train(const std::vector<Triple>& triples, KnowledgeStore& store, const TransEConfig& config) {
  if (!(config.margin > 0.0)) throw UsageError("transe margin must be positive");
  TransELog log;
  if (config.epochs <= 0 || triples.empty()) return log;

  struct Indexed {
    std::size_t h, r, t;
  };
  std::vector<Indexed> data;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> known;
  for (const Triple& tr : triples) {
    auto h = store.entities.find(tr.head), t = store.entities.find(tr.tail);
    auto r = store.relations.find(tr.relation);
    if (!h || !t || !r) throw UsageError("transe_train: triple references an id missing from the store");
    data.push_back({*h, *r, *t});
    known.emplace(*h, *r, *t);
  }
  Mat& E = store.entities.matrix();
  Mat& R = store.relations.matrix();
  const std::size_t n_entities = store.entities.size();
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  auto unit_residual = [](const RowVec& diff) -> RowVec {
    double n = diff.norm();
    return n > 0.0 ? RowVec(diff / n) : RowVec(RowVec::Zero(diff.size()));
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t k : order) {
      const Indexed& x = data[k];
      std::size_t ch = x.h, ct = x.t;
      bool corrupt_head = unit_uniform(rng) < 0.5;
      for (int attempt = 0; attempt < 10; ++attempt) {
        std::size_t e = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n_entities));
        ch = corrupt_head ? e : x.h;
        ct = corrupt_head ? x.t : e;
        if (!known.count({ch, x.r, ct})) break;
      }
      RowVec pos = E.row(x.h) + R.row(x.r) - E.row(x.t);
      RowVec neg = E.row(ch) + R.row(x.r) - E.row(ct);
      double loss = config.margin + pos.norm() - neg.norm();
      if (loss <= 0.0) continue;
      total += loss;
      RowVec gp = config.lr * unit_residual(pos);
      RowVec gn = config.lr * unit_residual(neg);
      E.row(x.h) -= gp;
      E.row(x.t) += gp;
      R.row(x.r) -= gp - gn;
      E.row(ch) += gn;
      E.row(ct) -= gn;
    }
    for (Eigen::Index i = 0; i < E.rows(); ++i) {
      double n = E.row(i).norm();
      if (n > 1.0) E.row(i) /= n;
    }
    log.epoch_loss.push_back(total / static_cast<double>(data.size()));
  }
  return log;
}

PairKnowledge resolve_pair_knowledge(const KnowledgeStore& store, const std::string& id1, const std::string& id2,
                                     const EmbeddingTable& words, const MentionLexicon& lexicon) {
  PairKnowledge k;
  auto entity = [&](const std::string& id, bool& in_kb) -> RowVec {
    if (auto row = store.entities.find(id)) {
      in_kb = true;
      return store.entities.row(*row);
    }
    return fallback_entity(id, words, lexicon, store.d_kb);
  };
  k.e1 = entity(id1, k.e1_in_kb);
  k.e2 = entity(id2, k.e2_in_kb);
  k.relation = store.null_relation;
  auto it = store.pair_relations.find(corpus::EntityPair(id1, id2));
  if (it == store.pair_relations.end()) return k;
  RowVec acc = RowVec::Zero(store.d_kb);
  int used = 0;
  for (const std::string& label : it->second) {  // sorted by label
    auto row = store.relations.find(label);
    if (!row) continue;
    acc += store.relations.row(*row);
    ++used;
    if (store.policy == MultiRelationPolicy::first) break;
  }
  if (used > 0) {
    k.relation = acc / used;
    k.relation_in_kb = true;
  }
  return k;
}

void export_store(const KnowledgeStore& store, const std::string& prefix) {
  std::ofstream ent(prefix + ".entities.txt");
  if (!ent) throw UsageError("cannot write " + prefix + ".entities.txt");
  write_embeddings(ent, store.entities);
  EmbeddingTable rel = store.relations;
  rel.add(kNullRelationId, store.null_relation);
  std::ofstream rf(prefix + ".relations.txt");
  if (!rf) throw UsageError("cannot write " + prefix + ".relations.txt");
  write_embeddings(rf, rel);
}

KnowledgeStore import_store(const std::string& prefix, const std::vector<Triple>& triples) {
  EmbeddingTable ent = load_embeddings(prefix + ".entities.txt");
  EmbeddingTable rel = load_embeddings(prefix + ".relations.txt");
  if (ent.dim() != rel.dim()) throw UsageError("entity and relation widths differ in " + prefix);
  KnowledgeStore store = KnowledgeStore::empty(ent.dim());
  store.entities = std::move(ent);
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (rel.id(i) == kNullRelationId) {
      store.null_relation = rel.row(i);
    } else {
      store.relations.add(rel.id(i), rel.row(i));
    }
  }
  store.index_pairs(triples);
  return store;
}

}  // namespace ksm::kb
