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

#include "ksm/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "ksm/errors.hpp"
#include "ksm/kernels.hpp"

namespace ksm::model {

using ad::Var;
using nlohmann::json;

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<Activation> kActivations[] = {
    {Activation::tanh, "tanh"}, {Activation::sigmoid, "sigmoid"}, {Activation::relu, "relu"}};
constexpr EnumName<SelectorOp> kOps[] = {{SelectorOp::hadamard, "hadamard"}, {SelectorOp::sum, "sum"}};
constexpr EnumName<SelectorTarget> kTargets[] = {{SelectorTarget::relation, "relation"},
                                                 {SelectorTarget::entity, "entity"},
                                                 {SelectorTarget::both, "both"},
                                                 {SelectorTarget::none, "none"}};
constexpr EnumName<Pooling> kPoolings[] = {
    {Pooling::mutual, "mutual"}, {Pooling::separate, "separate"}, {Pooling::average, "average"}, {Pooling::max, "max"}};
constexpr EnumName<PositionEncoding> kPositions[] = {{PositionEncoding::sinusoidal, "sinusoidal"},
                                                     {PositionEncoding::learned, "learned"},
                                                     {PositionEncoding::none, "none"}};

template <typename E, std::size_t N>
const char* name_of(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E parse_enum(const EnumName<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  std::string options;
  for (const auto& e : table) options += std::string(options.empty() ? "" : ", ") + e.name;
  throw ConfigError(std::string(what) + " must be one of {" + options + "}, got " + s);
}

}  // namespace

const char* to_string(Activation v) { return name_of(kActivations, v); }
const char* to_string(SelectorOp v) { return name_of(kOps, v); }
const char* to_string(SelectorTarget v) { return name_of(kTargets, v); }
const char* to_string(Pooling v) { return name_of(kPoolings, v); }
const char* to_string(PositionEncoding v) { return name_of(kPositions, v); }
Activation activation_from_string(const std::string& s) { return parse_enum(kActivations, s, "selector_activation"); }
SelectorOp selector_op_from_string(const std::string& s) { return parse_enum(kOps, s, "selector_op"); }
SelectorTarget selector_target_from_string(const std::string& s) {
  return parse_enum(kTargets, s, "selector_target");
}
Pooling pooling_from_string(const std::string& s) { return parse_enum(kPoolings, s, "pooling"); }
PositionEncoding position_encoding_from_string(const std::string& s) {
  return parse_enum(kPositions, s, "position_encoding");
}

void ModelConfig::validate() const {
  if (d <= 0 || d_kb <= 0 || n_heads <= 0 || d_head <= 0) throw ConfigError("model dimensions must be positive");
  if (d != n_heads * d_head) {
    throw ConfigError("d (" + std::to_string(d) + ") must equal n_heads * d_head (" + std::to_string(n_heads) + " * " +
                      std::to_string(d_head) + ")");
  }
  if (n_blocks < 1) throw ConfigError("n_blocks must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
  if (max_position < 1) throw ConfigError("max_position must be positive");
}

json ModelConfig::to_json() const {
  return json{{"d", d},
              {"n_blocks", n_blocks},
              {"n_heads", n_heads},
              {"d_head", d_head},
              {"d_kb", d_kb},
              {"dropout_rate", dropout_rate},
              {"layer_norm_eps", layer_norm_eps},
              {"selector_activation", to_string(selector_activation)},
              {"selector_op", to_string(selector_op)},
              {"selector_target", to_string(selector_target)},
              {"gate_uses_relation", gate_uses_relation},
              {"pooling", to_string(pooling)},
              {"shared_encoder", shared_encoder},
              {"position_encoding", to_string(position_encoding)},
              {"max_position", max_position}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.d = j.at("d").get<int>();
    c.n_blocks = j.at("n_blocks").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.d_kb = j.at("d_kb").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    c.selector_activation = activation_from_string(j.at("selector_activation").get<std::string>());
    c.selector_op = selector_op_from_string(j.at("selector_op").get<std::string>());
    c.selector_target = selector_target_from_string(j.at("selector_target").get<std::string>());
    c.gate_uses_relation = j.at("gate_uses_relation").get<bool>();
    c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    c.shared_encoder = j.at("shared_encoder").get<bool>();
    c.position_encoding = position_encoding_from_string(j.at("position_encoding").get<std::string>());
    c.max_position = j.at("max_position").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

WordTable::WordTable(kb::EmbeddingTable table) : table_(std::move(table)) {
  if (table_.empty() || table_.id(0) != kUnknown) throw UsageError("word table must start with the <unk> row");
}

WordTable WordTable::build(const std::vector<corpus::CandidateInstance>& instances,
                           const kb::EmbeddingTable& pretrained, Eigen::Index dim, std::uint64_t seed,
                           const std::vector<std::string>& extra_tokens) {
  if (!pretrained.empty() && pretrained.dim() != dim) {
    throw UsageError("pretrained word width " + std::to_string(pretrained.dim()) + " differs from d " +
                     std::to_string(dim));
  }
  std::set<std::string> vocab;
  for (const auto& inst : instances) vocab.insert(inst.tokens.begin(), inst.tokens.end());
  vocab.insert(extra_tokens.begin(), extra_tokens.end());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.1, 0.1);
  auto random_row = [&]() {
    RowVec r(dim);
    for (Eigen::Index k = 0; k < dim; ++k) r(k) = uni(rng);
    return r;
  };
  kb::EmbeddingTable table(dim);
  table.add(kUnknown, random_row());
  for (const std::string& w : vocab) {
    if (w == kUnknown) continue;
    RowVec r = random_row();  // drawn for every word so seeds stay aligned
    if (auto row = pretrained.find(w)) r = pretrained.row(*row);
    table.add(w, r);
  }
  return WordTable(std::move(table));
}

std::size_t WordTable::extend(const std::vector<corpus::CandidateInstance>& instances,
                              const kb::EmbeddingTable& pretrained) {
  if (pretrained.empty()) return 0;
  if (pretrained.dim() != dim()) throw UsageError("pretrained word width differs from the word table");
  std::size_t added = 0;
  for (const auto& inst : instances) {
    for (const std::string& w : inst.tokens) {
      if (table_.find(w)) continue;
      if (auto row = pretrained.find(w)) {
        table_.add(w, pretrained.row(*row));
        ++added;
      }
    }
  }
  return added;
}

Mat WordTable::lookup(const std::vector<std::string>& tokens) const {
  Mat out(static_cast<Eigen::Index>(tokens.size()), dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto row = table_.find(tokens[i]);
    out.row(static_cast<Eigen::Index>(i)) = table_.row(row ? *row : 0);
  }
  return out;
}

InstanceFeatures featurize(const corpus::CandidateInstance& instance, const WordTable& words,
                           const kb::KnowledgeStore& store, const kb::EmbeddingTable& fallback_words,
                           const kb::MentionLexicon& lexicon, KnowledgeStats* stats) {
  if (instance.tokens.empty()) throw UsageError("featurize: empty instance");
  InstanceFeatures f;
  f.doc_id = instance.doc_id;
  f.pair = instance.pair();
  f.words = words.lookup(instance.tokens);
  f.pos1 = instance.pos1;
  f.pos2 = instance.pos2;
  auto k = kb::resolve_pair_knowledge(store, instance.entity1, instance.entity2, fallback_words, lexicon);
  f.e1 = std::move(k.e1);
  f.e2 = std::move(k.e2);
  f.relation = std::move(k.relation);
  f.relation_in_kb = k.relation_in_kb;
  switch (instance.label) {
    case corpus::Label::positive: f.label = 1; break;
    case corpus::Label::negative: f.label = 0; break;
    case corpus::Label::unlabeled: f.label = -1; break;
  }
  if (stats) {
    ++stats->instances;
    stats->entity_fallbacks += (k.e1_in_kb ? 0 : 1) + (k.e2_in_kb ? 0 : 1);
    stats->relation_fallbacks += k.relation_in_kb ? 0 : 1;
  }
  return f;
}

// ---------------------------------------------------------------------------

Var Binder::operator()(const std::string& name) {
  if (mutable_) return tape_->parameter(mutable_->at(name));
  auto it = constants_.find(name);
  if (it != constants_.end()) return it->second;
  Var v = tape_->constant(params_->at(name).values);
  constants_.emplace(name, v);
  return v;
}

Var Dropout::operator()(const Var& x) const {
  if (!active || rate == 0.0) return x;
  if (!rng) throw UsageError("active dropout needs a random engine");
  return ad::dropout(x, rate, *rng, true);
}

Var position_rows(Binder& bind, std::span<const int> positions, const ModelConfig& config) {
  const auto L = static_cast<Eigen::Index>(positions.size());
  switch (config.position_encoding) {
    case PositionEncoding::learned: {
      std::vector<Eigen::Index> idx;
      for (int p : positions) idx.push_back(std::min<Eigen::Index>(std::max(p, 0), config.max_position - 1));
      return ad::gather_rows(bind("embedding.position"), idx);
    }
    case PositionEncoding::none: return bind.constant(Mat::Zero(L, config.d));
    case PositionEncoding::sinusoidal: break;
  }
  Mat p(L, config.d);
  for (Eigen::Index i = 0; i < L; ++i) {
    p.row(i) = kernels::sinusoidal_position(positions[static_cast<std::size_t>(i)], config.d);
  }
  return bind.constant(std::move(p));
}

std::pair<Var, Var> embed_context(Binder& bind, const InstanceFeatures& f, const ModelConfig& config) {
  if (f.length() == 0) throw UsageError("embed_context: empty sequence");
  if (f.words.cols() != config.d) throw UsageError("embed_context: word rows must have width d");
  if (static_cast<Eigen::Index>(f.pos1.size()) != f.length() || static_cast<Eigen::Index>(f.pos2.size()) != f.length()) {
    throw UsageError("embed_context: position lists must match the sequence length");
  }
  for (int p : f.pos1) {
    if (p < 0) throw UsageError("embed_context: negative position");
  }
  for (int p : f.pos2) {
    if (p < 0) throw UsageError("embed_context: negative position");
  }
  Var w = bind.constant(f.words);
  return {ad::add(w, position_rows(bind, f.pos1, config)), ad::add(w, position_rows(bind, f.pos2, config))};
}

Var entity_conditioned_block(Binder& bind, const std::string& prefix, const Var& x, const Var& entity,
                             const ModelConfig& config, const Dropout& dropout, BlockTrace* trace) {
  if (config.d != config.n_heads * config.d_head) throw ConfigError("d must equal n_heads * d_head");
  const Eigen::Index L = x.rows();
  Var query = ad::concat_cols({x, ad::repeat_rows(entity, L)});
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.d_head));
  std::vector<Var> heads;
  if (trace) trace->attention.clear();
  for (int h = 0; h < config.n_heads; ++h) {
    const std::string tag = ".head" + std::to_string(h);
    Var q = ad::matmul(query, bind(prefix + ".Wq" + tag));
    Var k = ad::matmul(x, bind(prefix + ".Wk" + tag));
    Var v = ad::matmul(x, bind(prefix + ".Wv" + tag));
    Var weights = ad::softmax(ad::scale(ad::matmul_nt(q, k), scale), 1);
    if (trace) trace->attention.push_back(weights.value());
    heads.push_back(ad::matmul(weights, v));
  }
  Var multi_head = ad::matmul(ad::concat_cols(heads), bind(prefix + ".Wh"));
  if (trace) trace->multi_head = multi_head.value();
  const double eps = config.layer_norm_eps;
  Var sub = ad::layer_norm(ad::add(x, dropout(multi_head)), bind(prefix + ".ln1.gamma"), bind(prefix + ".ln1.beta"), eps);
  Var hidden = ad::relu(ad::add(ad::matmul(sub, bind(prefix + ".ffn.W1")), bind(prefix + ".ffn.b1")));
  Var ff = ad::add(ad::matmul(hidden, bind(prefix + ".ffn.W2")), bind(prefix + ".ffn.b2"));
  return ad::layer_norm(ad::add(sub, dropout(ff)), bind(prefix + ".ln2.gamma"), bind(prefix + ".ln2.beta"), eps);
}

Var encode(Binder& bind, const std::string& prefix, const Var& x, const Var& entity, const ModelConfig& config,
           const Dropout& dropout, std::vector<BlockTrace>* traces) {
  if (config.n_blocks < 1) throw ConfigError("n_blocks must be at least 1");
  Var out = x;
  if (traces) traces->assign(static_cast<std::size_t>(config.n_blocks), BlockTrace{});
  for (int b = 0; b < config.n_blocks; ++b) {
    out = entity_conditioned_block(bind, prefix + ".block" + std::to_string(b), out, entity, config, dropout,
                                   traces ? &(*traces)[static_cast<std::size_t>(b)] : nullptr);
  }
  return out;
}

PooledFeatures mutual_attention(Binder& bind, const Var& v1, const Var& v2) {
  if (v1.rows() != v2.rows() || v1.cols() != v2.cols()) throw UsageError("mutual_attention: sequence shapes differ");
  const Eigen::Index L = v1.rows();
  Var a = ad::matmul_nt(v1, bind("mutual.W1"));
  Var b = ad::matmul_nt(v2, bind("mutual.W2"));
  // Row i * L + j holds W1 V1_i + W2 V2_j.
  std::vector<Eigen::Index> rows_i, rows_j;
  for (Eigen::Index i = 0; i < L; ++i) {
    for (Eigen::Index j = 0; j < L; ++j) {
      rows_i.push_back(i);
      rows_j.push_back(j);
    }
  }
  Var pairwise = ad::tanh(ad::add(ad::gather_rows(a, rows_i), ad::gather_rows(b, rows_j)));
  Var scores = ad::reshape(ad::matmul(pairwise, bind("mutual.w")), L, L);
  Var p1 = ad::softmax(ad::mean(scores, 1), 0);  // L x 1
  Var p2 = ad::softmax(ad::mean(scores, 0), 1);  // 1 x L
  PooledFeatures out;
  out.s1 = ad::matmul(ad::transpose(p1), v1);
  out.s2 = ad::matmul(p2, v2);
  out.p1 = p1.value().transpose();
  out.p2 = p2.value();
  out.scores = scores.value();
  return out;
}

PooledFeatures separate_attention(Binder& bind, const Var& v1, const Var& v2) {
  PooledFeatures out;
  auto attend = [&](const Var& v, Mat& weights) {
    Var hidden = ad::tanh(ad::add(ad::matmul_nt(v, bind("separate.W")), bind("separate.b")));
    Var p = ad::softmax(ad::matmul(hidden, bind("separate.w")), 0);
    weights = p.value().transpose();
    return ad::matmul(ad::transpose(p), v);
  };
  out.s1 = attend(v1, out.p1);
  out.s2 = attend(v2, out.p2);
  return out;
}

PooledFeatures pool(Binder& bind, const Var& v1, const Var& v2, const ModelConfig& config) {
  switch (config.pooling) {
    case Pooling::mutual: return mutual_attention(bind, v1, v2);
    case Pooling::separate: return separate_attention(bind, v1, v2);
    case Pooling::average: {
      PooledFeatures out;
      out.s1 = ad::mean(v1, 0);
      out.s2 = ad::mean(v2, 0);
      return out;
    }
    case Pooling::max: {
      PooledFeatures out;
      out.s1 = ad::max(v1, 0);
      out.s2 = ad::max(v2, 0);
      return out;
    }
  }
  throw ConfigError("unknown pooling");
}

Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::tanh: return ad::tanh(x);
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::relu: return ad::relu(x);
  }
  throw ConfigError("unknown activation");
}

namespace {

Var combine(const Var& gate, const Var& value, SelectorOp op) {
  return op == SelectorOp::hadamard ? ad::mul(gate, value) : ad::add(gate, value);
}

bool selects_relation(SelectorTarget t) { return t == SelectorTarget::relation || t == SelectorTarget::both; }
bool selects_entity(SelectorTarget t) { return t == SelectorTarget::entity || t == SelectorTarget::both; }

}  // namespace

Var knowledge_select(Binder& bind, const Var& s1, const Var& s2, const Var& relation, const ModelConfig& config) {
  if (!selects_relation(config.selector_target)) return relation;
  Var pre = ad::matmul_nt(ad::concat_cols({s1, s2}), bind("selector.W"));
  if (config.gate_uses_relation) pre = ad::add(pre, ad::matmul_nt(relation, bind("selector.U")));
  Var gate = activate(ad::add(pre, bind("selector.b")), config.selector_activation);
  return combine(gate, relation, config.selector_op);
}

Var entity_knowledge_select(Binder& bind, const Var& x, const Var& entity, const ModelConfig& config) {
  Var pre = ad::add(ad::matmul_nt(ad::mean(x, 0), bind("entity_selector.W")),
                    ad::matmul_nt(entity, bind("entity_selector.U")));
  Var gate = activate(ad::add(pre, bind("entity_selector.b")), config.selector_activation);
  return combine(gate, entity, config.selector_op);
}

Classification classify(Binder& bind, const Var& s1, const Var& s2, const Var& relation) {
  Var logits = ad::add(ad::matmul_nt(ad::concat_cols({s1, s2, relation}), bind("classifier.W")),
                       bind("classifier.b"));
  Classification c;
  c.probabilities = ad::softmax(logits, 1);
  const Mat& p = c.probabilities.value();
  c.label = p(0, 1) > p(0, 0) ? 1 : 0;
  return c;
}

Var nll_loss(std::span<const Var> probabilities, std::span<const int> labels, int* clamped) {
  if (probabilities.empty() || probabilities.size() != labels.size()) {
    throw UsageError("nll_loss: need one label per probability row");
  }
  constexpr double kFloor = 1e-12;
  int n_clamped = 0;
  std::vector<Var> picked;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw UsageError("nll_loss: labels must be 0 or 1");
    const Eigen::Index cls = labels[i];
    Var p = ad::gather_cols(probabilities[i], std::span<const Eigen::Index>(&cls, 1));
    if (p.scalar() < kFloor) ++n_clamped;
    picked.push_back(ad::log(p, kFloor));
  }
  if (clamped) *clamped = n_clamped;
  return ad::scale(ad::sum(ad::concat_cols(picked)), -1.0 / static_cast<double>(picked.size()));
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const Eigen::Index d = c.d, dkb = c.d_kb, dh = c.d_head;
  std::vector<std::string> encoders = c.shared_encoder ? std::vector<std::string>{"encoder"}
                                                       : std::vector<std::string>{"encoder1", "encoder2"};
  for (const auto& enc : encoders) {
    for (int b = 0; b < c.n_blocks; ++b) {
      const std::string p = enc + ".block" + std::to_string(b);
      for (int h = 0; h < c.n_heads; ++h) {
        const std::string tag = ".head" + std::to_string(h);
        out.push_back({p + ".Wq" + tag, {d + dkb, dh}});
        out.push_back({p + ".Wk" + tag, {d, dh}});
        out.push_back({p + ".Wv" + tag, {d, dh}});
      }
      out.push_back({p + ".Wh", {c.n_heads * dh, d}});
      out.push_back({p + ".ln1.gamma", {d}});
      out.push_back({p + ".ln1.beta", {d}});
      out.push_back({p + ".ffn.W1", {d, d}});
      out.push_back({p + ".ffn.b1", {d}});
      out.push_back({p + ".ffn.W2", {d, d}});
      out.push_back({p + ".ffn.b2", {d}});
      out.push_back({p + ".ln2.gamma", {d}});
      out.push_back({p + ".ln2.beta", {d}});
    }
  }
  if (c.position_encoding == PositionEncoding::learned) out.push_back({"embedding.position", {c.max_position, d}});
  if (c.pooling == Pooling::mutual) {
    out.push_back({"mutual.W1", {d, d}});
    out.push_back({"mutual.W2", {d, d}});
    out.push_back({"mutual.w", {d, 1}});
  } else if (c.pooling == Pooling::separate) {
    out.push_back({"separate.W", {d, d}});
    out.push_back({"separate.b", {d}});
    out.push_back({"separate.w", {d, 1}});
  }
  if (selects_relation(c.selector_target)) {
    out.push_back({"selector.W", {dkb, 2 * d}});
    if (c.gate_uses_relation) out.push_back({"selector.U", {dkb, dkb}});
    out.push_back({"selector.b", {dkb}});
  }
  if (selects_entity(c.selector_target)) {
    out.push_back({"entity_selector.W", {dkb, d}});
    out.push_back({"entity_selector.U", {dkb, dkb}});
    out.push_back({"entity_selector.b", {dkb}});
  }
  out.push_back({"classifier.W", {2, 2 * d + dkb}});
  out.push_back({"classifier.b", {2}});
  out.push_back({"knowledge.null_relation", {dkb}});
  return out;
}

KsmModel::KsmModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : parameter_layout(config_)) {
    Tensor& t = params_.add(name, shape);
    const bool is_vector = shape.size() == 1;
    if (name.ends_with(".gamma")) {
      t.values.setOnes();
    } else if (is_vector || name == "knowledge.null_relation") {
      t.values.setZero();
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> uni(-bound, bound);
      for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = uni(rng);
    }
  }
}

ForwardResult KsmModel::run(Binder& bind, const InstanceFeatures& f, const Dropout& dropout) const {
  const ModelConfig& c = config_;
  if (f.e1.size() != c.d_kb || f.e2.size() != c.d_kb || f.relation.size() != c.d_kb) {
    throw UsageError("knowledge vectors must have width d_kb");
  }
  auto [x1, x2] = embed_context(bind, f, c);
  Var e1 = bind.constant(f.e1);
  Var e2 = bind.constant(f.e2);
  if (selects_entity(c.selector_target)) {
    e1 = entity_knowledge_select(bind, x1, e1, c);
    e2 = entity_knowledge_select(bind, x2, e2, c);
  }
  ForwardResult r;
  r.v1 = encode(bind, c.shared_encoder ? "encoder" : "encoder1", x1, e1, c, dropout);
  r.v2 = encode(bind, c.shared_encoder ? "encoder" : "encoder2", x2, e2, c, dropout);
  r.pooled = pool(bind, r.v1, r.v2, c);
  Var relation = f.relation_in_kb ? bind.constant(f.relation) : bind("knowledge.null_relation");
  r.relation = knowledge_select(bind, r.pooled.s1, r.pooled.s2, relation, c);
  r.output = classify(bind, r.pooled.s1, r.pooled.s2, r.relation);
  return r;
}

ForwardResult KsmModel::forward(ad::Tape& tape, const InstanceFeatures& f, bool training, std::mt19937_64* rng) {
  if (!training) return static_cast<const KsmModel&>(*this).forward(tape, f);
  Binder bind(tape, params_);
  return run(bind, f, Dropout{config_.dropout_rate, rng, rng != nullptr});
}

ForwardResult KsmModel::forward(ad::Tape& tape, const InstanceFeatures& f) const {
  Binder bind(tape, params_);
  return run(bind, f, Dropout{});
}

std::pair<double, int> KsmModel::predict(const InstanceFeatures& f) const {
  ad::Tape tape;
  auto r = forward(tape, f);
  return {r.output.probabilities.value()(0, 1), r.output.label};
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const KsmModel& model, const WordTable& words) {
  json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = model.config().to_json();
  j["parameters"] = model.params().to_json();
  j["vocabulary"] = json{{"ids", words.table().ids()},
                         {"table", tensor_to_json({static_cast<Eigen::Index>(words.size()), words.dim()},
                                                  words.table().matrix())}};
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write checkpoint " + path);
  out << j.dump() << '\n';
}

std::pair<KsmModel, WordTable> load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path, 0, std::string("invalid checkpoint JSON: ") + e.what());
  }
  if (!j.contains("format_version") || j.at("format_version") != kCheckpointVersion) {
    throw UsageError(path + ": unsupported checkpoint format version");
  }
  if (!j.contains("config")) throw UsageError(path + ": checkpoint has no model config");
  ModelConfig config = ModelConfig::from_json(j.at("config"));
  if (expected && !(*expected == config)) throw UsageError(path + ": checkpoint config differs from the requested config");
  KsmModel model(config, 0);
  model.params().load_json(j.at("parameters"));
  const json& vocab = j.at("vocabulary");
  auto ids = vocab.at("ids").get<std::vector<std::string>>();
  Mat table = tensor_from_json(vocab.at("table"));
  if (static_cast<Eigen::Index>(ids.size()) != table.rows()) throw UsageError(path + ": vocabulary size mismatch");
  if (table.cols() != config.d) throw UsageError(path + ": vocabulary width differs from d");
  kb::EmbeddingTable words(table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) words.add(ids[i], table.row(static_cast<Eigen::Index>(i)));
  return {std::move(model), WordTable(std::move(words))};
}

}  // namespace ksm::model
