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

#include "ksm/run_config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "ksm/errors.hpp"
#include "ksm/gradcheck.hpp"

namespace ksm::cli {

using nlohmann::json;

const std::vector<KeySpec>& run_config_keys() {
  static const std::vector<KeySpec> keys = {
      // paths
      {"corpus", "", "document corpus (JSONL) used for preprocess, train, predict and ablate"},
      {"test_corpus", "", "evaluation corpus for ablate; empty uses the held-out split"},
      {"gold", "", "corpus (JSONL) whose gold relations evaluate scores against"},
      {"triples", "", "KB triples file, head<TAB>relation<TAB>tail"},
      {"kb", "", "prefix of an exported KnowledgeStore; empty trains one from triples when given"},
      {"words", "", "pretrained word embeddings in text format"},
      {"checkpoint", "", "model checkpoint for predict"},
      {"predictions", "", "predictions file for evaluate"},
      {"out", "", "output path of the subcommand"},
      {"log", "", "structured log file; empty writes records to stderr"},
      {"seed", "1", "seed for every random draw"},
      // preprocessing
      {"phase", "train", "labeling phase for preprocess: train or test"},
      {"expansion", "3", "context tokens kept on each side of the focal span"},
      {"max_sentence_distance", "3", "pairs need a sentence distance below this"},
      // model
      {"d", "100", "word and hidden width"},
      {"n_blocks", "2", "encoder blocks per encoder"},
      {"n_heads", "4", "attention heads"},
      {"d_head", "0", "per-head width; 0 means d / n_heads"},
      {"d_kb", "100", "KB embedding width"},
      {"dropout", "0.1", "dropout rate inside the encoders"},
      {"layer_norm_eps", "1e-6", "layer norm epsilon"},
      {"selector_activation", "tanh", "selector gate activation: tanh, sigmoid or relu"},
      {"selector_op", "hadamard", "selector combination: hadamard or sum"},
      {"selector_target", "relation", "selected knowledge: relation, entity, both or none"},
      {"gate_uses_relation", "true", "feed the relation vector into the relation gate"},
      {"pooling", "mutual", "pooling: mutual, separate, average or max"},
      {"shared_encoder", "false", "one encoder for both entities"},
      {"position_encoding", "sinusoidal", "position encoding: sinusoidal, learned or none"},
      {"max_position", "256", "learned position table size"},
      // training
      {"batch_size", "64", "instances per update"},
      {"lr", "0.02", "Adadelta learning rate"},
      {"rho", "0.95", "Adadelta decay"},
      {"adadelta_eps", "1e-6", "Adadelta epsilon"},
      {"max_epochs", "20", "training epochs at most"},
      {"patience", "5", "epochs without held-out improvement before stopping"},
      {"heldout_fraction", "0.1", "fraction of training documents held out for model selection"},
      // knowledge base
      {"kb_margin", "1.0", "TransE margin"},
      {"kb_epochs", "100", "TransE epochs"},
      {"kb_lr", "0.01", "TransE SGD step"},
      {"kb_multi_relation", "mean", "pooling of several relations between a pair: mean or first"},
      // ablate / gradcheck
      {"ablate_grid", "selector", "ablation grid: selector, selector_full, target, architecture or all"},
      {"gradcheck_variants", "true", "include the architectural variants in gradcheck"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : run_config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second = value;
  explicit_.insert(key);
}

void RunConfig::merge_json(const json& j, const std::string& source) {
  if (!j.is_object()) throw ConfigError(source + ": configuration must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (!values_.count(key)) throw ConfigError(source + ": unknown configuration key '" + key + "'");
    if (v.is_string()) {
      set(key, v.get<std::string>());
    } else if (v.is_boolean()) {
      set(key, v.get<bool>() ? "true" : "false");
    } else if (v.is_number()) {
      set(key, v.dump());
    } else {
      throw ConfigError(source + ": key '" + key + "' must be a string, number or boolean");
    }
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  merge_json(j, path);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size() || x < INT32_MIN || x > INT32_MAX) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

std::uint64_t RunConfig::get_seed() const {
  const std::string& v = get("seed");
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::logic_error&) {
    throw ConfigError("seed expects a nonnegative integer, got '" + v + "'");
  }
}

model::ModelConfig RunConfig::model_config() const {
  model::ModelConfig c;
  c.d = get_int("d");
  c.n_blocks = get_int("n_blocks");
  c.n_heads = get_int("n_heads");
  const int d_head = get_int("d_head");
  if (d_head == 0) {
    if (c.n_heads <= 0 || c.d % c.n_heads != 0) {
      throw ConfigError("d (" + std::to_string(c.d) + ") is not divisible by n_heads (" + std::to_string(c.n_heads) +
                        ")");
    }
    c.d_head = c.d / c.n_heads;
  } else {
    c.d_head = d_head;
  }
  c.d_kb = get_int("d_kb");
  c.dropout_rate = get_double("dropout");
  c.layer_norm_eps = get_double("layer_norm_eps");
  c.selector_activation = model::activation_from_string(get("selector_activation"));
  c.selector_op = model::selector_op_from_string(get("selector_op"));
  c.selector_target = model::selector_target_from_string(get("selector_target"));
  c.gate_uses_relation = get_bool("gate_uses_relation");
  c.pooling = model::pooling_from_string(get("pooling"));
  c.shared_encoder = get_bool("shared_encoder");
  c.position_encoding = model::position_encoding_from_string(get("position_encoding"));
  c.max_position = get_int("max_position");
  c.validate();
  return c;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig c;
  c.batch_size = get_int("batch_size");
  c.lr = get_double("lr");
  c.rho = get_double("rho");
  c.eps = get_double("adadelta_eps");
  c.max_epochs = get_int("max_epochs");
  c.patience = get_int("patience");
  c.seed = get_seed();
  c.validate();
  if (!(c.rho >= 0.0 && c.rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  if (!(c.eps > 0.0)) throw ConfigError("adadelta_eps must be positive");
  return c;
}

kb::TransEConfig RunConfig::transe_config() const {
  kb::TransEConfig c;
  c.margin = get_double("kb_margin");
  c.epochs = get_int("kb_epochs");
  c.lr = get_double("kb_lr");
  c.seed = get_seed();
  if (!(c.margin > 0.0)) throw ConfigError("kb_margin must be positive");
  if (c.epochs < 0) throw ConfigError("kb_epochs must be nonnegative");
  if (!(c.lr > 0.0)) throw ConfigError("kb_lr must be positive");
  return c;
}

corpus::WindowRules RunConfig::window_rules() const {
  corpus::WindowRules r;
  r.expansion = get_int("expansion");
  r.max_sentence_distance = get_int("max_sentence_distance");
  if (r.expansion < 0) throw ConfigError("expansion must be nonnegative");
  if (r.max_sentence_distance < 1) throw ConfigError("max_sentence_distance must be at least 1");
  return r;
}

void RunConfig::validate() const {
  model_config();
  train_config();
  transe_config();
  window_rules();
  get_seed();
  corpus::phase_from_string(get("phase"));
  kb::multi_relation_from_string(get("kb_multi_relation"));
  get_bool("gradcheck_variants");
  const double f = get_double("heldout_fraction");
  if (!(f >= 0.0 && f < 1.0)) throw ConfigError("heldout_fraction must lie in [0, 1)");
  ablation_grid(get("ablate_grid"));
}

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

std::vector<Variant> ablation_grid(const std::string& grid) {
  static const char* kActs[] = {"relu", "sigmoid", "tanh"};
  std::vector<Variant> out;
  auto selector = [&](bool with_relation_free) {
    for (const char* op : {"hadamard", "sum"}) {
      for (const char* act : kActs) {
        std::string name = std::string(op) == "hadamard" ? "KSM" : "KSM(sum)";
        out.push_back({name + " " + act, {{"selector_op", op}, {"selector_activation", act}}});
      }
    }
    if (with_relation_free) {
      for (const char* act : kActs) {
        out.push_back({std::string("KSM-R ") + act,
                       {{"selector_op", "hadamard"}, {"selector_activation", act}, {"gate_uses_relation", "false"}}});
      }
    }
  };
  auto target = [&] {
    out.push_back({"no selector", {{"selector_target", "none"}}});
    out.push_back({"entity selector", {{"selector_target", "entity"}}});
    out.push_back({"relation selector", {{"selector_target", "relation"}}});
    out.push_back({"entity and relation selectors", {{"selector_target", "both"}}});
  };
  auto architecture = [&] {
    out.push_back({"KSM", {}});
    out.push_back({"average pooling", {{"pooling", "average"}}});
    out.push_back({"max pooling", {{"pooling", "max"}}});
    out.push_back({"separate attention", {{"pooling", "separate"}}});
    out.push_back({"one block", {{"n_blocks", "1"}}});
    out.push_back({"shared encoder", {{"shared_encoder", "true"}}});
  };
  if (grid == "selector") {
    selector(false);
  } else if (grid == "selector_full") {
    selector(true);
  } else if (grid == "target") {
    target();
  } else if (grid == "architecture") {
    architecture();
  } else if (grid == "all") {
    selector(true);
    target();
    architecture();
  } else {
    throw ConfigError("unknown ablate_grid '" + grid + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct Context {
  const RunConfig& cfg;
  std::ostream& out;
  train::LogSink log;
};

const std::string& require(const RunConfig& cfg, const std::string& key, const std::string& sub) {
  const std::string& v = cfg.get(key);
  if (v.empty()) throw UsageError(sub + " needs --" + key);
  return v;
}

void require_exists(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw UsageError(what + " not found: " + path);
}

/// Refuses outputs that would overwrite one of the inputs.
void guard_output(const RunConfig& cfg, const std::string& out_path) {
  if (out_path.empty()) return;
  std::error_code ec;
  const auto target = std::filesystem::weakly_canonical(out_path, ec);
  for (const char* key : {"corpus", "test_corpus", "gold", "triples", "words", "checkpoint", "predictions"}) {
    const std::string& in = cfg.get(key);
    if (in.empty()) continue;
    if (std::filesystem::weakly_canonical(in, ec) == target) {
      throw UsageError("output path " + out_path + " equals input --" + std::string(key));
    }
  }
}

std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError("cannot write " + path);
  return f;
}

void log_warnings(const Context& ctx, const std::vector<std::string>& warnings, const char* kind) {
  if (!ctx.log) return;
  for (const auto& w : warnings) ctx.log({{"schema", 1}, {"event", "warning"}, {"kind", kind}, {"message", w}});
}

std::vector<corpus::Document> read_docs(const Context& ctx, const std::string& path) {
  std::vector<std::string> warnings;
  auto docs = corpus::load_corpus(path, &warnings);
  log_warnings(ctx, warnings, "corpus");
  return docs;
}

std::vector<corpus::CandidateInstance> instances_of(const Context& ctx, const std::vector<corpus::Document>& docs,
                                                    corpus::Phase phase) {
  const auto rules = ctx.cfg.window_rules();
  std::vector<corpus::CandidateInstance> out;
  std::vector<std::string> dropped;
  for (const auto& doc : docs) {
    auto inst = corpus::extract_instances(doc, phase, rules, &dropped);
    out.insert(out.end(), std::make_move_iterator(inst.begin()), std::make_move_iterator(inst.end()));
  }
  log_warnings(ctx, dropped, "dropped_window");
  return out;
}

kb::EmbeddingTable pretrained_words(const RunConfig& cfg) {
  const std::string& path = cfg.get("words");
  if (path.empty()) return {};
  return kb::load_embeddings(path);
}

kb::KnowledgeStore knowledge_store(const Context& ctx, const kb::EmbeddingTable& words,
                                   const kb::MentionLexicon& lexicon, Eigen::Index d_kb) {
  const auto& cfg = ctx.cfg;
  std::vector<kb::Triple> triples;
  if (!cfg.get("triples").empty()) triples = kb::load_triples(cfg.get("triples"));
  kb::KnowledgeStore store;
  if (!cfg.get("kb").empty()) {
    store = kb::import_store(cfg.get("kb"), triples);
    if (store.d_kb != d_kb) {
      throw ConfigError("KB store width " + std::to_string(store.d_kb) + " differs from d_kb " + std::to_string(d_kb));
    }
  } else if (!triples.empty()) {
    const kb::EmbeddingTable none;
    store = kb::init_embeddings(triples, words.dim() == d_kb ? words : none, lexicon, d_kb, cfg.get_seed());
    auto tlog = kb::transe_train(triples, store, cfg.transe_config());
    if (ctx.log && !tlog.epoch_loss.empty()) {
      ctx.log({{"schema", 1}, {"event", "transe"}, {"epochs", tlog.epoch_loss.size()},
               {"final_loss", tlog.epoch_loss.back()}});
    }
  } else {
    store = kb::KnowledgeStore::empty(d_kb);
  }
  store.policy = kb::multi_relation_from_string(cfg.get("kb_multi_relation"));
  return store;
}

/// Mention words in the lexicon that should get a row in the word table.
std::vector<std::string> lexicon_words(const kb::MentionLexicon& lexicon) {
  std::vector<std::string> out;
  for (const auto& [id, words] : lexicon) out.insert(out.end(), words.begin(), words.end());
  return out;
}

/// Word rows for averaging into unknown entities, when widths agree.
const kb::EmbeddingTable& fallback_table(const model::WordTable& words, Eigen::Index d_kb) {
  static const kb::EmbeddingTable none;
  return words.dim() == d_kb ? words.table() : none;
}

std::vector<model::InstanceFeatures> features_of(const Context& ctx, const std::vector<corpus::CandidateInstance>& insts,
                                                 const model::WordTable& words, const kb::KnowledgeStore& store,
                                                 const kb::MentionLexicon& lexicon, const char* split) {
  model::KnowledgeStats stats;
  std::vector<model::InstanceFeatures> out;
  out.reserve(insts.size());
  const auto& fallback = fallback_table(words, store.d_kb);
  for (const auto& inst : insts) out.push_back(model::featurize(inst, words, store, fallback, lexicon, &stats));
  if (ctx.log) {
    ctx.log({{"schema", 1}, {"event", "features"}, {"split", split}, {"instances", stats.instances},
             {"entity_fallbacks", stats.entity_fallbacks}, {"relation_fallbacks", stats.relation_fallbacks}});
  }
  return out;
}

struct Fitted {
  std::unique_ptr<model::KsmModel> model;
  model::WordTable words;
  train::TrainLog log;
};

/// Trains on `train_docs`, selecting the epoch on `held_docs` when nonempty.
Fitted fit(const Context& ctx, const std::vector<corpus::Document>& train_docs,
           const std::vector<corpus::Document>& held_docs) {
  const auto& cfg = ctx.cfg;
  const auto mc = cfg.model_config();
  const auto tc = cfg.train_config();
  std::vector<corpus::Document> all = train_docs;
  all.insert(all.end(), held_docs.begin(), held_docs.end());
  const auto lexicon = corpus::mention_lexicon(all);
  const auto pretrained = pretrained_words(cfg);
  if (!pretrained.empty() && pretrained.dim() != mc.d) {
    throw ConfigError("word embedding width " + std::to_string(pretrained.dim()) + " differs from d " +
                      std::to_string(mc.d));
  }
  const auto store = knowledge_store(ctx, pretrained, lexicon, mc.d_kb);

  auto train_inst = instances_of(ctx, train_docs, corpus::Phase::train);
  auto held_inst = instances_of(ctx, held_docs, corpus::Phase::test);
  if (train_inst.empty()) throw UsageError("no training instances in the corpus");

  Fitted fitted;
  fitted.words = model::WordTable::build(train_inst, pretrained, mc.d, cfg.get_seed(), lexicon_words(lexicon));
  fitted.words.extend(held_inst, pretrained);
  auto train_feats = features_of(ctx, train_inst, fitted.words, store, lexicon, "train");
  auto held_feats = features_of(ctx, held_inst, fitted.words, store, lexicon, "heldout");
  const auto held_gold = corpus::gold_by_document(held_docs);

  fitted.model = std::make_unique<model::KsmModel>(mc, cfg.get_seed());
  train::HeldOut held;
  if (!held_feats.empty()) held = {&held_feats, &held_gold};
  fitted.log = train::train_model(*fitted.model, train_feats, tc, held, ctx.log);
  return fitted;
}

train::PredictionSet predict_docs(const Context& ctx, const model::KsmModel& m, model::WordTable& words,
                                  const std::vector<corpus::Document>& docs) {
  const auto lexicon = corpus::mention_lexicon(docs);
  const auto pretrained = pretrained_words(ctx.cfg);
  if (!pretrained.empty() && pretrained.dim() != words.dim()) {
    throw ConfigError("word embedding width differs from the checkpoint word table");
  }
  const auto store = knowledge_store(ctx, pretrained, lexicon, m.config().d_kb);
  auto insts = instances_of(ctx, docs, corpus::Phase::test);
  words.extend(insts, pretrained);
  auto feats = features_of(ctx, insts, words, store, lexicon, "predict");
  auto preds = train::predict_instances(m, feats);
  return train::aggregate_predictions(preds);
}

void split_docs(const std::vector<corpus::Document>& docs, double fraction, std::vector<corpus::Document>& train,
                std::vector<corpus::Document>& held) {
  for (const auto& d : docs) (train::is_held_out(d.doc_id, fraction) ? held : train).push_back(d);
  if (train.empty()) {
    train.swap(held);
    held.clear();
  }
}

bool any_model_key_set(const RunConfig& cfg) {
  for (const char* k : {"d", "n_blocks", "n_heads", "d_head", "d_kb", "dropout", "layer_norm_eps",
                        "selector_activation", "selector_op", "selector_target", "gate_uses_relation", "pooling",
                        "shared_encoder", "position_encoding", "max_position"}) {
    if (cfg.is_set(k)) return true;
  }
  return false;
}

int cmd_preprocess(const Context& ctx) {
  const auto& path = require(ctx.cfg, "corpus", "preprocess");
  const auto& out_path = require(ctx.cfg, "out", "preprocess");
  guard_output(ctx.cfg, out_path);
  const auto phase = corpus::phase_from_string(ctx.cfg.get("phase"));
  auto docs = read_docs(ctx, path);
  auto insts = instances_of(ctx, docs, phase);
  auto f = open_output(out_path);
  corpus::write_instances(f, insts);
  if (ctx.log) {
    ctx.log({{"schema", 1}, {"event", "preprocess"}, {"documents", docs.size()}, {"instances", insts.size()}});
  }
  return 0;
}

int cmd_train_kb(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& triples_path = require(cfg, "triples", "train-kb");
  const auto& out_path = require(cfg, "out", "train-kb");
  guard_output(cfg, out_path + ".entities.txt");
  guard_output(cfg, out_path + ".relations.txt");
  const Eigen::Index d_kb = cfg.get_int("d_kb");
  const auto transe = cfg.transe_config();
  const auto triples = kb::load_triples(triples_path);
  kb::MentionLexicon lexicon;
  if (!cfg.get("corpus").empty()) lexicon = corpus::mention_lexicon(read_docs(ctx, cfg.get("corpus")));
  auto words = pretrained_words(cfg);
  if (!words.empty() && words.dim() != d_kb) {
    if (ctx.log) {
      ctx.log({{"schema", 1}, {"event", "warning"}, {"kind", "kb"},
               {"message", "word width differs from d_kb; entity rows start random"}});
    }
    words = kb::EmbeddingTable();
  }
  auto store = kb::init_embeddings(triples, words, lexicon, d_kb, cfg.get_seed());
  auto tlog = kb::transe_train(triples, store, transe);
  if (ctx.log) {
    for (std::size_t e = 0; e < tlog.epoch_loss.size(); ++e) {
      ctx.log({{"schema", 1}, {"event", "transe_epoch"}, {"epoch", e + 1}, {"loss", tlog.epoch_loss[e]}});
    }
  }
  kb::export_store(store, out_path);
  return 0;
}

int cmd_train(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& path = require(cfg, "corpus", "train");
  const auto& out_path = require(cfg, "out", "train");
  guard_output(cfg, out_path);
  cfg.model_config();
  cfg.train_config();
  auto docs = read_docs(ctx, path);
  std::vector<corpus::Document> train_docs, held_docs;
  split_docs(docs, cfg.get_double("heldout_fraction"), train_docs, held_docs);
  auto fitted = fit(ctx, train_docs, held_docs);
  model::save_checkpoint(out_path, *fitted.model, fitted.words);
  if (ctx.log) {
    json j{{"schema", 1}, {"event", "trained"}, {"train_documents", train_docs.size()},
           {"heldout_documents", held_docs.size()}, {"best_epoch", fitted.log.best_epoch}};
    if (fitted.log.best_heldout_f1) j["best_heldout_f1"] = *fitted.log.best_heldout_f1;
    ctx.log(j);
  }
  return 0;
}

int cmd_predict(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& ckpt = require(cfg, "checkpoint", "predict");
  const auto& path = require(cfg, "corpus", "predict");
  const auto& out_path = require(cfg, "out", "predict");
  guard_output(cfg, out_path);
  require_exists(ckpt, "checkpoint");
  std::optional<model::ModelConfig> expected;
  if (any_model_key_set(cfg)) expected = cfg.model_config();
  auto [m, words] = model::load_checkpoint(ckpt, expected ? &*expected : nullptr);
  auto docs = read_docs(ctx, path);
  auto preds = predict_docs(ctx, m, words, docs);
  auto f = open_output(out_path);
  train::write_predictions(f, preds);
  if (ctx.log) {
    std::size_t n = 0;
    for (const auto& [doc, pairs] : preds) n += pairs.size();
    ctx.log({{"schema", 1}, {"event", "predict"}, {"documents", docs.size()}, {"predicted_pairs", n}});
  }
  return 0;
}

int cmd_evaluate(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& pred_path = require(cfg, "predictions", "evaluate");
  const auto& gold_path = require(cfg, "gold", "evaluate");
  guard_output(cfg, cfg.get("out"));
  std::ifstream in(pred_path);
  if (!in) throw UsageError("cannot open predictions file " + pred_path);
  const auto preds = train::read_predictions(in, pred_path);
  const auto gold = corpus::gold_by_document(read_docs(ctx, gold_path));
  const std::string report = train::score_report(train::micro_prf(preds, gold));
  if (cfg.get("out").empty()) {
    ctx.out << report;
  } else {
    auto f = open_output(cfg.get("out"));
    f << report;
  }
  return 0;
}

int cmd_ablate(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& path = require(cfg, "corpus", "ablate");
  guard_output(cfg, cfg.get("out"));
  const auto grid = ablation_grid(cfg.get("ablate_grid"));
  auto docs = read_docs(ctx, path);
  std::vector<corpus::Document> train_docs, held_docs, test_docs;
  if (cfg.get("test_corpus").empty()) {
    // The held-out split becomes the test set and no epoch selection is done.
    split_docs(docs, cfg.get_double("heldout_fraction"), train_docs, test_docs);
    if (test_docs.empty()) throw UsageError("ablate: held-out split is empty; pass --test_corpus");
  } else {
    split_docs(docs, cfg.get_double("heldout_fraction"), train_docs, held_docs);
    test_docs = read_docs(ctx, cfg.get("test_corpus"));
  }
  const auto gold = corpus::gold_by_document(test_docs);

  // Validate every row before training any of them.
  std::vector<RunConfig> configs;
  for (const auto& v : grid) {
    RunConfig c = cfg;
    for (const auto& [k, val] : v.overrides) c.set(k, val);
    c.validate();
    configs.push_back(std::move(c));
  }
  std::ostringstream table;
  table << "variant\tprecision\trecall\tf1\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Context sub{configs[i], ctx.out, ctx.log};
    if (ctx.log) ctx.log({{"schema", 1}, {"event", "variant"}, {"name", grid[i].name}});
    auto fitted = fit(sub, train_docs, held_docs);
    auto preds = predict_docs(sub, *fitted.model, fitted.words, test_docs);
    auto s = train::micro_prf(preds, gold);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "\t%.2f\t%.2f\t%.2f\n", 100.0 * s.precision, 100.0 * s.recall, 100.0 * s.f1);
    table << grid[i].name << buf;
  }
  if (cfg.get("out").empty()) {
    ctx.out << table.str();
  } else {
    auto f = open_output(cfg.get("out"));
    f << table.str();
  }
  return 0;
}

int cmd_gradcheck(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  guard_output(cfg, cfg.get("out"));
  auto results = gradcheck::op_suites(cfg.get_seed());
  auto model_results = gradcheck::model_suites(cfg.get_seed(), cfg.get_bool("gradcheck_variants"));
  results.insert(results.end(), model_results.begin(), model_results.end());
  std::ostringstream report;
  bool all = true;
  double worst = 0.0;
  char buf[256];
  for (const auto& r : results) {
    all = all && r.passed;
    worst = std::max(worst, r.max_rel_error);
    std::snprintf(buf, sizeof(buf), "%s %s max_rel_error=%.3e tolerance=%.0e scalars=%zu\n",
                  r.passed ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_error, r.tolerance, r.checked);
    report << buf;
  }
  std::snprintf(buf, sizeof(buf), "%s %zu suites max_rel_error=%.3e\n", all ? "PASS" : "FAIL", results.size(), worst);
  report << buf;
  ctx.out << report.str();
  if (!cfg.get("out").empty()) {
    auto f = open_output(cfg.get("out"));
    f << report.str();
  }
  return all ? 0 : 1;
}

}  // namespace

int run(const std::string& subcommand, const RunConfig& config, std::ostream& out, std::ostream& err) {
  std::unique_ptr<std::ofstream> log_file;
  train::LogSink sink;
  try {
    if (!config.get("log").empty()) {
      log_file = std::make_unique<std::ofstream>(config.get("log"), std::ios::binary | std::ios::trunc);
      if (!*log_file) throw UsageError("cannot write log file " + config.get("log"));
    }
    std::ostream& log_stream = log_file ? static_cast<std::ostream&>(*log_file) : err;
    sink = [&log_stream, &subcommand](const json& j) {
      json rec = j;
      rec["command"] = subcommand;
      log_stream << rec.dump() << '\n';
    };
    config.validate();
    Context ctx{config, out, sink};
    if (subcommand == "preprocess") return cmd_preprocess(ctx);
    if (subcommand == "train-kb") return cmd_train_kb(ctx);
    if (subcommand == "train") return cmd_train(ctx);
    if (subcommand == "predict") return cmd_predict(ctx);
    if (subcommand == "evaluate") return cmd_evaluate(ctx);
    if (subcommand == "ablate") return cmd_ablate(ctx);
    if (subcommand == "gradcheck") return cmd_gradcheck(ctx);
    throw UsageError("unknown subcommand '" + subcommand + "'");
  } catch (const FormatError& e) {
    err << "ksm " << subcommand << ": error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "ksm " << subcommand << ": error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "ksm " << subcommand << ": error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace ksm::cli
