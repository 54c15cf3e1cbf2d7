#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ftnn/client.hpp"
#include "ftnn/error.hpp"
#include "ftnn/feedforward.hpp"
#include "ftnn/image_data.hpp"
#include "ftnn/lstm.hpp"
#include "ftnn/metrics.hpp"
#include "ftnn/parameters.hpp"
#include "ftnn/privacy.hpp"
#include "ftnn/rng.hpp"
#include "ftnn/server.hpp"
#include "ftnn/sgd.hpp"
#include "ftnn/shard.hpp"
#include "ftnn/synth.hpp"
#include "ftnn/text_corpus.hpp"

namespace ftnn {

enum class Scenario { lm_finetune, mnist_permuted, dp_audit, comm_report };

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::lm_finetune:
      return "lm_finetune";
    case Scenario::mnist_permuted:
      return "mnist_permuted";
    case Scenario::dp_audit:
      return "dp_audit";
    case Scenario::comm_report:
      return "comm_report";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& name) {
  if (name == "lm_finetune") return Scenario::lm_finetune;
  if (name == "mnist_permuted") return Scenario::mnist_permuted;
  if (name == "dp_audit") return Scenario::dp_audit;
  if (name == "comm_report") return Scenario::comm_report;
  fail(ErrorKind::Config, "unknown scenario: " + name);
}

namespace detail {

// Strict view over one JSON object: typed reads with config-path context in
// every message, and done() rejects keys nothing consumed, so a typo in a
// config fails loudly instead of silently falling back to a default.
class ConfigView {
 public:
  ConfigView(const nlohmann::json& node, std::string where)
      : node_(&node), where_(std::move(where)) {
    require(node_->is_object(), ErrorKind::Config, where_ + " must be a JSON object");
  }

  const std::string& where() const { return where_; }

  bool has(const std::string& key) const { return node_->contains(key); }

  const nlohmann::json& raw(const std::string& key) {
    require(has(key), ErrorKind::Config, where_ + " is missing required key '" + key + "'");
    used_.insert(key);
    return (*node_)[key];
  }

  template <class T>
  T get(const std::string& key) {
    const nlohmann::json& v = raw(key);
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Config, where_ + "." + key + " has the wrong type: " + e.what());
    }
  }

  template <class T>
  T get_or(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return get<T>(key);
  }

  ConfigView child(const std::string& key) { return {raw(key), where_ + "." + key}; }

  void done() const {
    for (const auto& item : node_->items()) {
      require(used_.count(item.key()) != 0, ErrorKind::Config,
              where_ + " has unknown key '" + item.key() + "'");
    }
  }

 private:
  const nlohmann::json* node_;
  std::string where_;
  std::set<std::string> used_;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

}  // namespace detail

// One text source: either a file on disk or a generated dialect. The
// optional sample fields reduce a large source to a seeded uniform sentence
// sample (used for fixed-size evaluation corpora).
struct CorpusSpec {
  std::string file;
  bool use_synth = false;
  SynthTextConfig synth;
  std::size_t sentences = 0;
  std::uint64_t seed = 0;
  std::size_t sample_sentences = 0;  // 0 = keep everything
  std::uint64_t sample_seed = 0;
};

struct ImageSourceSpec {
  std::string images;
  std::string labels;
  bool use_synth = false;
  SynthImageConfig synth;
  std::size_t count = 0;
  std::uint64_t seed = 0;
};

struct LmDataConfig {
  std::size_t vocab_size = 0;
  CorpusSpec general_train;
  CorpusSpec general_test;
  CorpusSpec user_train;
  CorpusSpec user_test;
};

struct ImageDataConfig {
  ImageSourceSpec train;
  ImageSourceSpec test;
  std::uint64_t permute_seed = 0;
};

struct PretrainPlan {
  std::size_t epochs = 0;  // zero means "checkpoint the initialization"
  SgdConfig sgd;
};

struct TextShardPlan {
  std::size_t count = 0;
  std::size_t tokens = 0;
};

struct ImageShardPlan {
  std::size_t count = 0;
  std::size_t per_node = 0;
};

struct FinetunePlan {
  std::string base_checkpoint;
  std::size_t rounds = 0;
  NodePolicy policy = NodePolicy::single_use;
  ClientConfig client;
  AggregationConfig agg;
  TextShardPlan text_shards;
  ImageShardPlan image_shards;
};

struct AuditPlan {
  std::string base_checkpoint;
  std::size_t pairs = 0;
  std::size_t samples = 0;
  std::size_t seq_len = 0;
  std::vector<double> deltas;
  bool replace = false;  // adjacency: remove one shard (default) or swap one
  std::size_t subset = 0;
  TextShardPlan shards;
  std::size_t rounds = 0;
  NodePolicy policy = NodePolicy::cycle;
  ClientConfig client;
  AggregationConfig agg;
};

struct CommPlan {
  bool from_model = false;
  std::uint64_t param_count = 0;
  LmConfig model;
  std::uint64_t clients_per_round = 0;
  std::uint64_t rounds = 0;
  std::uint64_t bytes_per_param = 8;
};

struct ExperimentConfig {
  Scenario scenario = Scenario::comm_report;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  LmConfig lm_model;  // vocabulary dimension filled from the built vocab
  LmDataConfig lm_data;

  std::vector<std::size_t> ff_widths;
  std::vector<double> ff_dropout;
  ImageDataConfig image_data;

  bool has_pretrain = false;
  PretrainPlan pretrain;
  bool has_finetune = false;
  FinetunePlan finetune;
  bool has_audit = false;
  AuditPlan audit;
  CommPlan comm;
  KssConfig kss;
};

namespace detail {

inline SgdConfig parse_sgd(ConfigView v) {
  SgdConfig sgd;
  sgd.learning_rate = v.get<double>("learning_rate");
  sgd.momentum = v.get_or<double>("momentum", sgd.momentum);
  sgd.weight_decay = v.get_or<double>("weight_decay", sgd.weight_decay);
  sgd.clip_norm = v.get_or<double>("clip_norm", sgd.clip_norm);
  sgd.minibatch = v.get_or<std::size_t>("minibatch", sgd.minibatch);
  v.done();
  sgd.validate();
  return sgd;
}

inline SynthTextConfig parse_synth_text(ConfigView v) {
  SynthTextConfig s;
  s.world_seed = v.get_or<std::uint64_t>("world_seed", s.world_seed);
  s.style_salt = v.get_or<std::uint64_t>("style_salt", s.style_salt);
  s.lexicon = v.get_or<std::size_t>("lexicon", s.lexicon);
  s.exclusive_begin = v.get_or<std::size_t>("exclusive_begin", s.exclusive_begin);
  s.exclusive_count = v.get_or<std::size_t>("exclusive_count", s.exclusive_count);
  s.exclusive_rate = v.get_or<double>("exclusive_rate", s.exclusive_rate);
  s.fan_out = v.get_or<std::size_t>("fan_out", s.fan_out);
  s.bigram_weight = v.get_or<double>("bigram_weight", s.bigram_weight);
  s.restyle_rate = v.get_or<double>("restyle_rate", s.restyle_rate);
  s.zipf_unigram = v.get_or<double>("zipf_unigram", s.zipf_unigram);
  s.zipf_successor = v.get_or<double>("zipf_successor", s.zipf_successor);
  s.min_sentence = v.get_or<std::size_t>("min_sentence", s.min_sentence);
  s.max_sentence = v.get_or<std::size_t>("max_sentence", s.max_sentence);
  v.done();
  s.validate();
  return s;
}

inline CorpusSpec parse_corpus_spec(ConfigView v) {
  CorpusSpec spec;
  const bool has_file = v.has("file");
  const bool has_synth = v.has("synth");
  require(has_file != has_synth, ErrorKind::Config,
          v.where() + " needs exactly one of 'file' or 'synth'");
  if (has_file) {
    spec.file = v.get<std::string>("file");
  } else {
    spec.use_synth = true;
    spec.synth = parse_synth_text(v.child("synth"));
    spec.sentences = v.get<std::size_t>("sentences");
    spec.seed = v.get<std::uint64_t>("seed");
    require(spec.sentences >= 1, ErrorKind::Config,
            v.where() + ".sentences must be >= 1");
  }
  if (v.has("sample_sentences")) {
    spec.sample_sentences = v.get<std::size_t>("sample_sentences");
    spec.sample_seed = v.get<std::uint64_t>("sample_seed");
    require(spec.sample_sentences >= 1, ErrorKind::Config,
            v.where() + ".sample_sentences must be >= 1");
  }
  v.done();
  return spec;
}

inline SynthImageConfig parse_synth_images(ConfigView v) {
  SynthImageConfig s;
  s.world_seed = v.get_or<std::uint64_t>("world_seed", s.world_seed);
  s.rows = v.get_or<std::size_t>("rows", s.rows);
  s.cols = v.get_or<std::size_t>("cols", s.cols);
  s.classes = v.get_or<std::size_t>("classes", s.classes);
  s.noise = v.get_or<double>("noise", s.noise);
  v.done();
  s.validate();
  return s;
}

inline ImageSourceSpec parse_image_source(ConfigView v) {
  ImageSourceSpec spec;
  const bool has_files = v.has("images") || v.has("labels");
  const bool has_synth = v.has("synth");
  require(has_files != has_synth, ErrorKind::Config,
          v.where() + " needs either 'images'+'labels' or 'synth'");
  if (has_files) {
    spec.images = v.get<std::string>("images");
    spec.labels = v.get<std::string>("labels");
  } else {
    spec.use_synth = true;
    spec.synth = parse_synth_images(v.child("synth"));
    spec.count = v.get<std::size_t>("count");
    spec.seed = v.get<std::uint64_t>("seed");
    require(spec.count >= 1, ErrorKind::Config, v.where() + ".count must be >= 1");
  }
  v.done();
  return spec;
}

inline LmConfig parse_lm_model(ConfigView v) {
  LmConfig m;
  m.embed_width = v.get<std::size_t>("embed");
  m.hidden_widths = v.get<std::vector<std::size_t>>("hidden");
  m.dropout = v.get_or<double>("dropout", 0.0);
  m.bptt = v.get_or<std::size_t>("bptt", 20);
  v.done();
  return m;  // vocabulary dimension comes from the data; validated then
}

inline LmDataConfig parse_lm_data(ConfigView v) {
  LmDataConfig d;
  d.vocab_size = v.get<std::size_t>("vocab_size");
  d.general_train = parse_corpus_spec(v.child("general_train"));
  d.general_test = parse_corpus_spec(v.child("general_test"));
  d.user_train = parse_corpus_spec(v.child("user_train"));
  d.user_test = parse_corpus_spec(v.child("user_test"));
  v.done();
  return d;
}

inline ImageDataConfig parse_image_data(ConfigView v) {
  ImageDataConfig d;
  d.train = parse_image_source(v.child("train"));
  d.test = parse_image_source(v.child("test"));
  d.permute_seed = v.get<std::uint64_t>("permute_seed");
  v.done();
  return d;
}

inline PretrainPlan parse_pretrain(ConfigView v) {
  PretrainPlan p;
  p.epochs = v.get<std::size_t>("epochs");
  p.sgd = parse_sgd(v.child("sgd"));
  v.done();
  return p;
}

inline ClientConfig parse_client(ConfigView v) {
  ClientConfig c;
  c.method = parse_client_method(v.get<std::string>("method"));
  c.lambda = v.get_or<double>("lambda", 1.0);
  c.epochs = v.get_or<std::size_t>("epochs", 1);
  c.rehearsal_block = v.get_or<std::size_t>("rehearsal_block", c.rehearsal_block);
  c.sgd = parse_sgd(v.child("sgd"));
  v.done();
  c.validate();
  return c;
}

inline AggregationConfig parse_aggregation(ConfigView v) {
  AggregationConfig a;
  a.mode = parse_aggregation_mode(v.get_or<std::string>("mode", "average"));
  a.clients_per_round = v.get<std::size_t>("clients_per_round");
  a.distill_epochs = v.get_or<std::size_t>("distill_epochs", a.distill_epochs);
  a.generated_tokens = v.get_or<std::size_t>("generated_tokens", a.generated_tokens);
  a.generated_sentence_len =
      v.get_or<std::size_t>("generated_sentence_len", a.generated_sentence_len);
  if (v.has("cadence")) a.cadence = parse_distill_cadence(v.get<std::string>("cadence"));
  // The optimizer key is only meaningful when distilling; with plain
  // averaging it would be dead config, so done() flags it as unknown.
  if (a.mode != AggregationMode::average) a.sgd = parse_sgd(v.child("sgd"));
  v.done();
  a.validate();
  return a;
}

inline TextShardPlan parse_text_shards(ConfigView v) {
  TextShardPlan s;
  s.count = v.get<std::size_t>("count");
  s.tokens = v.get<std::size_t>("tokens");
  v.done();
  return s;
}

inline ImageShardPlan parse_image_shards(ConfigView v) {
  ImageShardPlan s;
  s.count = v.get<std::size_t>("count");
  s.per_node = v.get<std::size_t>("per_node");
  v.done();
  return s;
}

inline FinetunePlan parse_finetune(ConfigView v, Scenario scenario) {
  FinetunePlan f;
  f.base_checkpoint = v.get<std::string>("base_checkpoint");
  f.rounds = v.get<std::size_t>("rounds");
  f.policy = parse_node_policy(v.get_or<std::string>(
      "node_policy", scenario == Scenario::lm_finetune ? "single_use" : "cycle"));
  f.client = parse_client(v.child("client"));
  f.agg = parse_aggregation(v.child("aggregation"));
  if (scenario == Scenario::lm_finetune) {
    f.text_shards = parse_text_shards(v.child("shards"));
  } else {
    f.image_shards = parse_image_shards(v.child("shards"));
  }
  v.done();
  return f;
}

inline AuditPlan parse_audit(ConfigView v) {
  AuditPlan a;
  a.base_checkpoint = v.get<std::string>("base_checkpoint");
  a.pairs = v.get<std::size_t>("pairs");
  a.samples = v.get<std::size_t>("samples");
  a.seq_len = v.get<std::size_t>("seq_len");
  a.deltas = v.get<std::vector<double>>("deltas");
  const std::string adjacency = v.get_or<std::string>("adjacency", "remove");
  require(adjacency == "remove" || adjacency == "replace", ErrorKind::Config,
          v.where() + ".adjacency must be 'remove' or 'replace'");
  a.replace = adjacency == "replace";
  a.subset = v.get<std::size_t>("subset");
  a.shards = parse_text_shards(v.child("shards"));
  a.rounds = v.get<std::size_t>("rounds");
  a.policy = parse_node_policy(v.get_or<std::string>("node_policy", "cycle"));
  a.client = parse_client(v.child("client"));
  a.agg = parse_aggregation(v.child("aggregation"));
  require(a.pairs >= 1, ErrorKind::Config, v.where() + ".pairs must be >= 1");
  require(a.rounds >= 1, ErrorKind::Config, v.where() + ".rounds must be >= 1");
  require(a.subset >= 2, ErrorKind::Config,
          v.where() + ".subset must hold at least two shards");
  require(a.subset <= a.shards.count, ErrorKind::Config,
          v.where() + ".subset cannot exceed the shard count");
  require(!a.replace || a.shards.count > a.subset, ErrorKind::Config,
          v.where() + ": replacement adjacency needs a shard outside the subset");
  v.done();
  return a;
}

// Parameter count of the language model by pure arithmetic, so that
// paper-scale shapes can be accounted without allocating them.
inline std::uint64_t lm_param_count(const LmConfig& m) {
  std::uint64_t n = static_cast<std::uint64_t>(m.vocab) * m.embed_width;  // embedding
  std::uint64_t in = m.embed_width;
  for (const std::size_t h : m.hidden_widths) {
    n += 4ull * h * (in + h + 1);  // fused gate block: wx, wh, bias
    in = h;
  }
  n += static_cast<std::uint64_t>(m.vocab) * (in + 1);  // output projection
  return n;
}

inline CommPlan parse_comm(ConfigView v) {
  CommPlan c;
  const bool has_count = v.has("param_count");
  const bool has_model = v.has("model");
  require(has_count != has_model, ErrorKind::Config,
          v.where() + " needs exactly one of 'param_count' or 'model'");
  if (has_count) {
    c.param_count = v.get<std::uint64_t>("param_count");
  } else {
    c.from_model = true;
    ConfigView m = v.child("model");
    c.model.vocab = m.get<std::size_t>("vocab");
    c.model.embed_width = m.get<std::size_t>("embed");
    c.model.hidden_widths = m.get<std::vector<std::size_t>>("hidden");
    m.done();
  }
  c.clients_per_round = v.get<std::uint64_t>("clients_per_round");
  c.rounds = v.get<std::uint64_t>("rounds");
  c.bytes_per_param = v.get_or<std::uint64_t>("bytes_per_param", 8);
  v.done();
  return c;
}

inline KssConfig parse_kss(ConfigView v) {
  KssConfig k;
  k.list_size = v.get_or<std::size_t>("list_size", k.list_size);
  require(k.list_size >= 1, ErrorKind::Config, v.where() + ".list_size must be >= 1");
  v.done();
  return k;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& root) {
  detail::ConfigView v(root, "config");
  ExperimentConfig cfg;
  cfg.scenario = parse_scenario(v.get<std::string>("scenario"));
  cfg.seed = v.get<std::uint64_t>("seed");  // always explicit; never wall clock
  cfg.threads = v.get_or<std::size_t>("threads", 1);
  require(cfg.threads >= 1, ErrorKind::Config, "config.threads must be >= 1");

  switch (cfg.scenario) {
    case Scenario::lm_finetune: {
      cfg.lm_model = detail::parse_lm_model(v.child("model"));
      cfg.lm_data = detail::parse_lm_data(v.child("data"));
      if (v.has("pretrain")) {
        cfg.has_pretrain = true;
        cfg.pretrain = detail::parse_pretrain(v.child("pretrain"));
      }
      if (v.has("finetune")) {
        cfg.has_finetune = true;
        cfg.finetune = detail::parse_finetune(v.child("finetune"), cfg.scenario);
      }
      if (v.has("kss")) cfg.kss = detail::parse_kss(v.child("kss"));
      break;
    }
    case Scenario::mnist_permuted: {
      detail::ConfigView m = v.child("model");
      cfg.ff_widths = m.get<std::vector<std::size_t>>("widths");
      require(cfg.ff_widths.size() >= 2, ErrorKind::Config,
              "config.model.widths needs input and output layers");
      cfg.ff_dropout = m.get_or<std::vector<double>>(
          "dropout", std::vector<double>(cfg.ff_widths.size() - 1, 0.0));
      m.done();
      cfg.image_data = detail::parse_image_data(v.child("data"));
      if (v.has("pretrain")) {
        cfg.has_pretrain = true;
        cfg.pretrain = detail::parse_pretrain(v.child("pretrain"));
      }
      if (v.has("finetune")) {
        cfg.has_finetune = true;
        cfg.finetune = detail::parse_finetune(v.child("finetune"), cfg.scenario);
      }
      break;
    }
    case Scenario::dp_audit: {
      cfg.lm_model = detail::parse_lm_model(v.child("model"));
      cfg.lm_data = detail::parse_lm_data(v.child("data"));
      if (v.has("pretrain")) {
        cfg.has_pretrain = true;
        cfg.pretrain = detail::parse_pretrain(v.child("pretrain"));
      }
      if (v.has("audit")) {
        cfg.has_audit = true;
        cfg.audit = detail::parse_audit(v.child("audit"));
      }
      if (v.has("kss")) cfg.kss = detail::parse_kss(v.child("kss"));
      break;
    }
    case Scenario::comm_report: {
      cfg.comm = detail::parse_comm(v.child("comm"));
      break;
    }
  }
  v.done();
  return cfg;
}

// Output directory with a content-hash manifest: every artifact a command
// writes is recorded as (file, bytes, fnv1a64), so a rerun can be checked
// for bitwise reproducibility by comparing manifests alone.
class ArtifactDir {
 public:
  explicit ArtifactDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    require(!ec, ErrorKind::Io, "cannot create output directory " + dir + ": " + ec.message());
  }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  void put_text(const std::string& rel, const std::string& content) {
    const std::string p = path(rel);
    std::ofstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + p);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    require(f.good(), ErrorKind::Io, "failed while writing " + p);
    entries_[rel] = {content.size(), fnv1a64(content)};
  }

  void put_json(const std::string& rel, const nlohmann::json& j) { put_text(rel, j.dump(2) + "\n"); }

  // Record a file some library routine already wrote into the directory.
  void track(const std::string& rel) {
    const std::string p = path(rel);
    std::ifstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot read back " + p);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    entries_[rel] = {data.size(), fnv1a64(data)};
  }

  void write_manifest() {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& [rel, info] : entries_) {
      files.push_back({{"file", rel}, {"bytes", info.first}, {"fnv1a64", detail::hex64(info.second)}});
    }
    nlohmann::json m;
    m["artifacts"] = files;
    const std::string p = path("manifest.json");
    std::ofstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + p);
    f << m.dump(2) << "\n";
    require(f.good(), ErrorKind::Io, "failed while writing " + p);
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> entries_;
};

// ---- data materialization ----

inline std::vector<std::vector<std::string>> corpus_sentences(const CorpusSpec& spec) {
  const std::string text = spec.use_synth
                               ? TextSynthesizer(spec.synth).sentences(spec.sentences, spec.seed)
                               : read_text_file(spec.file);
  auto sents = tokenize(text);
  require(!sents.empty(), ErrorKind::Input, "corpus source has no sentences");
  if (spec.sample_sentences > 0) {
    require(spec.sample_sentences <= sents.size(), ErrorKind::Input,
            "cannot sample more sentences than the corpus holds");
    std::vector<std::size_t> idx(sents.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(spec.sample_seed, "sentence-sample"));
    rng.shuffle(idx);
    idx.resize(spec.sample_sentences);
    std::sort(idx.begin(), idx.end());  // keep the original reading order
    std::vector<std::vector<std::string>> picked;
    picked.reserve(idx.size());
    for (const std::size_t i : idx) picked.push_back(std::move(sents[i]));
    sents = std::move(picked);
  }
  return sents;
}

inline TextCorpus load_corpus(const CorpusSpec& spec, std::shared_ptr<const Vocab> vocab,
                              const std::string& tag) {
  return encode_corpus(corpus_sentences(spec), std::move(vocab), tag);
}

struct LmBundle {
  std::shared_ptr<const Vocab> vocab;
  TextCorpus general_train;
  TextCorpus general_test;
  TextCorpus user_train;
  TextCorpus user_test;
};

// The vocabulary is built from the general training text alone; user-only
// words fall to the out-of-vocabulary token, exactly like words a base
// keyboard model has never seen.
inline LmBundle load_lm_bundle(const LmDataConfig& d) {
  LmBundle out;
  auto general_sents = corpus_sentences(d.general_train);
  out.vocab = build_vocab(general_sents, d.vocab_size);
  out.general_train = encode_corpus(general_sents, out.vocab, "general");
  out.general_test = load_corpus(d.general_test, out.vocab, "general");
  out.user_train = load_corpus(d.user_train, out.vocab, "user");
  out.user_test = load_corpus(d.user_test, out.vocab, "user");
  return out;
}

inline ImageDataset load_images(const ImageSourceSpec& spec) {
  if (spec.use_synth) return synth_images(spec.synth, spec.count, spec.seed);
  return load_image_dataset(spec.images, spec.labels);
}

inline void load_checkpoint_into(ParameterVector& params, const std::string& path) {
  const ParameterVector loaded = read_checkpoint(path);
  require(loaded.same_layout(params), ErrorKind::Layout,
          "checkpoint " + path + " does not match the configured model shape");
  std::copy(loaded.values().begin(), loaded.values().end(), params.values().begin());
}

// ---- commands ----

namespace detail {

// Pretraining is ordinary plain fine-tuning with the whole split as one
// node's shard, so the base model goes through the exact same training path
// as every client.
inline TextShard whole_corpus_shard(const TextCorpus& corpus) {
  TextShard s;
  s.node = 0;
  s.ids = corpus.ids;
  s.token_indices.resize(corpus.ids.size());
  std::iota(s.token_indices.begin(), s.token_indices.end(), std::size_t{0});
  for (const int id : corpus.ids) s.bytes += corpus.vocab->word_of(id).size() + 1;
  return s;
}

inline ImageShard whole_dataset_shard(const ImageDataset& data) {
  ImageShard s;
  s.node = 0;
  s.indices.resize(data.size());
  std::iota(s.indices.begin(), s.indices.end(), std::size_t{0});
  s.bytes = data.size() * (data.feature_len() + 1);
  return s;
}

}  // namespace detail

inline nlohmann::json cmd_pretrain(const ExperimentConfig& cfg, const std::string& raw_config,
                                   const std::string& out_dir) {
  require(cfg.has_pretrain, ErrorKind::Config, "config has no pretrain block");
  ArtifactDir dir(out_dir);
  dir.put_text("config.json", raw_config);

  nlohmann::json summary;
  summary["command"] = "pretrain";
  summary["scenario"] = scenario_name(cfg.scenario);
  summary["seed"] = cfg.seed;
  summary["checkpoint"] = "base.ckpt";

  if (cfg.scenario == Scenario::lm_finetune || cfg.scenario == Scenario::dp_audit) {
    const LmBundle data = load_lm_bundle(cfg.lm_data);
    LmConfig mc = cfg.lm_model;
    mc.vocab = data.vocab->size();
    RecurrentLM model(mc);
    Rng init(derive_seed(cfg.seed, "init"));
    model.init_weights(init);
    if (cfg.pretrain.epochs > 0) {
      ClientConfig pc;
      pc.method = ClientMethod::plain;
      pc.lambda = 1.0;
      pc.epochs = cfg.pretrain.epochs;
      pc.sgd = cfg.pretrain.sgd;
      pc.seed = derive_seed(cfg.seed, "pretrain");
      model.parameters() =
          train_lm_client(model, detail::whole_corpus_shard(data.general_train), nullptr, pc).params;
    }
    write_checkpoint(dir.path("base.ckpt"), model.parameters());
    dir.track("base.ckpt");
    summary["vocab_size"] = data.vocab->size();
    summary["parameters"] = model.parameters().size();
    summary["epochs"] = cfg.pretrain.epochs;
    summary["general_ppl"] = perplexity(model, data.general_test);
    summary["user_ppl"] = perplexity(model, data.user_test);
    summary["general_kss"] = kss(model, data.general_test, cfg.kss).percent;
    summary["user_kss"] = kss(model, data.user_test, cfg.kss).percent;
    summary["uniform_ppl_baseline"] = static_cast<double>(data.vocab->size());
  } else if (cfg.scenario == Scenario::mnist_permuted) {
    const ImageDataset train = load_images(cfg.image_data.train);
    const ImageDataset test = load_images(cfg.image_data.test);
    require(cfg.ff_widths.front() == train.feature_len(), ErrorKind::Config,
            "model input width must equal the image feature length");
    FeedforwardClassifier model(cfg.ff_widths, cfg.ff_dropout);
    Rng init(derive_seed(cfg.seed, "init"));
    model.init_weights(init);
    if (cfg.pretrain.epochs > 0) {
      ClientConfig pc;
      pc.method = ClientMethod::plain;
      pc.lambda = 1.0;
      pc.epochs = cfg.pretrain.epochs;
      pc.sgd = cfg.pretrain.sgd;
      pc.seed = derive_seed(cfg.seed, "pretrain");
      model.parameters() =
          train_image_client(model, detail::whole_dataset_shard(train), train, nullptr, pc).params;
    }
    write_checkpoint(dir.path("base.ckpt"), model.parameters());
    dir.track("base.ckpt");
    summary["parameters"] = model.parameters().size();
    summary["epochs"] = cfg.pretrain.epochs;
    summary["train_examples"] = train.size();
    summary["test_acc"] = accuracy(model, test);
  } else {
    fail(ErrorKind::Config, "pretrain applies to model-training scenarios only");
  }

  dir.put_json("summary.json", summary);
  dir.write_manifest();
  return summary;
}

inline nlohmann::json cmd_finetune(const ExperimentConfig& cfg, const std::string& raw_config,
                                   const std::string& out_dir) {
  require(cfg.has_finetune, ErrorKind::Config, "config has no finetune block");
  const FinetunePlan& plan = cfg.finetune;
  ArtifactDir dir(out_dir);
  dir.put_text("config.json", raw_config);

  nlohmann::json summary;
  summary["command"] = "finetune";
  summary["scenario"] = scenario_name(cfg.scenario);
  summary["seed"] = cfg.seed;
  summary["rounds"] = plan.rounds;
  summary["clients_per_round"] = plan.agg.clients_per_round;
  summary["method"] = client_method_name(plan.client.method);
  summary["lambda"] = plan.client.lambda;
  summary["aggregation"] = aggregation_mode_name(plan.agg.mode);

  if (cfg.scenario == Scenario::lm_finetune) {
    const LmBundle data = load_lm_bundle(cfg.lm_data);
    LmConfig mc = cfg.lm_model;
    mc.vocab = data.vocab->size();
    RecurrentLM model(mc);
    load_checkpoint_into(model.parameters(), plan.base_checkpoint);

    Rng shard_rng(derive_seed(cfg.seed, "shards"));
    const auto shards =
        shard_text(data.user_train, plan.text_shards.count, plan.text_shards.tokens, shard_rng);
    write_shard_manifest(shards, dir.path("shards.json"));
    dir.track("shards.json");

    LmRunConfig rc;
    rc.client = plan.client;
    rc.agg = plan.agg;
    rc.rounds = plan.rounds;
    rc.policy = plan.policy;
    rc.kss = cfg.kss;
    rc.seed = cfg.seed;
    rc.threads = cfg.threads;
    const LmRunResult res = run_lm_rounds(model, shards, data.general_train, data.user_test,
                                          data.general_test, rc);

    write_lm_round_csv(dir.path("rounds.csv"), res.rounds);
    dir.track("rounds.csv");
    write_checkpoint(dir.path("final.ckpt"), res.model.parameters());
    dir.track("final.ckpt");

    const LmRoundLog& first = res.rounds.front();
    const LmRoundLog& last = res.rounds.back();
    summary["initial"] = {{"user_ppl", first.user_ppl},
                          {"general_ppl", first.general_ppl},
                          {"user_kss", first.user_kss},
                          {"general_kss", first.general_kss},
                          {"mean_ppl", average_ppl(first.general_ppl, first.user_ppl).mean}};
    summary["final"] = {{"user_ppl", last.user_ppl},
                        {"general_ppl", last.general_ppl},
                        {"user_kss", last.user_kss},
                        {"general_kss", last.general_kss},
                        {"mean_ppl", average_ppl(last.general_ppl, last.user_ppl).mean}};
    summary["user_ppl_rel_change"] = (last.user_ppl - first.user_ppl) / first.user_ppl;
    summary["general_ppl_rel_change"] =
        (last.general_ppl - first.general_ppl) / first.general_ppl;
    summary["user_kss_gain_pp"] = last.user_kss - first.user_kss;
    summary["general_kss_drop_pp"] = first.general_kss - last.general_kss;
    summary["cumulative_uploaded_bytes"] = last.cumulative_bytes;
    summary["upload_events"] = plan.rounds * plan.agg.clients_per_round;
  } else if (cfg.scenario == Scenario::mnist_permuted) {
    const ImageDataset old_train = load_images(cfg.image_data.train);
    const ImageDataset old_test = load_images(cfg.image_data.test);
    const ImageDataset new_train = permute_pixels(old_train, cfg.image_data.permute_seed);
    const ImageDataset new_test = permute_pixels(old_test, cfg.image_data.permute_seed);
    require(cfg.ff_widths.front() == new_train.feature_len(), ErrorKind::Config,
            "model input width must equal the image feature length");
    FeedforwardClassifier model(cfg.ff_widths, cfg.ff_dropout);
    load_checkpoint_into(model.parameters(), plan.base_checkpoint);

    Rng shard_rng(derive_seed(cfg.seed, "shards"));
    const auto shards =
        shard_images(new_train, plan.image_shards.count, plan.image_shards.per_node, shard_rng);
    write_shard_manifest(shards, dir.path("shards.json"));
    dir.track("shards.json");

    ImageRunConfig rc;
    rc.client = plan.client;
    rc.agg = plan.agg;
    rc.rounds = plan.rounds;
    rc.policy = plan.policy;
    rc.seed = cfg.seed;
    rc.threads = cfg.threads;
    const ImageRunResult res =
        run_image_rounds(model, shards, new_train, &old_train, new_test, old_test, rc);

    write_image_round_csv(dir.path("rounds.csv"), res.rounds);
    dir.track("rounds.csv");
    write_checkpoint(dir.path("final.ckpt"), res.model.parameters());
    dir.track("final.ckpt");

    const ImageRoundLog& first = res.rounds.front();
    const ImageRoundLog& last = res.rounds.back();
    summary["initial"] = {{"new_acc", first.new_acc}, {"old_acc", first.old_acc}};
    summary["final"] = {{"new_acc", last.new_acc}, {"old_acc", last.old_acc}};
    summary["new_acc_gain_pp"] = last.new_acc - first.new_acc;
    summary["old_acc_drop_pp"] = first.old_acc - last.old_acc;
    summary["cumulative_uploaded_bytes"] = last.cumulative_bytes;
    summary["upload_events"] = plan.rounds * plan.agg.clients_per_round;
  } else {
    fail(ErrorKind::Config, "finetune applies to the lm_finetune or mnist_permuted scenario");
  }

  dir.put_json("summary.json", summary);
  dir.write_manifest();
  return summary;
}

inline nlohmann::json cmd_dp_audit(const ExperimentConfig& cfg, const std::string& raw_config,
                                   const std::string& out_dir) {
  require(cfg.scenario == Scenario::dp_audit, ErrorKind::Config,
          "dp-audit needs the dp_audit scenario");
  require(cfg.has_audit, ErrorKind::Config, "config has no audit block");
  const AuditPlan& plan = cfg.audit;
  ArtifactDir dir(out_dir);
  dir.put_text("config.json", raw_config);

  const LmBundle data = load_lm_bundle(cfg.lm_data);
  LmConfig mc = cfg.lm_model;
  mc.vocab = data.vocab->size();
  RecurrentLM base(mc);
  load_checkpoint_into(base.parameters(), plan.base_checkpoint);

  Rng shard_rng(derive_seed(cfg.seed, "shards"));
  const auto shards = shard_text(data.user_train, plan.shards.count, plan.shards.tokens, shard_rng);
  const std::size_t B = plan.subset;
  require(B - 1 >= plan.agg.clients_per_round, ErrorKind::Config,
          "adjacent sets must keep at least clients_per_round shards after removal");

  // Each pair trains two models from the same base: one on a random subset
  // of B user shards, one on that subset with its first draw removed (or
  // swapped for an outside shard). The differing shard is the audited user.
  std::vector<RecurrentLM> models;
  models.reserve(2 * plan.pairs);
  nlohmann::json pair_desc = nlohmann::json::array();
  const auto train_side = [&](const std::vector<std::size_t>& picked, std::uint64_t seed) {
    std::vector<TextShard> side;
    side.reserve(picked.size());
    for (const std::size_t s : picked) side.push_back(shards[s]);
    LmRunConfig tc;
    tc.client = plan.client;
    tc.agg = plan.agg;
    tc.rounds = plan.rounds;
    tc.policy = plan.policy;
    tc.kss = cfg.kss;
    tc.seed = seed;
    tc.threads = cfg.threads;
    return run_lm_rounds(base, side, data.general_train, data.user_test, data.general_test, tc)
        .model;
  };
  for (std::size_t i = 0; i < plan.pairs; ++i) {
    Rng pick(derive_seed(cfg.seed, "audit-pick", i));
    std::vector<std::size_t> idx(shards.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    pick.shuffle(idx);
    const std::vector<std::size_t> with(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(B));
    std::vector<std::size_t> without(idx.begin() + 1, idx.begin() + static_cast<std::ptrdiff_t>(B));
    if (plan.replace) without.push_back(idx[B]);

    nlohmann::json entry;
    entry["name"] = "pair-" + std::to_string(i + 1);
    entry["shards"] = with;
    entry["removed"] = idx[0];
    if (plan.replace) {
      entry["added"] = idx[B];
    } else {
      entry["added"] = nullptr;
    }
    pair_desc.push_back(entry);

    models.push_back(train_side(with, derive_seed(cfg.seed, "audit-train", 2 * i)));
    models.push_back(train_side(without, derive_seed(cfg.seed, "audit-train", 2 * i + 1)));
  }

  std::vector<AdjacentPair> pairs;
  pairs.reserve(plan.pairs);
  for (std::size_t i = 0; i < plan.pairs; ++i) {
    pairs.push_back({"pair-" + std::to_string(i + 1), &models[2 * i], &models[2 * i + 1]});
  }
  const DPReport report =
      dp_report(pairs, plan.deltas, plan.samples, plan.seq_len, derive_seed(cfg.seed, "audit"));

  dir.put_json("report.json", dp_report_json(report));
  dir.put_json("pairs.json", pair_desc);
  for (const PairAudit& audit : report.pairs) {
    const std::string rel = "ratios_" + audit.name + ".csv";
    write_log_ratio_csv(dir.path(rel), audit.sample);
    dir.track(rel);
  }

  nlohmann::json summary;
  summary["command"] = "dp-audit";
  summary["scenario"] = scenario_name(cfg.scenario);
  summary["seed"] = cfg.seed;
  summary["pairs"] = plan.pairs;
  summary["samples"] = plan.samples;
  summary["seq_len"] = plan.seq_len;
  summary["adjacency"] = plan.replace ? "replace" : "remove";
  summary["accepted_pairs"] = report.accepted_count;
  summary["has_guarantee"] = report.has_guarantee();
  nlohmann::json eps = nlohmann::json::object();
  if (report.has_guarantee()) {
    for (std::size_t i = 0; i < report.deltas.size(); ++i) {
      std::ostringstream key;
      key << std::setprecision(17) << report.deltas[i];
      eps[key.str()] = report.epsilons[i];
    }
  }
  summary["epsilon"] = eps;
  nlohmann::json alphas = nlohmann::json::array();
  for (const PairAudit& audit : report.pairs) {
    alphas.push_back(audit.degenerate ? nlohmann::json() : nlohmann::json(audit.fit.alpha_hat));
  }
  summary["alpha_hats"] = alphas;

  dir.put_json("summary.json", summary);
  dir.write_manifest();
  return summary;
}

inline nlohmann::json cmd_comm_report(const ExperimentConfig& cfg, const std::string& raw_config,
                                      const std::string& out_dir) {
  require(cfg.scenario == Scenario::comm_report, ErrorKind::Config,
          "comm-report needs the comm_report scenario");
  const CommPlan& plan = cfg.comm;
  ArtifactDir dir(out_dir);
  dir.put_text("config.json", raw_config);

  const std::uint64_t params =
      plan.from_model ? detail::lm_param_count(plan.model) : plan.param_count;
  const CommLedger ledger =
      comm_report(params, plan.clients_per_round, plan.rounds, plan.bytes_per_param);

  nlohmann::json summary;
  summary["command"] = "comm-report";
  summary["scenario"] = scenario_name(cfg.scenario);
  summary["parameters"] = params;
  summary["bytes_per_param"] = ledger.bytes_per_param;
  summary["model_bytes"] = ledger.model_bytes;
  summary["model_mib"] = to_mib(ledger.model_bytes);
  summary["round_bytes"] = ledger.round_bytes;
  summary["round_gib"] = to_gib(ledger.round_bytes);
  summary["cumulative_bytes"] = ledger.cumulative_bytes;
  summary["cumulative_gib"] = to_gib(ledger.cumulative_bytes);
  summary["upload_events"] = ledger.upload_events;
  summary["clients_per_round"] = plan.clients_per_round;
  summary["rounds"] = plan.rounds;
  // Published figures for the gradient-compression baseline, carried as
  // fixed reference rows; nothing here recomputes them.
  summary["literature_reference"] = nlohmann::json::array(
      {{{"label", "deep gradient compression, uploaded data"},
        {"value", "21.85 Gb"},
        {"source", "literature"}},
       {{"label", "deep gradient compression, number of uploads"},
        {"value", "5.3e4"},
        {"source", "literature"}}});

  dir.put_json("summary.json", summary);
  dir.write_manifest();
  return summary;
}

enum class Command { pretrain, finetune, dp_audit, comm_report };

inline Command parse_command(const std::string& name) {
  if (name == "pretrain") return Command::pretrain;
  if (name == "finetune") return Command::finetune;
  if (name == "dp-audit") return Command::dp_audit;
  if (name == "comm-report") return Command::comm_report;
  fail(ErrorKind::Config, "unknown command: " + name);
}

inline nlohmann::json run_command(Command cmd, const std::string& config_path,
                                  const std::string& out_dir,
                                  std::optional<std::uint64_t> seed_override = {},
                                  std::optional<std::size_t> threads_override = {}) {
  const std::string raw = read_text_file(config_path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg = parse_experiment_config(root);
  if (seed_override) cfg.seed = *seed_override;
  if (threads_override) {
    require(*threads_override >= 1, ErrorKind::Config, "threads must be >= 1");
    cfg.threads = *threads_override;
  }

  switch (cmd) {
    case Command::pretrain:
      require(cfg.scenario != Scenario::comm_report, ErrorKind::Config,
              "pretrain applies to model-training scenarios only");
      return cmd_pretrain(cfg, raw, out_dir);
    case Command::finetune:
      require(cfg.scenario == Scenario::lm_finetune || cfg.scenario == Scenario::mnist_permuted,
              ErrorKind::Config, "finetune applies to the lm_finetune or mnist_permuted scenario");
      return cmd_finetune(cfg, raw, out_dir);
    case Command::dp_audit:
      return cmd_dp_audit(cfg, raw, out_dir);
    case Command::comm_report:
      return cmd_comm_report(cfg, raw, out_dir);
  }
  fail(ErrorKind::Config, "unreachable command");
}

}  // namespace ftnn
