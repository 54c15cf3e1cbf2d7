#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ftnn/client.hpp"
#include "ftnn/error.hpp"
#include "ftnn/metrics.hpp"

namespace ftnn {

enum class AggregationMode { average, distill_real, distill_generated };

inline const char* aggregation_mode_name(AggregationMode m) {
  switch (m) {
    case AggregationMode::average:
      return "average";
    case AggregationMode::distill_real:
      return "distill_real";
    case AggregationMode::distill_generated:
      return "distill_generated";
  }
  return "?";
}

inline AggregationMode parse_aggregation_mode(const std::string& name) {
  if (name == "average") return AggregationMode::average;
  if (name == "distill_real") return AggregationMode::distill_real;
  if (name == "distill_generated") return AggregationMode::distill_generated;
  fail(ErrorKind::Config, "unknown aggregation mode: " + name);
}

// Whether distillation text is drawn once per round or freshly per epoch.
enum class DistillCadence { once, per_epoch };

inline DistillCadence parse_distill_cadence(const std::string& name) {
  if (name == "once") return DistillCadence::once;
  if (name == "per_epoch") return DistillCadence::per_epoch;
  fail(ErrorKind::Config, "unknown distillation cadence: " + name);
}

struct AggregationConfig {
  AggregationMode mode = AggregationMode::average;
  std::size_t clients_per_round = 5;  // K
  std::size_t distill_epochs = 1;
  std::size_t generated_tokens = 2000;
  std::size_t generated_sentence_len = 20;
  DistillCadence cadence = DistillCadence::once;
  SgdConfig sgd;  // distillation optimizer; unused when averaging

  void validate() const {
    require(clients_per_round >= 1, ErrorKind::Config, "need at least one client per round");
    if (mode != AggregationMode::average) {
      sgd.validate();
      require(distill_epochs >= 1, ErrorKind::Config, "distillation needs at least one epoch");
      if (mode == AggregationMode::distill_generated) {
        require(generated_tokens >= 2, ErrorKind::Config,
                "generated corpus must hold at least two tokens");
        require(generated_sentence_len >= 1, ErrorKind::Config,
                "generated sequences must hold at least one token");
      }
    }
  }
};

// FIFO of client updates awaiting aggregation. A round fires once K updates
// trained against the current server version are queued; mixing versions in
// one round is a protocol violation, as is the same node appearing twice.
class RoundQueue {
 public:
  explicit RoundQueue(std::size_t k) : k_(k) {
    require(k >= 1, ErrorKind::Config, "round size must be >= 1");
  }

  std::size_t round_size() const { return k_; }
  std::size_t pending() const { return entries_.size(); }

  void push(ClientUpdate update, std::uint64_t server_version) {
    if (!entries_.empty()) {
      require(entries_.front().update.params.same_layout(update.params), ErrorKind::Layout,
              "queued update layout mismatch");
    }
    entries_.push_back({std::move(update), server_version});
  }

  bool round_ready(std::uint64_t server_version) const {
    if (entries_.size() < k_) return false;
    for (std::size_t i = 0; i < k_; ++i) {
      if (entries_[i].version != server_version) return false;
    }
    return true;
  }

  std::vector<ClientUpdate> take_round(std::uint64_t server_version) {
    require(entries_.size() >= k_, ErrorKind::Protocol, "round is not full");
    std::vector<ClientUpdate> out;
    out.reserve(k_);
    for (std::size_t i = 0; i < k_; ++i) {
      require(entries_.front().version == server_version, ErrorKind::Protocol,
              "queued update was trained against a different server version");
      for (const auto& taken : out) {
        require(taken.node != entries_.front().update.node, ErrorKind::Protocol,
                "node appears twice in one round");
      }
      out.push_back(std::move(entries_.front().update));
      entries_.pop_front();
    }
    return out;
  }

 private:
  struct Entry {
    ClientUpdate update;
    std::uint64_t version = 0;
  };
  std::size_t k_;
  std::deque<Entry> entries_;
};

// Unweighted element-wise mean of the round's client parameters, folded left
// over ascending node id. The incoming server model is not part of the mean
// (every client started from it). Accumulation runs at extended precision so
// K identical updates reproduce that parameter vector bitwise.
inline ParameterVector average_round(std::span<const ClientUpdate> updates) {
  require(!updates.empty(), ErrorKind::Protocol, "cannot average an empty round");
  std::vector<const ClientUpdate*> sorted;
  sorted.reserve(updates.size());
  for (const auto& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->node < b->node; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    require(sorted[i - 1]->node != sorted[i]->node, ErrorKind::Protocol,
            "node appears twice in one round");
  }

  std::vector<std::span<const double>> vals;
  vals.reserve(sorted.size());
  for (const auto* u : sorted) {
    require(u->params.same_layout(sorted[0]->params), ErrorKind::Layout,
            "client update layout mismatch");
    vals.push_back(u->params.values());
  }

  ParameterVector mean(sorted[0]->params.layout_ptr());
  auto out = mean.values();
  const auto k = static_cast<long double>(sorted.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    long double acc = 0.0L;
    for (const auto& v : vals) acc += v[i];
    out[i] = static_cast<double>(acc / k);
  }
  return mean;
}

// Text sampled from the model, cut into sentences at the emitted boundary
// tokens. Used as distillation training data.
inline TextCorpus generate_corpus(const RecurrentLM& model, std::shared_ptr<const Vocab> vocab,
                                  std::size_t min_tokens, std::size_t sentence_len, Rng& rng) {
  require(min_tokens >= 1, ErrorKind::Input, "generated corpus size must be >= 1");
  require(sentence_len >= 1, ErrorKind::Input, "generated sequence length must be >= 1");
  require(vocab != nullptr && vocab->size() == model.vocab(), ErrorKind::Input,
          "vocabulary does not match the model");
  TextCorpus out;
  out.vocab = std::move(vocab);
  out.tag = "generated";
  while (out.ids.size() < min_tokens) {
    const auto seq = model.sample_sequence(sentence_len, rng);
    out.ids.insert(out.ids.end(), seq.begin(), seq.end());
  }
  std::vector<std::string> sentence;
  for (const int id : out.ids) {
    if (id == kBoundaryId) {
      if (!sentence.empty()) out.sentences.push_back(std::move(sentence));
      sentence.clear();
    } else {
      sentence.push_back(out.vocab->word_of(id));
    }
  }
  if (!sentence.empty()) out.sentences.push_back(std::move(sentence));
  return out;
}

// Transfer-learning aggregation: the student starts from the current server
// model and trains toward the mean next-word distribution of the K client
// models over a common text — held-out real text, or text sampled from the
// incoming server model itself.
inline RecurrentLM distill_round(const RecurrentLM& server, std::span<const ClientUpdate> updates,
                                 const TextCorpus* real_text, const AggregationConfig& cfg,
                                 std::shared_ptr<const Vocab> vocab, std::uint64_t seed) {
  cfg.validate();
  require(cfg.mode != AggregationMode::average, ErrorKind::Config,
          "distill_round called in averaging mode");
  require(!updates.empty(), ErrorKind::Protocol, "cannot distill from an empty round");

  // Teachers in ascending node order so the target mean is summed in a fixed
  // order regardless of arrival.
  std::vector<const ClientUpdate*> sorted;
  for (const auto& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->node < b->node; });
  std::vector<RecurrentLM> teacher_models;
  teacher_models.reserve(sorted.size());
  for (const auto* u : sorted) {
    require(u->params.same_layout(server.parameters()), ErrorKind::Layout,
            "client update layout mismatch");
    RecurrentLM t(server.config());
    t.parameters() = u->params;
    teacher_models.push_back(std::move(t));
  }
  SoftTargets<RecurrentLM> soft{.lambda = 0.0, .teachers = {}};
  for (const auto& t : teacher_models) soft.teachers.push_back(&t);

  RecurrentLM student = server;
  Rng dropout(derive_seed(seed, "train"));
  SgdState opt;

  if (cfg.mode == AggregationMode::distill_real) {
    require(real_text != nullptr && real_text->ids.size() >= 2, ErrorKind::Config,
            "real-text distillation needs a held-out corpus");
    train_lm_stream(student, real_text->ids, soft, cfg.sgd, cfg.distill_epochs, &dropout, opt);
  } else if (cfg.cadence == DistillCadence::once) {
    Rng gen(derive_seed(seed, "gen"));
    const auto text = generate_corpus(server, vocab, cfg.generated_tokens,
                                      cfg.generated_sentence_len, gen);
    train_lm_stream(student, text.ids, soft, cfg.sgd, cfg.distill_epochs, &dropout, opt);
  } else {
    for (std::size_t e = 0; e < cfg.distill_epochs; ++e) {
      Rng gen(derive_seed(seed, "gen", e));
      const auto text = generate_corpus(server, vocab, cfg.generated_tokens,
                                        cfg.generated_sentence_len, gen);
      train_lm_stream(student, text.ids, soft, cfg.sgd, 1, &dropout, opt);
    }
  }
  return student;
}

// Which nodes may be drawn: each at most once over the whole run (the
// protocol's on-device data is used only once), or cycling when the scenario
// deliberately revisits devices.
enum class NodePolicy { single_use, cycle };

inline NodePolicy parse_node_policy(const std::string& name) {
  if (name == "single_use") return NodePolicy::single_use;
  if (name == "cycle") return NodePolicy::cycle;
  fail(ErrorKind::Config, "unknown node policy: " + name);
}

namespace detail {

// Runs `count` client trainings, optionally across a small thread pool; the
// per-slot seeds are fixed up front so the schedule never affects results.
template <class TrainFn>
std::vector<ClientUpdate> run_round_clients(std::size_t count, std::size_t threads, TrainFn&& fn) {
  std::vector<ClientUpdate> updates(count);
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
  if (workers == 1) {
    for (std::size_t s = 0; s < count; ++s) updates[s] = fn(s);
    return updates;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        while (true) {
          const std::size_t s = next.fetch_add(1);
          if (s >= count) return;
          updates[s] = fn(s);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return updates;
}

// Node draw order fixed once by the run seed; `cursor` advances across
// rounds. single_use never wraps (the driver checked capacity up front).
inline std::size_t draw_node(const std::vector<std::size_t>& order, std::size_t& cursor,
                             NodePolicy policy) {
  const std::size_t idx = order[cursor % order.size()];
  ++cursor;
  if (policy == NodePolicy::single_use) {
    require(cursor <= order.size(), ErrorKind::Config, "node supply exhausted");
  }
  return idx;
}

}  // namespace detail

struct LmRoundLog {
  std::size_t round = 0;
  double user_ppl = 0.0;
  double general_ppl = 0.0;
  double user_kss = 0.0;
  double general_kss = 0.0;
  std::uint64_t uploaded_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  std::uint64_t seed = 0;
};

struct ImageRoundLog {
  std::size_t round = 0;
  double new_acc = 0.0;
  double old_acc = 0.0;
  std::uint64_t uploaded_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  std::uint64_t seed = 0;
};

struct LmRunConfig {
  ClientConfig client;
  AggregationConfig agg;
  std::size_t rounds = 30;
  NodePolicy policy = NodePolicy::single_use;
  KssConfig kss;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct LmRunResult {
  RecurrentLM model;
  std::vector<LmRoundLog> rounds;  // row 0 is the untouched initial model
};

// The full fine-tuning protocol for text: draw K fresh nodes, train their
// clients, aggregate, evaluate on both held-out sets, log; repeat. The
// general training corpus doubles as the rehearsal source and, for real-text
// distillation, the distillation corpus.
inline LmRunResult run_lm_rounds(const RecurrentLM& initial, const std::vector<TextShard>& shards,
                                 const TextCorpus& general_train, const TextCorpus& user_test,
                                 const TextCorpus& general_test, const LmRunConfig& cfg) {
  cfg.client.validate();
  cfg.agg.validate();
  const std::size_t K = cfg.agg.clients_per_round;
  if (cfg.policy == NodePolicy::single_use) {
    require(shards.size() >= cfg.rounds * K, ErrorKind::Config,
            "not enough shards: single-use nodes need rounds x K of them");
  } else {
    require(shards.size() >= K, ErrorKind::Config, "need at least K shards to cycle through");
  }

  std::vector<std::size_t> order(shards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng node_rng(derive_seed(cfg.seed, "nodes"));
  node_rng.shuffle(order);

  RecurrentLM model = initial;
  std::vector<LmRoundLog> rows;
  rows.reserve(cfg.rounds + 1);
  const auto evaluate = [&](std::size_t round, std::uint64_t uploaded, std::uint64_t cumulative) {
    LmRoundLog row;
    row.round = round;
    row.user_ppl = perplexity(model, user_test);
    row.general_ppl = perplexity(model, general_test);
    row.user_kss = kss(model, user_test, cfg.kss).percent;
    row.general_kss = kss(model, general_test, cfg.kss).percent;
    row.uploaded_bytes = uploaded;
    row.cumulative_bytes = cumulative;
    row.seed = cfg.seed;
    return row;
  };
  rows.push_back(evaluate(0, 0, 0));

  RoundQueue queue(K);
  std::uint64_t version = 0;
  std::uint64_t cumulative = 0;
  std::size_t cursor = 0;
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    std::vector<const TextShard*> picked;
    picked.reserve(K);
    for (std::size_t s = 0; s < K; ++s) {
      picked.push_back(&shards[detail::draw_node(order, cursor, cfg.policy)]);
    }
    auto updates = detail::run_round_clients(K, cfg.threads, [&](std::size_t s) {
      ClientConfig slot = cfg.client;
      slot.seed = derive_seed(cfg.seed, "client", (r - 1) * K + s);
      return train_lm_client(model, *picked[s], &general_train, slot);
    });
    std::uint64_t uploaded = 0;
    for (auto& u : updates) {
      uploaded += u.uploaded_bytes;
      queue.push(std::move(u), version);
    }
    const auto round_updates = queue.take_round(version);
    ++version;

    if (cfg.agg.mode == AggregationMode::average) {
      model.parameters() = average_round(round_updates);
    } else {
      model = distill_round(model, round_updates, &general_train, cfg.agg, general_train.vocab,
                            derive_seed(cfg.seed, "distill", r));
    }
    cumulative += uploaded;
    rows.push_back(evaluate(r, uploaded, cumulative));
  }
  return {std::move(model), std::move(rows)};
}

struct ImageRunConfig {
  ClientConfig client;
  AggregationConfig agg;
  std::size_t rounds = 100;
  NodePolicy policy = NodePolicy::cycle;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ImageRunResult {
  FeedforwardClassifier model;
  std::vector<ImageRoundLog> rounds;  // row 0 is the untouched initial model
};

// Image counterpart: new-task shards fine-tune the classifier; rehearsal
// mixes in old-task examples. Aggregation is averaging only.
inline ImageRunResult run_image_rounds(const FeedforwardClassifier& initial,
                                       const std::vector<ImageShard>& shards,
                                       const ImageDataset& task, const ImageDataset* general,
                                       const ImageDataset& new_test, const ImageDataset& old_test,
                                       const ImageRunConfig& cfg) {
  cfg.client.validate();
  cfg.agg.validate();
  require(cfg.agg.mode == AggregationMode::average, ErrorKind::Config,
          "image rounds aggregate by averaging");
  const std::size_t K = cfg.agg.clients_per_round;
  if (cfg.policy == NodePolicy::single_use) {
    require(shards.size() >= cfg.rounds * K, ErrorKind::Config,
            "not enough shards: single-use nodes need rounds x K of them");
  } else {
    require(shards.size() >= K, ErrorKind::Config, "need at least K shards to cycle through");
  }

  std::vector<std::size_t> order(shards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng node_rng(derive_seed(cfg.seed, "nodes"));
  node_rng.shuffle(order);

  FeedforwardClassifier model = initial;
  std::vector<ImageRoundLog> rows;
  rows.reserve(cfg.rounds + 1);
  const auto evaluate = [&](std::size_t round, std::uint64_t uploaded, std::uint64_t cumulative) {
    ImageRoundLog row;
    row.round = round;
    row.new_acc = accuracy(model, new_test);
    row.old_acc = accuracy(model, old_test);
    row.uploaded_bytes = uploaded;
    row.cumulative_bytes = cumulative;
    row.seed = cfg.seed;
    return row;
  };
  rows.push_back(evaluate(0, 0, 0));

  RoundQueue queue(K);
  std::uint64_t version = 0;
  std::uint64_t cumulative = 0;
  std::size_t cursor = 0;
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    std::vector<const ImageShard*> picked;
    picked.reserve(K);
    for (std::size_t s = 0; s < K; ++s) {
      picked.push_back(&shards[detail::draw_node(order, cursor, cfg.policy)]);
    }
    auto updates = detail::run_round_clients(K, cfg.threads, [&](std::size_t s) {
      ClientConfig slot = cfg.client;
      slot.seed = derive_seed(cfg.seed, "client", (r - 1) * K + s);
      return train_image_client(model, *picked[s], task, general, slot);
    });
    std::uint64_t uploaded = 0;
    for (auto& u : updates) {
      uploaded += u.uploaded_bytes;
      queue.push(std::move(u), version);
    }
    const auto round_updates = queue.take_round(version);
    ++version;
    model.parameters() = average_round(round_updates);
    cumulative += uploaded;
    rows.push_back(evaluate(r, uploaded, cumulative));
  }
  return {std::move(model), std::move(rows)};
}

// Plot-ready per-round logs; one row per round including row 0 for the
// initial model.
inline void write_lm_round_csv(const std::string& path, std::span<const LmRoundLog> rows) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << "round,user_ppl,general_ppl,user_kss,general_kss,uploaded_bytes,cumulative_bytes,seed\n";
  out << std::setprecision(17);
  for (const auto& row : rows) {
    out << row.round << ',' << row.user_ppl << ',' << row.general_ppl << ',' << row.user_kss << ','
        << row.general_kss << ',' << row.uploaded_bytes << ',' << row.cumulative_bytes << ','
        << row.seed << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed while writing " + path);
}

inline void write_image_round_csv(const std::string& path, std::span<const ImageRoundLog> rows) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << "round,new_acc,old_acc,uploaded_bytes,cumulative_bytes,seed\n";
  out << std::setprecision(17);
  for (const auto& row : rows) {
    out << row.round << ',' << row.new_acc << ',' << row.old_acc << ',' << row.uploaded_bytes << ','
        << row.cumulative_bytes << ',' << row.seed << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed while writing " + path);
}

}  // namespace ftnn
