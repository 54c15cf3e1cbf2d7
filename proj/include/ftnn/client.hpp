#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ftnn/error.hpp"
#include "ftnn/feedforward.hpp"
#include "ftnn/image_data.hpp"
#include "ftnn/lstm.hpp"
#include "ftnn/rng.hpp"
#include "ftnn/sgd.hpp"
#include "ftnn/shard.hpp"
#include "ftnn/soft_targets.hpp"
#include "ftnn/text_corpus.hpp"

namespace ftnn {

enum class ClientMethod { plain, rehearsal, lwf };

inline const char* client_method_name(ClientMethod m) {
  switch (m) {
    case ClientMethod::plain:
      return "plain";
    case ClientMethod::rehearsal:
      return "rehearsal";
    case ClientMethod::lwf:
      return "lwf";
  }
  return "?";
}

inline ClientMethod parse_client_method(const std::string& name) {
  if (name == "plain") return ClientMethod::plain;
  if (name == "rehearsal") return ClientMethod::rehearsal;
  if (name == "lwf") return ClientMethod::lwf;
  fail(ErrorKind::Config, "unknown client method: " + name);
}

// How one simulated device fine-tunes its copy of the server model.
// `lambda` is the user-data share for rehearsal mixing, or the hard-label
// weight for the learning-without-forgetting target.
struct ClientConfig {
  ClientMethod method = ClientMethod::plain;
  double lambda = 1.0;
  std::size_t epochs = 1;
  std::size_t rehearsal_block = 20;  // tokens per inserted general-text block
  SgdConfig sgd;
  std::uint64_t seed = 0;

  void validate() const {
    sgd.validate();
    require(epochs >= 1, ErrorKind::Config, "client training needs at least one epoch");
    switch (method) {
      case ClientMethod::plain:
        require(lambda == 1.0, ErrorKind::Config, "plain training has no lambda; leave it at 1");
        break;
      case ClientMethod::rehearsal:
        require(lambda > 0.0 && lambda <= 1.0, ErrorKind::Config,
                "rehearsal user share must be in (0,1]");
        require(rehearsal_block >= 1, ErrorKind::Config, "rehearsal block length must be >= 1");
        break;
      case ClientMethod::lwf:
        require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Config,
                "hard-label weight must be in [0,1]");
        break;
    }
  }
};

// What a device sends back: its fine-tuned parameters plus accounting. The
// wall-clock figure is telemetry only and sits outside the determinism
// contract; everything else is a pure function of the inputs.
struct ClientUpdate {
  int node = -1;
  ParameterVector params;
  std::size_t trained_items = 0;  // target positions (text) or examples (images)
  double wall_seconds = 0.0;
  std::uint64_t uploaded_bytes = 0;
};

// Truncated-backprop pass over one token stream: the stream is cut into
// `minibatch` parallel strips (fewer if the stream is short), windows advance
// left to right with hidden state carried across windows and reset at epoch
// boundaries. Returns the number of target positions consumed.
inline std::size_t train_lm_stream(RecurrentLM& model, const std::vector<int>& ids,
                                   const SoftTargets<RecurrentLM>& soft, const SgdConfig& sgd,
                                   std::size_t epochs, Rng* dropout_rng, SgdState& opt) {
  sgd.validate();
  soft.validate(model);
  require(epochs >= 1, ErrorKind::Config, "training needs at least one epoch");
  require(ids.size() >= 2, ErrorKind::Input, "training stream needs at least two tokens");

  const std::size_t strips = std::min<std::size_t>(sgd.minibatch, ids.size() - 1);
  const std::size_t strip_len = (ids.size() - 1) / strips;
  const std::size_t bptt = model.config().bptt;
  const bool distill = soft.lambda < 1.0;

  std::size_t positions = 0;
  ParameterVector grad;
  LmWindow window;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<LmState> states(strips, model.initial_state());
    std::vector<std::vector<LmState>> teacher_states;
    if (distill) {
      for (const auto* t : soft.teachers) {
        teacher_states.emplace_back(strips, t->initial_state());
      }
    }
    for (std::size_t t0 = 0; t0 < strip_len; t0 += bptt) {
      const std::size_t width = std::min(bptt, strip_len - t0);
      window.inputs.assign(strips, {});
      window.targets.assign(strips, {});
      for (std::size_t b = 0; b < strips; ++b) {
        window.inputs[b].reserve(width);
        window.targets[b].reserve(width);
        for (std::size_t j = 0; j < width; ++j) {
          const std::size_t idx = b * strip_len + t0 + j;
          window.inputs[b].push_back(ids[idx]);
          window.targets[b].push_back(ids[idx + 1]);
        }
      }
      model.loss_and_grad(window, soft, states, distill ? &teacher_states : nullptr, dropout_rng,
                          grad);
      opt.step(model.parameters(), grad, sgd);
      positions += strips * width;
    }
  }
  return positions;
}

namespace detail {

inline ClientUpdate finish_lm_update(int node, RecurrentLM&& model, std::size_t items,
                                     std::chrono::steady_clock::time_point t0) {
  ClientUpdate u;
  u.node = node;
  u.uploaded_bytes = model.parameters().layout().checkpoint_bytes();
  u.params = std::move(model.parameters());
  u.trained_items = items;
  u.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return u;
}

}  // namespace detail

// Hard-label fine-tuning on the node's own text only.
inline ClientUpdate train_plain(const RecurrentLM& server, const TextShard& shard,
                                const ClientConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  require(cfg.method == ClientMethod::plain, ErrorKind::Config, "config is not for plain training");
  RecurrentLM model = server;
  Rng dropout(derive_seed(cfg.seed, "train"));
  SgdState opt;
  const std::size_t items =
      train_lm_stream(model, shard.ids, {.lambda = 1.0, .teachers = {}}, cfg.sgd, cfg.epochs, &dropout, opt);
  return detail::finish_lm_update(shard.node, std::move(model), items, t0);
}

// Random rehearsal: the node's text is interleaved with general-corpus blocks
// so the training stream carries a `lambda` share of user data, then trained
// with hard labels. The mix is drawn once per update, not per epoch.
inline ClientUpdate train_rehearsal(const RecurrentLM& server, const TextShard& shard,
                                    const TextCorpus& general, const ClientConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  require(cfg.method == ClientMethod::rehearsal, ErrorKind::Config,
          "config is not for rehearsal training");
  require(general.vocab != nullptr && general.vocab->size() == server.vocab(), ErrorKind::Layout,
          "general corpus vocabulary does not match the model");
  TextCorpus user;
  user.vocab = general.vocab;
  user.ids = shard.ids;
  user.tag = "user-shard";

  Rng mix_rng(derive_seed(cfg.seed, "mix"));
  const TextCorpus mixed = mix_rehearsal(user, general, cfg.lambda, cfg.rehearsal_block, mix_rng);

  RecurrentLM model = server;
  Rng dropout(derive_seed(cfg.seed, "train"));
  SgdState opt;
  const std::size_t items =
      train_lm_stream(model, mixed.ids, {.lambda = 1.0, .teachers = {}}, cfg.sgd, cfg.epochs, &dropout, opt);
  return detail::finish_lm_update(shard.node, std::move(model), items, t0);
}

// Learning without forgetting: trains on the node's text only, but each
// position's target mixes the hard label (weight lambda) with the frozen
// incoming server model's prediction (weight 1 - lambda).
inline ClientUpdate train_lwf(const RecurrentLM& server, const TextShard& shard,
                              const ClientConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  require(cfg.method == ClientMethod::lwf, ErrorKind::Config, "config is not for lwf training");
  RecurrentLM model = server;
  Rng dropout(derive_seed(cfg.seed, "train"));
  SgdState opt;
  const SoftTargets<RecurrentLM> soft{.lambda = cfg.lambda, .teachers = {&server}};
  const std::size_t items =
      train_lm_stream(model, shard.ids, soft, cfg.sgd, cfg.epochs, &dropout, opt);
  return detail::finish_lm_update(shard.node, std::move(model), items, t0);
}

// Method dispatch used by the round driver. `general` is required for
// rehearsal and ignored otherwise.
inline ClientUpdate train_lm_client(const RecurrentLM& server, const TextShard& shard,
                                    const TextCorpus* general, const ClientConfig& cfg) {
  switch (cfg.method) {
    case ClientMethod::plain:
      return train_plain(server, shard, cfg);
    case ClientMethod::rehearsal:
      require(general != nullptr, ErrorKind::Config, "rehearsal needs a general corpus");
      return train_rehearsal(server, shard, *general, cfg);
    case ClientMethod::lwf:
      return train_lwf(server, shard, cfg);
  }
  fail(ErrorKind::Config, "unknown client method");
}

// Image-classifier counterpart. Examples have no stream continuity, so every
// method shuffles the example order per epoch from the same derived stream;
// rehearsal additionally appends general-task examples drawn (with
// replacement) from its own stream, keeping the user share at lambda. With
// lambda = 1 nothing is drawn and rehearsal reduces to plain bitwise.
inline ClientUpdate train_image_client(const FeedforwardClassifier& server, const ImageShard& shard,
                                       const ImageDataset& task, const ImageDataset* general,
                                       const ClientConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  require(!shard.indices.empty(), ErrorKind::Input, "image shard is empty");

  std::vector<VecExample> examples;
  examples.reserve(shard.indices.size());
  for (const std::size_t idx : shard.indices) {
    require(idx < task.size(), ErrorKind::Input, "shard index outside the dataset");
    examples.push_back({task.examples[idx], task.labels[idx]});
  }

  if (cfg.method == ClientMethod::rehearsal && cfg.lambda < 1.0) {
    require(general != nullptr && general->size() > 0, ErrorKind::Config,
            "rehearsal needs a non-empty general dataset");
    require(general->rows * general->cols == task.rows * task.cols, ErrorKind::Layout,
            "general dataset feature size does not match the task");
    Rng mix_rng(derive_seed(cfg.seed, "mix"));
    const double user_count = static_cast<double>(shard.indices.size());
    const auto inserts =
        static_cast<std::size_t>(std::llround(user_count * (1.0 - cfg.lambda) / cfg.lambda));
    for (std::size_t i = 0; i < inserts; ++i) {
      const std::size_t idx = mix_rng.below(general->size());
      examples.push_back({general->examples[idx], general->labels[idx]});
    }
  }

  FeedforwardClassifier model = server;
  SoftTargets<FeedforwardClassifier> soft{.lambda = 1.0, .teachers = {}};
  if (cfg.method == ClientMethod::lwf) {
    soft.lambda = cfg.lambda;
    if (cfg.lambda < 1.0) soft.teachers.push_back(&server);
  }

  Rng order_rng(derive_seed(cfg.seed, "order"));
  Rng dropout(derive_seed(cfg.seed, "train"));
  SgdState opt;
  ParameterVector grad;
  std::vector<std::size_t> order(examples.size());
  std::vector<VecExample> batch;
  std::size_t items = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += cfg.sgd.minibatch) {
      const std::size_t stop = std::min(order.size(), at + cfg.sgd.minibatch);
      batch.clear();
      for (std::size_t i = at; i < stop; ++i) batch.push_back(examples[order[i]]);
      model.loss_and_grad(batch, soft, &dropout, grad);
      opt.step(model.parameters(), grad, cfg.sgd);
      items += batch.size();
    }
  }

  ClientUpdate u;
  u.node = shard.node;
  u.uploaded_bytes = model.parameters().layout().checkpoint_bytes();
  u.params = std::move(model.parameters());
  u.trained_items = items;
  u.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return u;
}

}  // namespace ftnn
