#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ftnn/error.hpp"
#include "ftnn/feedforward.hpp"
#include "ftnn/image_data.hpp"
#include "ftnn/linalg.hpp"
#include "ftnn/lstm.hpp"
#include "ftnn/text_corpus.hpp"

namespace ftnn {

// exp of the mean per-token negative log likelihood over the whole stream,
// hidden state carried across sentence boundaries, dropout off.
inline double perplexity(const RecurrentLM& model, const TextCorpus& test) {
  require(!test.ids.empty(), ErrorKind::Input, "perplexity needs a non-empty test stream");
  require(test.vocab != nullptr && test.vocab->size() == model.vocab(), ErrorKind::Input,
          "test corpus vocabulary does not match the model");
  return std::exp(-model.sequence_logprob(test.ids) / static_cast<double>(test.ids.size()));
}

// Arithmetic mean of the two perplexities; the raw pair travels with it so
// logs never lose the split.
struct PplPair {
  double general = 0.0;
  double user = 0.0;
  double mean = 0.0;
};

inline PplPair average_ppl(double general_ppl, double user_ppl) {
  require(general_ppl > 0.0 && user_ppl > 0.0, ErrorKind::Input, "perplexities must be positive");
  return {general_ppl, user_ppl, 0.5 * (general_ppl + user_ppl)};
}

struct KssConfig {
  std::size_t list_size = 3;
};

struct KssResult {
  std::size_t chars_total = 0;
  std::size_t chars_typed = 0;
  double percent = 0.0;
};

// Keystroke savings with a prefix-filtered suggestion list. Typing is
// simulated word by word: the next-word distribution is computed once per
// word from the carried sentence context, the suggestion list is checked
// before the first keypress and after each typed character, and a hit saves
// the remaining characters. Words outside the vocabulary are never
// suggestible and cost their full length. Reserved ids are not candidates.
inline KssResult kss(const RecurrentLM& model, const TextCorpus& test, const KssConfig& cfg = {}) {
  require(cfg.list_size >= 1, ErrorKind::Config, "suggestion list must hold at least one item");
  require(!test.sentences.empty(), ErrorKind::Input, "keystroke test needs sentences");
  require(test.vocab != nullptr && test.vocab->size() == model.vocab(), ErrorKind::Input,
          "test corpus vocabulary does not match the model");
  const Vocab& vocab = *test.vocab;

  KssResult result;
  LmState state = model.initial_state();
  // (probability, id) pairs ordered best-first; ties prefer the lower id.
  std::vector<std::pair<double, int>> top;
  for (const auto& sentence : test.sentences) {
    for (const auto& word : sentence) {
      const std::size_t n = word.size();
      result.chars_total += n;
      const int encoded = vocab.id_of(word);
      const bool in_vocab = vocab.contains(word);
      if (!in_vocab) {
        result.chars_typed += n;
      } else {
        const auto dist = model.predict(state);
        std::size_t typed_here = n;
        for (std::size_t k = 0; k < n; ++k) {
          top.clear();
          for (std::size_t id = 2; id < vocab.size(); ++id) {
            const std::string& cand = vocab.word_of(static_cast<int>(id));
            if (cand.size() < k || cand.compare(0, k, word, 0, k) != 0) continue;
            const std::pair<double, int> entry{dist[id], static_cast<int>(id)};
            // Insertion sort into the running top list: higher probability
            // first, lower id on equal probability.
            auto pos = top.begin();
            while (pos != top.end() &&
                   (pos->first > entry.first ||
                    (pos->first == entry.first && pos->second < entry.second))) {
              ++pos;
            }
            if (static_cast<std::size_t>(pos - top.begin()) < cfg.list_size) {
              top.insert(pos, entry);
              if (top.size() > cfg.list_size) top.pop_back();
            }
          }
          bool hit = false;
          for (const auto& entry : top) {
            if (entry.second == encoded) hit = true;
          }
          if (hit) {
            typed_here = k;
            break;
          }
        }
        result.chars_typed += typed_here;
      }
      model.step(state, encoded);
    }
    model.step(state, kBoundaryId);
  }
  require(result.chars_total > 0, ErrorKind::Input, "keystroke test contains no characters");
  result.percent = 100.0 *
                   static_cast<double>(result.chars_total - result.chars_typed) /
                   static_cast<double>(result.chars_total);
  return result;
}

// Percentage of examples whose argmax class (lowest id on ties) matches.
inline double accuracy(const FeedforwardClassifier& model, const ImageDataset& test) {
  require(test.size() > 0, ErrorKind::Input, "accuracy needs a non-empty test set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (model.classify(test.examples[i]) == test.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

// Exact integer byte accounting for model uploads. Width is 4 to match the
// published 32-bit figures or 8 for this artifact's own checkpoints.
struct CommLedger {
  std::uint64_t bytes_per_param = 0;
  std::uint64_t model_bytes = 0;
  std::uint64_t round_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  std::uint64_t upload_events = 0;
};

inline CommLedger comm_report(std::uint64_t param_count, std::uint64_t clients_per_round,
                              std::uint64_t rounds, std::uint64_t bytes_per_param = 8) {
  require(param_count > 0 && clients_per_round > 0 && rounds > 0, ErrorKind::Input,
          "communication accounting needs positive counts");
  require(bytes_per_param == 4 || bytes_per_param == 8, ErrorKind::Config,
          "parameters are accounted at 4 or 8 bytes");
  CommLedger ledger;
  ledger.bytes_per_param = bytes_per_param;
  ledger.model_bytes = param_count * bytes_per_param;
  ledger.round_bytes = clients_per_round * ledger.model_bytes;
  ledger.cumulative_bytes = rounds * ledger.round_bytes;
  ledger.upload_events = rounds * clients_per_round;
  return ledger;
}

inline double to_mib(std::uint64_t bytes) {
  return static_cast<double>(bytes) / (1024.0 * 1024.0);
}

inline double to_gib(std::uint64_t bytes) {
  return static_cast<double>(bytes) / (1024.0 * 1024.0 * 1024.0);
}

}  // namespace ftnn
