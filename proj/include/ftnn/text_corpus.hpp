#pragma once

#include <algorithm>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ftnn/error.hpp"
#include "ftnn/rng.hpp"

namespace ftnn {

// Token ids 0 and 1 are reserved in every vocabulary.
inline constexpr int kOovId = 0;
inline constexpr int kBoundaryId = 1;
inline constexpr const char* kOovWord = "<unk>";
inline constexpr const char* kBoundaryWord = "<s>";

class Vocab {
 public:
  explicit Vocab(std::vector<std::string> ranked_words) {
    words_.reserve(ranked_words.size() + 2);
    words_.emplace_back(kOovWord);
    words_.emplace_back(kBoundaryWord);
    for (auto& w : ranked_words) words_.push_back(std::move(w));
    for (std::size_t i = 0; i < words_.size(); ++i) {
      const bool fresh = ids_.emplace(words_[i], static_cast<int>(i)).second;
      require(fresh, ErrorKind::Input, "duplicate word in vocabulary: " + words_[i]);
    }
  }

  std::size_t size() const { return words_.size(); }

  bool contains(const std::string& word) const { return ids_.count(word) != 0; }

  // Unknown words map to the OOV id.
  int id_of(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kOovId : it->second;
  }

  const std::string& word_of(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < words_.size(), ErrorKind::Input,
            "token id out of vocabulary range");
    return words_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocab& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Whitespace tokenization, one sentence per line. Blank lines are skipped.
inline std::vector<std::vector<std::string>> tokenize(const std::string& text) {
  std::vector<std::vector<std::string>> sentences;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream words(line);
    std::vector<std::string> sentence;
    std::string w;
    while (words >> w) sentence.push_back(std::move(w));
    if (!sentence.empty()) sentences.push_back(std::move(sentence));
  }
  return sentences;
}

// Keep the top (max_size - 2) words by frequency, ties broken by ascending
// lexicographic order, below the two reserved ids.
inline std::shared_ptr<const Vocab> build_vocab(const std::vector<std::vector<std::string>>& sentences,
                                                std::size_t max_size) {
  require(max_size >= 3, ErrorKind::Config, "vocabulary must have room beyond the reserved ids");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& w : s) ++counts[w];
  }
  require(!counts.empty(), ErrorKind::Input, "cannot build a vocabulary from empty text");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), max_size - 2);
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) words.push_back(ranked[i].first);
  return std::make_shared<const Vocab>(std::move(words));
}

inline std::shared_ptr<const Vocab> build_vocab(const std::string& text, std::size_t max_size) {
  return build_vocab(tokenize(text), max_size);
}

// A tokenized corpus: the encoded id stream carries a boundary token after
// every sentence; the original sentences are kept so evaluation can present
// out-of-vocabulary words exactly as the user would type them.
struct TextCorpus {
  std::shared_ptr<const Vocab> vocab;
  std::vector<int> ids;
  std::vector<std::vector<std::string>> sentences;
  std::string tag;  // "general" or "user"

  std::size_t tokens() const { return ids.size(); }
};

inline TextCorpus encode_corpus(const std::vector<std::vector<std::string>>& sentences,
                                std::shared_ptr<const Vocab> vocab, std::string tag) {
  require(vocab != nullptr, ErrorKind::Input, "encode needs a vocabulary");
  TextCorpus corpus;
  corpus.vocab = std::move(vocab);
  corpus.sentences = sentences;
  corpus.tag = std::move(tag);
  for (const auto& s : sentences) {
    for (const auto& w : s) corpus.ids.push_back(corpus.vocab->id_of(w));
    corpus.ids.push_back(kBoundaryId);
  }
  return corpus;
}

inline TextCorpus encode_corpus(const std::string& text, std::shared_ptr<const Vocab> vocab,
                                std::string tag) {
  return encode_corpus(tokenize(text), std::move(vocab), std::move(tag));
}

// Inverse of encode_corpus up to OOV substitution: one sentence per line,
// boundary ids end lines.
inline std::string decode_ids(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  bool line_start = true;
  for (int id : ids) {
    if (id == kBoundaryId) {
      out.push_back('\n');
      line_start = true;
      continue;
    }
    if (!line_start) out.push_back(' ');
    out += vocab.word_of(id);
    line_start = false;
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::Io, "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Random-rehearsal training mix: the full user stream in its original order,
// plus enough uniformly sampled block-length slices of the general stream to
// bring the user share down to lambda. Blocks land at uniformly chosen gaps
// in the user stream. lambda = 1 returns the user corpus unchanged and draws
// nothing from the rng.
inline TextCorpus mix_rehearsal(const TextCorpus& user, const TextCorpus& general, double lambda,
                                std::size_t block_len, Rng& rng) {
  require(lambda > 0.0 && lambda <= 1.0, ErrorKind::Config,
          "user share must be in (0,1]; train on the general corpus directly instead of lambda=0");
  require(user.vocab != nullptr && general.vocab != nullptr, ErrorKind::Input,
          "mix needs encoded corpora");
  require(user.vocab == general.vocab || *user.vocab == *general.vocab, ErrorKind::Input,
          "rehearsal mix requires a shared vocabulary");
  require(block_len >= 1, ErrorKind::Config, "block length must be >= 1");

  TextCorpus out;
  out.vocab = user.vocab;
  out.tag = user.tag;
  if (lambda == 1.0) {
    out.ids = user.ids;
    out.sentences = user.sentences;
    return out;
  }
  require(general.ids.size() >= block_len, ErrorKind::Input,
          "general corpus shorter than one rehearsal block");

  const double user_len = static_cast<double>(user.ids.size());
  const double general_target = user_len * (1.0 - lambda) / lambda;
  const auto blocks =
      static_cast<std::size_t>(std::llround(general_target / static_cast<double>(block_len)));

  // One uniformly drawn start per block, then one uniformly drawn insertion
  // gap per block; ties keep draw order.
  std::vector<std::size_t> starts(blocks), gaps(blocks);
  for (auto& s : starts) s = rng.below(general.ids.size() - block_len + 1);
  for (auto& g : gaps) g = rng.below(user.ids.size() + 1);
  std::vector<std::size_t> order(blocks);
  for (std::size_t i = 0; i < blocks; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return gaps[a] < gaps[b]; });

  out.ids.reserve(user.ids.size() + blocks * block_len);
  std::size_t next = 0;
  for (std::size_t pos = 0; pos <= user.ids.size(); ++pos) {
    while (next < blocks && gaps[order[next]] == pos) {
      const std::size_t s = starts[order[next]];
      out.ids.insert(out.ids.end(), general.ids.begin() + static_cast<std::ptrdiff_t>(s),
                     general.ids.begin() + static_cast<std::ptrdiff_t>(s + block_len));
      ++next;
    }
    if (pos < user.ids.size()) out.ids.push_back(user.ids[pos]);
  }
  return out;
}

}  // namespace ftnn
