#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ftnn/error.hpp"
#include "ftnn/image_data.hpp"
#include "ftnn/rng.hpp"

namespace ftnn {

// Deterministic syllabic pseudo-word for a lexicon id: two consonant-vowel
// syllables from a fixed inventory, so nearby ids share prefixes and the
// suggestion list always has plausible prefix rivals. Ids below 6400 are
// guaranteed distinct words.
inline std::string pseudo_word(std::size_t id) {
  static const char* onsets[16] = {"b", "d",  "f", "g", "k", "l", "m",  "n",
                                   "p", "r",  "s", "t", "v", "z", "br", "st"};
  static const char* vowels[5] = {"a", "e", "i", "o", "u"};
  const auto syllable = [&](std::size_t d) {
    return std::string(onsets[d / 5]) + vowels[d % 5];
  };
  return syllable(id / 80 % 80) + syllable(id % 80);
}

// A synthetic dialect: Zipf unigrams over a shared pseudo-word lexicon plus
// a sparse hash-derived bigram table (each word gets `fan_out` preferred
// successors with Zipf weights). Dialects of one world share the lexicon and
// the bigram table except where the style salt re-rolls successor slots and
// mixes in a block of style-exclusive words — that contrast is what makes
// "general" and "user" text genuinely different to a model.
struct SynthTextConfig {
  std::uint64_t world_seed = 1;
  std::uint64_t style_salt = 0;     // 0 keeps the base dialect
  std::size_t lexicon = 2200;       // shared word ids [0, lexicon)
  std::size_t exclusive_begin = 0;  // style-only ids [begin, begin + count)
  std::size_t exclusive_count = 0;
  double exclusive_rate = 0.0;      // unigram draws landing in the exclusive block
  std::size_t fan_out = 24;
  double bigram_weight = 0.75;      // draws that follow the bigram table
  double restyle_rate = 0.35;       // successor slots the salt re-rolls
  double zipf_unigram = 1.08;       // shallower: many words stay in play
  double zipf_successor = 1.2;      // steeper: a clear favorite successor
  std::size_t min_sentence = 5;
  std::size_t max_sentence = 15;

  void validate() const {
    require(lexicon >= 50, ErrorKind::Config, "lexicon must hold at least 50 words");
    require(lexicon + exclusive_count <= 6400, ErrorKind::Config,
            "lexicon plus exclusives exceeds the distinct pseudo-word space");
    require(exclusive_count == 0 || exclusive_begin >= lexicon, ErrorKind::Config,
            "exclusive block must sit outside the shared lexicon");
    require(exclusive_rate >= 0.0 && exclusive_rate < 1.0, ErrorKind::Config,
            "exclusive rate must be in [0,1)");
    require(exclusive_rate == 0.0 || exclusive_count > 0, ErrorKind::Config,
            "exclusive rate needs a non-empty exclusive block");
    require(fan_out >= 2 && fan_out <= lexicon, ErrorKind::Config,
            "successor fan-out must be in [2, lexicon]");
    require(bigram_weight >= 0.0 && bigram_weight <= 1.0, ErrorKind::Config,
            "bigram weight must be in [0,1]");
    require(restyle_rate >= 0.0 && restyle_rate <= 1.0, ErrorKind::Config,
            "restyle rate must be in [0,1]");
    require(min_sentence >= 2 && min_sentence <= max_sentence, ErrorKind::Config,
            "sentence length range is empty or too short");
  }
};

namespace detail {

// Cumulative Zipf(s) weights over n ranks, for binary-search sampling.
inline std::vector<double> zipf_cdf(std::size_t n, double s) {
  std::vector<double> cdf(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    total += 1.0 / std::pow(static_cast<double>(r + 1), s);
    cdf[r] = total;
  }
  for (auto& c : cdf) c /= total;
  return cdf;
}

inline std::size_t pick_cdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.next_double();
  return static_cast<std::size_t>(
      std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

// Uniform [0,1) value derived from a seed, for per-slot style decisions.
inline double seed_fraction(std::uint64_t seed) {
  std::uint64_t s = seed;
  return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

}  // namespace detail

// Precomputes the dialect's tables once; sentence generation is then a cheap
// walk. Immutable after construction, safe to share across threads.
class TextSynthesizer {
 public:
  explicit TextSynthesizer(SynthTextConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    unigram_cdf_ = detail::zipf_cdf(cfg_.lexicon, cfg_.zipf_unigram);
    successor_cdf_ = detail::zipf_cdf(cfg_.fan_out, cfg_.zipf_successor);
    if (cfg_.exclusive_count > 0) {
      exclusive_cdf_ = detail::zipf_cdf(cfg_.exclusive_count, cfg_.zipf_unigram);
    }

    // The bigram table: slot j of word w points at a hash-derived id. A slot
    // whose style draw falls under the restyle rate is re-rolled with the
    // salt, so two dialects agree except on that fraction of slots.
    successors_.resize(cfg_.lexicon * cfg_.fan_out);
    const std::uint64_t styled = derive_seed(cfg_.world_seed, "style", cfg_.style_salt);
    for (std::size_t w = 0; w < cfg_.lexicon; ++w) {
      for (std::size_t j = 0; j < cfg_.fan_out; ++j) {
        const std::size_t slot = w * cfg_.fan_out + j;
        std::uint64_t h = derive_seed(cfg_.world_seed, "succ", slot);
        if (cfg_.style_salt != 0 &&
            detail::seed_fraction(derive_seed(styled, "flip", slot)) < cfg_.restyle_rate) {
          h = derive_seed(styled, "succ", slot);
        }
        successors_[slot] = h % cfg_.lexicon;
      }
    }
  }

  const SynthTextConfig& config() const { return cfg_; }

  // One sentence per line, words separated by single spaces.
  std::string sentences(std::size_t count, std::uint64_t seed) const {
    require(count >= 1, ErrorKind::Input, "need at least one sentence");
    Rng rng(derive_seed(seed, "synth-text"));
    std::string out;
    out.reserve(count * cfg_.max_sentence * 7);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t len =
          cfg_.min_sentence + rng.below(cfg_.max_sentence - cfg_.min_sentence + 1);
      std::size_t word = draw_unigram(rng);
      out += pseudo_word(word);
      for (std::size_t t = 1; t < len; ++t) {
        word = draw_next(word, rng);
        out += ' ';
        out += pseudo_word(word);
      }
      out += '\n';
    }
    return out;
  }

 private:
  std::size_t draw_unigram(Rng& rng) const {
    if (cfg_.exclusive_count > 0 && rng.next_double() < cfg_.exclusive_rate) {
      return cfg_.exclusive_begin + detail::pick_cdf(exclusive_cdf_, rng);
    }
    return detail::pick_cdf(unigram_cdf_, rng);
  }

  std::size_t draw_next(std::size_t prev, Rng& rng) const {
    // Exclusive words carry no successor row; fall back to the unigram.
    if (prev < cfg_.lexicon && rng.next_double() < cfg_.bigram_weight) {
      const std::size_t j = detail::pick_cdf(successor_cdf_, rng);
      return successors_[prev * cfg_.fan_out + j];
    }
    return draw_unigram(rng);
  }

  SynthTextConfig cfg_;
  std::vector<double> unigram_cdf_, successor_cdf_, exclusive_cdf_;
  std::vector<std::size_t> successors_;
};

// Class-prototype images: each class gets a fixed random pattern, examples
// are the pattern plus per-pixel Gaussian noise. Pixels are quantized to the
// byte grid up front so file round-trips are bitwise.
struct SynthImageConfig {
  std::uint64_t world_seed = 1;
  std::size_t rows = 16;
  std::size_t cols = 16;
  std::size_t classes = 10;
  double noise = 0.25;

  void validate() const {
    require(rows >= 2 && cols >= 2, ErrorKind::Config, "images must be at least 2x2");
    require(classes >= 2, ErrorKind::Config, "need at least two classes");
    require(noise >= 0.0, ErrorKind::Config, "noise must be >= 0");
  }
};

inline std::vector<std::vector<double>> synth_image_prototypes(const SynthImageConfig& cfg) {
  cfg.validate();
  const std::size_t npix = cfg.rows * cfg.cols;
  std::vector<std::vector<double>> protos(cfg.classes, std::vector<double>(npix));
  Rng rng(derive_seed(cfg.world_seed, "proto"));
  for (auto& proto : protos) {
    for (auto& p : proto) p = rng.next_double();
  }
  return protos;
}

inline ImageDataset synth_images(const SynthImageConfig& cfg, std::size_t count,
                                 std::uint64_t seed) {
  cfg.validate();
  require(count >= 1, ErrorKind::Input, "need at least one example");
  const auto protos = synth_image_prototypes(cfg);
  const std::size_t npix = cfg.rows * cfg.cols;

  ImageDataset data;
  data.rows = cfg.rows;
  data.cols = cfg.cols;
  data.examples.reserve(count);
  data.labels.reserve(count);
  Rng rng(derive_seed(seed, "synth-images"));
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<int>(rng.below(cfg.classes));
    std::vector<double> x(npix);
    for (std::size_t p = 0; p < npix; ++p) {
      const double raw = protos[static_cast<std::size_t>(label)][p] +
                         cfg.noise * rng.gaussian();
      const double clipped = std::clamp(raw, 0.0, 1.0);
      x[p] = std::round(clipped * 255.0) / 255.0;
    }
    data.examples.push_back(std::move(x));
    data.labels.push_back(label);
  }
  return data;
}

}  // namespace ftnn
