#include <catch2/catch_amalgamated.hpp>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ftnn/image_data.hpp"
#include "ftnn/synth.hpp"

using namespace ftnn;

namespace {

template <typename Fn>
ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an ftnn::Error");
  return ErrorKind::Input;
}

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

TEST_CASE("pseudo words are distinct and prefix-rich", "[synth]") {
  std::set<std::string> seen;
  for (std::size_t id = 0; id < 6400; ++id) {
    const auto w = pseudo_word(id);
    REQUIRE(w.size() >= 4);
    REQUIRE(w.size() <= 8);
    seen.insert(w);
  }
  REQUIRE(seen.size() == 6400);
  // Consecutive ids share the first syllable — built-in prefix rivals.
  REQUIRE(pseudo_word(0).substr(0, 2) == pseudo_word(1).substr(0, 2));
  REQUIRE(pseudo_word(0) != pseudo_word(1));
}

TEST_CASE("dialect generation is deterministic per seed and salt", "[synth]") {
  SynthTextConfig cfg;
  cfg.lexicon = 300;
  const TextSynthesizer synth(cfg);

  const auto a = synth.sentences(50, 7);
  const auto b = synth.sentences(50, 7);
  const auto c = synth.sentences(50, 8);
  REQUIRE(a == b);
  REQUIRE_FALSE(a == c);

  auto restyled = cfg;
  restyled.style_salt = 3;
  const TextSynthesizer other(restyled);
  REQUIRE_FALSE(other.sentences(50, 7) == a);

  for (const char ch : a) {
    REQUIRE((std::islower(static_cast<unsigned char>(ch)) || ch == ' ' || ch == '\n'));
  }
  std::size_t lines = 0;
  for (const char ch : a) lines += ch == '\n';
  REQUIRE(lines == 50);
}

TEST_CASE("sentence lengths respect the configured range", "[synth]") {
  SynthTextConfig cfg;
  cfg.lexicon = 200;
  cfg.min_sentence = 4;
  cfg.max_sentence = 9;
  const TextSynthesizer synth(cfg);
  std::istringstream in(synth.sentences(300, 11));
  std::string line;
  std::set<std::size_t> lengths;
  while (std::getline(in, line)) {
    const auto n = words_of(line).size();
    REQUIRE(n >= 4);
    REQUIRE(n <= 9);
    lengths.insert(n);
  }
  REQUIRE(lengths.size() == 6);  // every length appears across 300 draws
}

TEST_CASE("styles share a lexicon but diverge where salted", "[synth]") {
  SynthTextConfig general;
  general.lexicon = 400;
  SynthTextConfig user = general;
  user.style_salt = 1;
  user.exclusive_begin = 400;
  user.exclusive_count = 40;
  user.exclusive_rate = 0.08;

  const TextSynthesizer g(general), u(user);
  const auto g_text = g.sentences(800, 21);
  const auto u_text = u.sentences(800, 22);

  std::set<std::string> exclusive_words;
  for (std::size_t id = 400; id < 440; ++id) exclusive_words.insert(pseudo_word(id));

  std::size_t user_exclusive = 0;
  for (const auto& w : words_of(u_text)) user_exclusive += exclusive_words.count(w);
  REQUIRE(user_exclusive > 0);  // the user dialect has words of its own
  for (const auto& w : words_of(g_text)) REQUIRE(exclusive_words.count(w) == 0);

  // Most of the vocabulary is common ground: both dialects draw from the
  // same shared Zipf head.
  std::set<std::string> g_vocab, u_vocab;
  for (const auto& w : words_of(g_text)) g_vocab.insert(w);
  for (const auto& w : words_of(u_text)) u_vocab.insert(w);
  std::size_t common = 0;
  for (const auto& w : g_vocab) common += u_vocab.count(w);
  REQUIRE(common > g_vocab.size() / 2);
}

TEST_CASE("successors come from a sparse table", "[synth]") {
  SynthTextConfig cfg;
  cfg.lexicon = 150;
  cfg.fan_out = 12;
  cfg.bigram_weight = 1.0;  // every transition uses the table
  const TextSynthesizer synth(cfg);

  std::map<std::string, std::set<std::string>> followers;
  std::istringstream in(synth.sentences(2000, 31));
  std::string line;
  while (std::getline(in, line)) {
    const auto words = words_of(line);
    for (std::size_t i = 0; i + 1 < words.size(); ++i) followers[words[i]].insert(words[i + 1]);
  }
  std::size_t max_followers = 0;
  for (const auto& [w, next] : followers) max_followers = std::max(max_followers, next.size());
  REQUIRE(max_followers <= 12);
  REQUIRE(max_followers >= 6);  // the head word's slots all get exercised
}

TEST_CASE("dialect configs are validated", "[synth]") {
  SynthTextConfig cfg;
  cfg.lexicon = 10;
  REQUIRE(error_kind_of([&] { TextSynthesizer s(cfg); }) == ErrorKind::Config);
  cfg = {};
  cfg.exclusive_begin = 100;  // inside the shared lexicon
  cfg.exclusive_count = 10;
  REQUIRE(error_kind_of([&] { TextSynthesizer s(cfg); }) == ErrorKind::Config);
  cfg = {};
  cfg.exclusive_rate = 0.1;  // without a block to draw from
  REQUIRE(error_kind_of([&] { TextSynthesizer s(cfg); }) == ErrorKind::Config);
  cfg = {};
  cfg.fan_out = 1;
  REQUIRE(error_kind_of([&] { TextSynthesizer s(cfg); }) == ErrorKind::Config);
  cfg = {};
  const TextSynthesizer ok(cfg);
  REQUIRE(error_kind_of([&] { ok.sentences(0, 1); }) == ErrorKind::Input);
}

TEST_CASE("synthetic images are noisy prototypes on the byte grid", "[synth]") {
  SynthImageConfig cfg;
  cfg.rows = 8;
  cfg.cols = 8;
  cfg.classes = 4;
  cfg.noise = 0.2;

  const auto data = synth_images(cfg, 500, 5);
  REQUIRE(data.size() == 500);
  REQUIRE(data.rows == 8);
  REQUIRE(data.feature_len() == 64);
  std::set<int> labels_seen;
  for (std::size_t i = 0; i < data.size(); ++i) {
    REQUIRE(data.labels[i] >= 0);
    REQUIRE(data.labels[i] < 4);
    labels_seen.insert(data.labels[i]);
    for (const double v : data.examples[i]) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      const double scaled = v * 255.0;
      REQUIRE(std::abs(scaled - std::round(scaled)) < 1e-9);
    }
  }
  REQUIRE(labels_seen.size() == 4);

  SECTION("deterministic per seed") {
    const auto again = synth_images(cfg, 500, 5);
    REQUIRE(data.examples == again.examples);
    REQUIRE(data.labels == again.labels);
    const auto other = synth_images(cfg, 500, 6);
    REQUIRE_FALSE(data.examples == other.examples);
  }

  SECTION("zero noise reproduces the prototypes exactly") {
    auto clean_cfg = cfg;
    clean_cfg.noise = 0.0;
    const auto clean = synth_images(clean_cfg, 40, 7);
    const auto protos = synth_image_prototypes(clean_cfg);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const auto& proto = protos[static_cast<std::size_t>(clean.labels[i])];
      for (std::size_t p = 0; p < proto.size(); ++p) {
        REQUIRE(clean.examples[i][p] == std::round(proto[p] * 255.0) / 255.0);
      }
    }
  }

  SECTION("file round-trip is bitwise") {
    const std::string ipath = "synth_test_images.idx";
    const std::string lpath = "synth_test_labels.idx";
    save_image_dataset(data, ipath, lpath);
    const auto loaded = load_image_dataset(ipath, lpath);
    REQUIRE(loaded.examples == data.examples);
    REQUIRE(loaded.labels == data.labels);
    std::remove(ipath.c_str());
    std::remove(lpath.c_str());
  }
}
