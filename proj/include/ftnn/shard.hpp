#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftnn/error.hpp"
#include "ftnn/image_data.hpp"
#include "ftnn/rng.hpp"
#include "ftnn/text_corpus.hpp"

namespace ftnn {

// One node's slice of a text split: a contiguous token window, recorded by
// the token indices it covers. The byte estimate counts the decoded words
// plus one separator each, i.e. what the node would hold on disk.
struct TextShard {
  int node = 0;
  std::vector<std::size_t> token_indices;
  std::vector<int> ids;
  std::size_t bytes = 0;
};

// One node's slice of an image split, by example index. The byte estimate
// assumes byte-quantized pixels plus one label byte per example.
struct ImageShard {
  int node = 0;
  std::vector<std::size_t> indices;
  std::size_t bytes = 0;
};

// Disjoint m-token windows at uniformly shuffled positions. Windows stay
// contiguous so truncated backprop sees natural context.
inline std::vector<TextShard> shard_text(const TextCorpus& corpus, std::size_t node_count,
                                         std::size_t tokens_per_node, Rng& rng) {
  require(node_count >= 1 && tokens_per_node >= 1, ErrorKind::Config,
          "sharding needs at least one node and one token per node");
  require(node_count * tokens_per_node <= corpus.ids.size(), ErrorKind::Input,
          "not enough tokens to shard");
  const std::size_t windows = corpus.ids.size() / tokens_per_node;
  std::vector<std::size_t> order(windows);
  for (std::size_t i = 0; i < windows; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<TextShard> shards(node_count);
  for (std::size_t k = 0; k < node_count; ++k) {
    TextShard& s = shards[k];
    s.node = static_cast<int>(k);
    const std::size_t begin = order[k] * tokens_per_node;
    for (std::size_t i = 0; i < tokens_per_node; ++i) {
      s.token_indices.push_back(begin + i);
      s.ids.push_back(corpus.ids[begin + i]);
      s.bytes += corpus.vocab->word_of(corpus.ids[begin + i]).size() + 1;
    }
  }
  return shards;
}

// Uniform disjoint partition of example indices, node_count * per_node total.
inline std::vector<ImageShard> shard_images(const ImageDataset& data, std::size_t node_count,
                                            std::size_t per_node, Rng& rng) {
  require(node_count >= 1 && per_node >= 1, ErrorKind::Config,
          "sharding needs at least one node and one example per node");
  require(node_count * per_node <= data.size(), ErrorKind::Input,
          "not enough examples to shard");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<ImageShard> shards(node_count);
  for (std::size_t k = 0; k < node_count; ++k) {
    ImageShard& s = shards[k];
    s.node = static_cast<int>(k);
    s.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(k * per_node),
                     order.begin() + static_cast<std::ptrdiff_t>((k + 1) * per_node));
    s.bytes = per_node * (data.feature_len() + 1);
  }
  return shards;
}

template <class ShardT>
nlohmann::json shard_manifest(const std::vector<ShardT>& shards) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : shards) {
    nlohmann::json entry;
    entry["node"] = s.node;
    if constexpr (std::is_same_v<ShardT, TextShard>) {
      entry["indices"] = s.token_indices;
    } else {
      entry["indices"] = s.indices;
    }
    entry["bytes"] = s.bytes;
    out.push_back(entry);
  }
  return out;
}

template <class ShardT>
void write_shard_manifest(const std::vector<ShardT>& shards, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), ErrorKind::Io, "cannot open for writing: " + path);
  f << shard_manifest(shards).dump(2) << "\n";
  require(f.good(), ErrorKind::Io, "write failed: " + path);
}

}  // namespace ftnn
