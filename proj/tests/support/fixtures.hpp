#pragma once

// Shared builders for randomized test instances.

#include <cstddef>
#include <vector>

#include "ftnn/feedforward.hpp"
#include "ftnn/lstm.hpp"
#include "ftnn/rng.hpp"

namespace ftnn::fixtures {

// Fully randomized weights (biases included) in a range that keeps the
// nonlinearities away from saturation, which conditions finite differences
// well.
inline void randomize_params(ParameterVector& params, Rng& rng, double span = 0.4) {
  for (auto& v : params.values()) v = rng.uniform(-span, span);
}

inline RecurrentLM random_lm(Rng& rng, std::size_t vocab, std::size_t embed,
                             std::vector<std::size_t> hidden, double dropout,
                             std::size_t bptt) {
  RecurrentLM model({vocab, embed, std::move(hidden), dropout, bptt});
  randomize_params(model.parameters(), rng);
  return model;
}

inline FeedforwardClassifier random_classifier(Rng& rng, std::vector<std::size_t> widths,
                                               std::vector<double> dropout) {
  FeedforwardClassifier model(std::move(widths), std::move(dropout));
  randomize_params(model.parameters(), rng);
  return model;
}

inline LmWindow random_window(Rng& rng, std::size_t streams, std::size_t steps,
                              std::size_t vocab) {
  LmWindow w;
  w.inputs.resize(streams);
  w.targets.resize(streams);
  for (std::size_t b = 0; b < streams; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      w.inputs[b].push_back(static_cast<int>(rng.below(vocab)));
      w.targets[b].push_back(static_cast<int>(rng.below(vocab)));
    }
  }
  return w;
}

inline std::vector<LmState> random_states(Rng& rng, const RecurrentLM& model,
                                          std::size_t streams) {
  std::vector<LmState> states;
  for (std::size_t b = 0; b < streams; ++b) {
    LmState s = model.initial_state();
    for (auto& layer : s.h) {
      for (auto& v : layer) v = rng.uniform(-0.5, 0.5);
    }
    for (auto& layer : s.c) {
      for (auto& v : layer) v = rng.uniform(-0.5, 0.5);
    }
    states.push_back(std::move(s));
  }
  return states;
}

inline std::vector<VecExample> random_examples(Rng& rng, std::size_t count, std::size_t width,
                                               std::size_t classes) {
  std::vector<VecExample> batch(count);
  for (auto& ex : batch) {
    ex.x.resize(width);
    for (auto& v : ex.x) v = rng.uniform(-1.0, 1.0);
    ex.label = static_cast<int>(rng.below(classes));
  }
  return batch;
}

}  // namespace ftnn::fixtures
