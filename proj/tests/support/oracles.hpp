#pragma once

// Independent reference implementations used to validate the library. These
// recompute results the slow, obvious way on purpose; they share no code with
// the paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ftnn/feedforward.hpp"
#include "ftnn/image_data.hpp"
#include "ftnn/lstm.hpp"
#include "ftnn/text_corpus.hpp"

namespace ftnn::oracle {

struct GradCheck {
  bool pass = true;
  double worst_ratio = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central finite differences around theta. `loss` must be a pure function of
// theta's current contents (fixed data, fixed dropout masks, reset state). A
// coordinate passes if the analytic/numeric gap is within rel_tol of the
// larger magnitude, or below abs_floor for coordinates whose true gradient is
// close to zero (their difference is pure cancellation noise).
inline GradCheck finite_diff_check(std::span<double> theta, const std::function<double()>& loss,
                                   std::span<const double> analytic, double step = 1e-6,
                                   double rel_tol = 1e-4, double abs_floor = 1e-7) {
  GradCheck r;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double save = theta[i];
    theta[i] = save + step;
    const double up = loss();
    theta[i] = save - step;
    const double down = loss();
    theta[i] = save;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double err = std::abs(a - numeric);
    const double denom = std::max(std::abs(a), std::abs(numeric));
    const bool ok = err <= abs_floor || err <= rel_tol * denom;
    const double ratio = err / std::max(denom, abs_floor);
    if (ratio > r.worst_ratio) {
      r.worst_ratio = ratio;
      r.worst_index = i;
      r.analytic = a;
      r.numeric = numeric;
    }
    if (!ok) r.pass = false;
  }
  return r;
}

inline double naive_mean(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

// Extended-precision mean folded in REVERSE order — agreement within 1e-12
// certifies a production mean without sharing its summation order.
inline double extended_mean_reversed(std::span<const double> xs) {
  long double acc = 0.0L;
  for (std::size_t i = xs.size(); i-- > 0;) acc += xs[i];
  return static_cast<double>(acc / static_cast<long double>(xs.size()));
}

// Brute-force keystroke-saving simulator, deliberately structured unlike the
// library: context is rebuilt from scratch with forward() at every word, and
// the suggestion test counts strictly-better candidates instead of building a
// ranked list. Check order: empty prefix first, then after each keypress.
inline double kss_bruteforce(const RecurrentLM& model,
                             const std::vector<std::vector<std::string>>& sentences,
                             const Vocab& vocab, std::size_t list_size) {
  std::vector<int> context;
  std::size_t total = 0;
  std::size_t typed = 0;
  for (const auto& sentence : sentences) {
    for (const auto& word : sentence) {
      const std::size_t n = word.size();
      total += n;
      if (!vocab.contains(word)) {
        typed += n;  // never suggestible
      } else {
        const auto dist = model.forward(context);
        const int target = vocab.id_of(word);
        const double p_target = dist[static_cast<std::size_t>(target)];
        std::size_t typed_here = n;
        for (std::size_t k = 0; k < n; ++k) {
          const std::string prefix = word.substr(0, k);
          std::size_t better = 0;
          for (std::size_t id = 2; id < vocab.size(); ++id) {
            if (static_cast<int>(id) == target) continue;
            const std::string& cand = vocab.word_of(static_cast<int>(id));
            if (cand.compare(0, prefix.size(), prefix) != 0) continue;
            const double p = dist[id];
            if (p > p_target || (p == p_target && static_cast<int>(id) < target)) ++better;
          }
          if (better < list_size) {
            typed_here = k;
            break;
          }
        }
        typed += typed_here;
      }
      context.push_back(vocab.id_of(word));
    }
    context.push_back(kBoundaryId);
  }
  if (total == 0) return 0.0;
  return 100.0 * static_cast<double>(total - typed) / static_cast<double>(total);
}

// Per-position recomputation of perplexity from explicit prefixes.
inline double perplexity_bruteforce(const RecurrentLM& model, const std::vector<int>& ids) {
  double nll = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::vector<int> prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(i));
    nll -= std::log(model.forward(prefix)[static_cast<std::size_t>(ids[i])]);
  }
  return std::exp(nll / static_cast<double>(ids.size()));
}

// Exact probability of every length-L sequence under the model, by walking
// the full V^L tree with forward() on explicit prefixes. Probabilities are
// returned in odometer order (last position fastest). Exponential in L —
// keep V^L tiny.
inline std::vector<double> enumerate_sequence_probs(const RecurrentLM& model, std::size_t len) {
  const std::size_t v = model.vocab();
  std::size_t total = 1;
  for (std::size_t t = 0; t < len; ++t) total *= v;
  std::vector<double> probs(total);
  std::vector<int> seq(len, 0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rest = idx;
    for (std::size_t t = len; t-- > 0;) {
      seq[t] = static_cast<int>(rest % v);
      rest /= v;
    }
    double p = 1.0;
    for (std::size_t t = 0; t < len; ++t) {
      const std::vector<int> prefix(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(t));
      p *= model.forward(prefix)[static_cast<std::size_t>(seq[t])];
    }
    probs[idx] = p;
  }
  return probs;
}

// Supremum of |F_k(x) - (1 - e^-x)| approximated on a dense grid plus the
// half-open interval just below each jump; an independent check of the
// closed-form two-sided jump evaluation.
inline double ks_exponential_sup_grid(std::vector<double> normalized, std::size_t grid = 200000) {
  std::sort(normalized.begin(), normalized.end());
  const double hi = normalized.back() + 5.0;
  const auto k = static_cast<double>(normalized.size());
  double sup = 0.0;
  for (std::size_t g = 0; g <= grid; ++g) {
    const double x = hi * static_cast<double>(g) / static_cast<double>(grid);
    const auto upper = std::upper_bound(normalized.begin(), normalized.end(), x);
    const double fk = static_cast<double>(upper - normalized.begin()) / k;
    sup = std::max(sup, std::abs(fk - (1.0 - std::exp(-x))));
  }
  return sup;
}

// Fraction of samples strictly above x — the empirical tail function.
inline double tail_frequency(std::span<const double> values, double x) {
  std::size_t above = 0;
  for (double v : values) {
    if (v > x) ++above;
  }
  return static_cast<double>(above) / static_cast<double>(values.size());
}

// Plain counting loop for classification accuracy.
inline double accuracy_bruteforce(const FeedforwardClassifier& model, const ImageDataset& data) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto probs = model.forward(data.examples[i]);
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c) {
      if (probs[c] > probs[best]) best = c;
    }
    if (static_cast<int>(best) == data.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ftnn::oracle
