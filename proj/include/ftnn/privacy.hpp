#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ftnn/error.hpp"
#include "ftnn/lstm.hpp"
#include "ftnn/rng.hpp"

namespace ftnn {

// Likelihood ratios c(s) = P(s|theta) / P(s|theta') over n fixed-length
// sequences sampled from theta. Both the sampling-order values (for
// histograms) and the descending order statistics (for tail fitting) are
// kept; c(1) is the largest.
struct RatioSample {
  std::size_t seq_len = 0;
  std::vector<double> values;
  std::vector<double> sorted;
};

inline RatioSample sample_ratios(const RecurrentLM& theta, const RecurrentLM& theta_prime,
                                 std::size_t n, std::size_t seq_len, Rng& rng) {
  require(theta.vocab() == theta_prime.vocab(), ErrorKind::Input,
          "the two models must share a vocabulary");
  require(n >= 100, ErrorKind::Input, "tail estimation needs at least 100 ratio samples");
  require(seq_len >= 1, ErrorKind::Input, "sequences must hold at least one token");

  RatioSample out;
  out.seq_len = seq_len;
  out.values.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto seq = theta.sample_sequence(seq_len, rng);
    const double c = std::exp(theta.sequence_logprob(seq) - theta_prime.sequence_logprob(seq));
    require(std::isfinite(c) && c > 0.0, ErrorKind::Numeric,
            "likelihood ratio must be positive and finite");
    out.values.push_back(c);
  }
  out.sorted = out.values;
  std::sort(out.sorted.begin(), out.sorted.end(), std::greater<>());
  return out;
}

// Number of order statistics the tail fit uses: k(n) = 2 * floor(sqrt(n)).
inline std::size_t hill_tail_count(std::size_t n) {
  return 2 * static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
}

// Hill's maximum-likelihood shape estimate from the top k order statistics
// (descending): alpha = k / sum_i log(x_i / x_k). Scale-invariant by
// construction. A flat top-k (all values equal) has no tail to fit.
inline double hill_alpha(std::span<const double> sorted_desc, std::size_t k) {
  require(k >= 2, ErrorKind::Input, "Hill estimate needs at least two order statistics");
  require(k <= sorted_desc.size(), ErrorKind::Input, "k exceeds the sample size");
  const double xk = sorted_desc[k - 1];
  require(xk > 0.0, ErrorKind::Numeric, "order statistics must be positive");
  long double sum = 0.0L;
  for (std::size_t i = 0; i < k; ++i) sum += std::log(sorted_desc[i] / xk);
  require(sum > 0.0L, ErrorKind::DegenerateTail,
          "top-k ratios are all equal; there is no tail to fit");
  return static_cast<double>(k / sum);
}

// 5% critical value of the Lilliefors test for exponentiality with the mean
// estimated from the sample. A fixed constant of this auditor.
inline constexpr double kLillieforsCritical = 1.08;

// sqrt(k) * sup |F_k(x) - (1 - e^-x)| over the residuals normalized by their
// sample mean, evaluating the empirical CDF from both sides at every jump
// (the sup over a step function is attained at a jump).
inline double lilliefors_statistic(std::vector<double> residuals) {
  const std::size_t k = residuals.size();
  require(k >= 10, ErrorKind::Input, "the exponentiality test needs at least 10 residuals");
  long double acc = 0.0L;
  for (const double r : residuals) {
    require(r >= 0.0 && std::isfinite(r), ErrorKind::Input, "residuals must be >= 0 and finite");
    acc += r;
  }
  const double mean = static_cast<double>(acc / static_cast<long double>(k));
  require(mean > 0.0, ErrorKind::DegenerateTail,
          "residuals are all zero; there is no tail to test");

  std::sort(residuals.begin(), residuals.end());
  double sup = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double model_cdf = 1.0 - std::exp(-residuals[i] / mean);
    const double below = static_cast<double>(i) / static_cast<double>(k);
    const double above = static_cast<double>(i + 1) / static_cast<double>(k);
    sup = std::max({sup, std::abs(model_cdf - below), std::abs(model_cdf - above)});
  }
  return std::sqrt(static_cast<double>(k)) * sup;
}

// One pair's Pareto-tail fit: survival F(x) ~ C / x^alpha beyond x0, with the
// goodness-of-fit verdict at the 5% level.
struct TailFit {
  std::size_t n = 0;
  std::size_t k = 0;
  double x0 = 0.0;
  double alpha_hat = 0.0;
  double c_hat = 0.0;
  double ks_statistic = 0.0;
  bool accepted = false;
};

// Plug-in tail survival estimate at the cut point: F(x0) = k/n, so
// C = (k/n) * x0^alpha.
inline double c_estimate(std::size_t k, std::size_t n, double x0, double alpha_hat) {
  require(k >= 1 && k < n, ErrorKind::Input, "tail count must be in [1, n)");
  require(x0 > 0.0 && alpha_hat > 0.0, ErrorKind::Input, "tail fit parameters must be positive");
  return static_cast<double>(k) / static_cast<double>(n) * std::pow(x0, alpha_hat);
}

inline TailFit fit_tail(const RatioSample& sample) {
  TailFit fit;
  fit.n = sample.sorted.size();
  fit.k = hill_tail_count(fit.n);
  require(fit.k >= 10 && fit.k < fit.n, ErrorKind::Input,
          "sample too small for a tail fit (k must be in [10, n))");
  fit.x0 = sample.sorted[fit.k - 1];
  fit.alpha_hat = hill_alpha(sample.sorted, fit.k);
  std::vector<double> residuals(fit.k);
  for (std::size_t i = 0; i < fit.k; ++i) residuals[i] = std::log(sample.sorted[i] / fit.x0);
  fit.ks_statistic = lilliefors_statistic(std::move(residuals));
  fit.c_hat = c_estimate(fit.k, fit.n, fit.x0, fit.alpha_hat);
  fit.accepted = fit.ks_statistic <= kLillieforsCritical;
  return fit;
}

// Pareto-tail quantile inversion: the smallest eps such that
// P(c(s) > e^eps) <= delta, i.e. eps = ln(C/delta) / alpha. Natural log;
// delta at or above C-hat would ask about probabilities the fit puts below
// the tail cut, where the formula gives no guarantee.
inline double epsilon_for_delta(double alpha_hat, double c_hat, double delta) {
  require(alpha_hat > 0.0 && c_hat > 0.0, ErrorKind::Domain,
          "tail parameters must be positive");
  require(delta > 0.0 && delta < c_hat, ErrorKind::Domain,
          "delta must lie in (0, C-hat) for the tail bound to apply");
  return std::log(c_hat / delta) / alpha_hat;
}

// Two user sets differing in exactly one user, with the models trained on
// each. The audit owns neither model.
struct AdjacentPair {
  std::string name;
  const RecurrentLM* theta = nullptr;
  const RecurrentLM* theta_prime = nullptr;
};

struct PairAudit {
  std::string name;
  TailFit fit;
  bool degenerate = false;  // all ratios equal (e.g. identical models)
  RatioSample sample;       // kept for histogram export
};

// The audit verdict: per-pair tail fits plus, for each requested delta, the
// worst (largest) epsilon among the pairs the goodness-of-fit test accepted.
// No accepted pair means no empirical guarantee can be stated.
struct DPReport {
  std::size_t n = 0;
  std::size_t seq_len = 0;
  std::uint64_t seed = 0;
  std::vector<PairAudit> pairs;
  std::vector<double> deltas;
  std::vector<double> epsilons;  // parallel to deltas; empty when nothing was accepted
  std::size_t accepted_count = 0;

  bool has_guarantee() const { return accepted_count > 0; }
};

inline DPReport dp_report(std::span<const AdjacentPair> pairs, std::vector<double> deltas,
                          std::size_t n, std::size_t seq_len, std::uint64_t seed) {
  require(!pairs.empty(), ErrorKind::Input, "the audit needs at least one adjacent pair");
  require(!deltas.empty(), ErrorKind::Input, "the audit needs at least one delta");
  for (const double d : deltas) {
    require(d > 0.0 && d < 1.0, ErrorKind::Domain, "delta must lie in (0, 1)");
  }

  DPReport report;
  report.n = n;
  report.seq_len = seq_len;
  report.seed = seed;
  report.deltas = std::move(deltas);

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pair = pairs[i];
    require(pair.theta != nullptr && pair.theta_prime != nullptr, ErrorKind::Input,
            "adjacent pair is missing a model");
    PairAudit audit;
    audit.name = pair.name.empty() ? "pair-" + std::to_string(i) : pair.name;
    Rng rng(derive_seed(seed, "pair", i));
    audit.sample = sample_ratios(*pair.theta, *pair.theta_prime, n, seq_len, rng);
    try {
      audit.fit = fit_tail(audit.sample);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateTail) throw;
      audit.degenerate = true;
      audit.fit.accepted = false;
    }
    if (audit.fit.accepted) ++report.accepted_count;
    report.pairs.push_back(std::move(audit));
  }

  if (report.accepted_count > 0) {
    for (const double delta : report.deltas) {
      double worst = 0.0;
      for (const auto& audit : report.pairs) {
        if (!audit.fit.accepted) continue;
        worst = std::max(worst, epsilon_for_delta(audit.fit.alpha_hat, audit.fit.c_hat, delta));
      }
      report.epsilons.push_back(worst);
    }
  }
  return report;
}

inline nlohmann::json dp_report_json(const DPReport& report) {
  nlohmann::json out;
  out["n"] = report.n;
  out["seq_len"] = report.seq_len;
  out["seed"] = report.seed;
  out["accepted_pairs"] = report.accepted_count;
  out["has_guarantee"] = report.has_guarantee();
  out["pairs"] = nlohmann::json::array();
  for (const auto& audit : report.pairs) {
    nlohmann::json p;
    p["name"] = audit.name;
    p["degenerate"] = audit.degenerate;
    p["accepted"] = audit.fit.accepted;
    if (!audit.degenerate) {
      p["alpha_hat"] = audit.fit.alpha_hat;
      p["c_hat"] = audit.fit.c_hat;
      p["x0"] = audit.fit.x0;
      p["k"] = audit.fit.k;
      p["n"] = audit.fit.n;
      p["ks_statistic"] = audit.fit.ks_statistic;
    }
    out["pairs"].push_back(std::move(p));
  }
  out["epsilon"] = nlohmann::json::object();
  for (std::size_t i = 0; i < report.epsilons.size(); ++i) {
    std::ostringstream key;
    key << std::setprecision(17) << report.deltas[i];
    out["epsilon"][key.str()] = report.epsilons[i];
  }
  return out;
}

// One log-ratio per row in sampling order, ready for histogram plotting.
inline void write_log_ratio_csv(const std::string& path, const RatioSample& sample) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << "log_c\n" << std::setprecision(17);
  for (const double c : sample.values) out << std::log(c) << '\n';
  require(out.good(), ErrorKind::Io, "failed while writing " + path);
}

namespace detail {

// Exact sequence probabilities by depth-first expansion of the full V^L
// tree, reusing each prefix's hidden state. Probabilities arrive in
// lexicographic token order (first position slowest).
inline void enumerate_probs(const RecurrentLM& model, const LmState& state, double logp,
                            std::size_t remaining, std::vector<double>& out) {
  if (remaining == 0) {
    out.push_back(std::exp(logp));
    return;
  }
  const auto probs = model.predict(state);
  for (std::size_t tok = 0; tok < probs.size(); ++tok) {
    LmState next = state;
    model.step(next, static_cast<int>(tok));
    enumerate_probs(model, next, logp + std::log(probs[tok]), remaining - 1, out);
  }
}

}  // namespace detail

// The tail-bound argument made executable on an enumerable sequence space:
// with delta_exact = P(c(s) > e^eps | theta) computed by exact summation,
// the privacy inequality P(S|theta) <= e^eps P(S|theta') + delta_exact must
// hold for every S — checked on the worst-case tail set itself and on
// random subsets. `delta` is the caller's claimed budget; the check also
// reports whether it covers delta_exact.
struct BruteForceCheck {
  double delta_exact = 0.0;
  bool premise_holds = false;  // claimed delta >= delta_exact
  std::size_t sets_checked = 0;
  std::size_t violations = 0;
  bool passed = false;  // no tested set violated the inequality
};

inline BruteForceCheck verify_dp_bound_bruteforce(const RecurrentLM& theta,
                                                  const RecurrentLM& theta_prime, double epsilon,
                                                  double delta, std::size_t seq_len,
                                                  std::size_t random_subsets, Rng& rng) {
  require(theta.vocab() == theta_prime.vocab(), ErrorKind::Input,
          "the two models must share a vocabulary");
  require(epsilon >= 0.0, ErrorKind::Domain, "epsilon must be >= 0");
  require(seq_len >= 1, ErrorKind::Input, "sequences must hold at least one token");
  double space = 1.0;
  for (std::size_t t = 0; t < seq_len; ++t) space *= static_cast<double>(theta.vocab());
  require(space <= 1e5, ErrorKind::Size, "sequence space too large to enumerate");

  std::vector<double> p, q;
  p.reserve(static_cast<std::size_t>(space));
  q.reserve(static_cast<std::size_t>(space));
  detail::enumerate_probs(theta, theta.initial_state(), 0.0, seq_len, p);
  detail::enumerate_probs(theta_prime, theta_prime.initial_state(), 0.0, seq_len, q);

  const double bound = std::exp(epsilon);
  std::vector<bool> in_tail(p.size());
  long double delta_acc = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    in_tail[i] = p[i] / q[i] > bound;
    if (in_tail[i]) delta_acc += p[i];
  }

  BruteForceCheck check;
  check.delta_exact = static_cast<double>(delta_acc);
  check.premise_holds = delta >= check.delta_exact;

  // Summation differences between a subset and its superset sit at the last
  // few extended-precision bits; the guard keeps those from counting as
  // violations of an inequality that holds in exact arithmetic.
  const auto holds = [&](const std::vector<bool>& members) {
    long double lhs = 0.0L, rhs_q = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!members[i]) continue;
      lhs += p[i];
      rhs_q += q[i];
    }
    const long double rhs =
        static_cast<long double>(bound) * rhs_q + static_cast<long double>(check.delta_exact);
    return lhs <= rhs + 1e-15L * (1.0L + rhs);
  };

  if (!holds(in_tail)) ++check.violations;
  ++check.sets_checked;

  std::vector<bool> members(p.size());
  for (std::size_t s = 0; s < random_subsets; ++s) {
    for (std::size_t i = 0; i < p.size(); ++i) members[i] = rng.bernoulli(0.5);
    if (!holds(members)) ++check.violations;
    ++check.sets_checked;
  }
  check.passed = check.violations == 0;
  return check;
}

}  // namespace ftnn
