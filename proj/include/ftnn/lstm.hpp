#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ftnn/error.hpp"
#include "ftnn/linalg.hpp"
#include "ftnn/parameters.hpp"
#include "ftnn/rng.hpp"
#include "ftnn/soft_targets.hpp"

namespace ftnn {

struct LmConfig {
  std::size_t vocab = 0;
  std::size_t embed_width = 0;
  std::vector<std::size_t> hidden_widths;
  double dropout = 0.0;
  std::size_t bptt = 20;

  void validate() const {
    require(vocab >= 2, ErrorKind::Config, "vocabulary must hold at least two tokens");
    require(embed_width >= 1, ErrorKind::Config, "embedding width must be >= 1");
    require(!hidden_widths.empty(), ErrorKind::Config, "need at least one recurrent layer");
    for (auto w : hidden_widths) {
      require(w >= 1, ErrorKind::Config, "hidden width must be >= 1");
    }
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config, "dropout must be in [0,1)");
    require(bptt >= 1, ErrorKind::Config, "truncation length must be >= 1");
  }
};

// Hidden and cell vectors, one pair per recurrent layer.
struct LmState {
  std::vector<std::vector<double>> h;
  std::vector<std::vector<double>> c;
};

// One truncated-backprop training window: B parallel token streams advanced
// T steps, with targets[b][t] the next token expected after inputs[b][t].
struct LmWindow {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;
};

// Word-level LSTM language model. Gates are packed i, f, g, o in the fused
// block of each layer; dropout (inverted) applies to the non-recurrent
// connections only: the embedding output, each layer-to-layer boundary, and
// the top hidden vector feeding the softmax.
class RecurrentLM {
 public:
  explicit RecurrentLM(LmConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::vector<TensorSpec> tensors;
    tensors.push_back(
        {"embed", {static_cast<std::uint32_t>(cfg_.vocab), static_cast<std::uint32_t>(cfg_.embed_width)}});
    std::size_t in = cfg_.embed_width;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const auto h = static_cast<std::uint32_t>(cfg_.hidden_widths[l]);
      const std::string tag = "lstm" + std::to_string(l);
      tensors.push_back({tag + ".wx", {4 * h, static_cast<std::uint32_t>(in)}});
      tensors.push_back({tag + ".wh", {4 * h, h}});
      tensors.push_back({tag + ".b", {4 * h}});
      in = cfg_.hidden_widths[l];
    }
    tensors.push_back({"out.w", {static_cast<std::uint32_t>(cfg_.vocab), static_cast<std::uint32_t>(in)}});
    tensors.push_back({"out.b", {static_cast<std::uint32_t>(cfg_.vocab)}});
    params_ = ParameterVector(std::make_shared<Layout>(std::move(tensors)));
  }

  const LmConfig& config() const { return cfg_; }
  std::size_t vocab() const { return cfg_.vocab; }
  std::size_t layer_count() const { return cfg_.hidden_widths.size(); }
  std::size_t top_width() const { return cfg_.hidden_widths.back(); }

  ParameterVector& parameters() { return params_; }
  const ParameterVector& parameters() const { return params_; }

  void init_weights(Rng& rng) {
    for (auto& v : params_.tensor("embed")) v = rng.uniform(-0.05, 0.05);
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const std::string tag = "lstm" + std::to_string(l);
      for (auto& v : params_.tensor(tag + ".wx")) v = rng.uniform(-0.05, 0.05);
      for (auto& v : params_.tensor(tag + ".wh")) v = rng.uniform(-0.05, 0.05);
      for (auto& v : params_.tensor(tag + ".b")) v = 0.0;
    }
    for (auto& v : params_.tensor("out.w")) v = rng.uniform(-0.05, 0.05);
    for (auto& v : params_.tensor("out.b")) v = 0.0;
  }

  LmState initial_state() const {
    LmState s;
    s.h.resize(layer_count());
    s.c.resize(layer_count());
    for (std::size_t l = 0; l < layer_count(); ++l) {
      s.h[l].assign(cfg_.hidden_widths[l], 0.0);
      s.c[l].assign(cfg_.hidden_widths[l], 0.0);
    }
    return s;
  }

  // Advance the state by one consumed token (inference mode, no dropout).
  void step(LmState& s, int token) const {
    check_token(token);
    check_state(s);
    std::vector<double> x(embed_row(token).begin(), embed_row(token).end());
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const std::size_t h_w = cfg_.hidden_widths[l];
      std::vector<double> z = gate_preact(l, x, s.h[l]);
      std::vector<double> h_new(h_w);
      for (std::size_t j = 0; j < h_w; ++j) {
        const double gi = sigmoid(z[j]);
        const double gf = sigmoid(z[h_w + j]);
        const double gg = std::tanh(z[2 * h_w + j]);
        const double go = sigmoid(z[3 * h_w + j]);
        s.c[l][j] = gf * s.c[l][j] + gi * gg;
        h_new[j] = go * std::tanh(s.c[l][j]);
      }
      s.h[l] = h_new;
      x = std::move(h_new);
    }
  }

  // Next-token distribution given the current state. Strictly positive: any
  // entry that underflows is lifted to the smallest normal double, which
  // stays far inside the 1e-9 normalization tolerance.
  std::vector<double> predict(const LmState& s) const {
    check_state(s);
    auto ob = params_.tensor(out_b_idx());
    std::vector<double> logits(ob.begin(), ob.end());
    matvec_add(params_.tensor(out_w_idx()), cfg_.vocab, top_width(), s.h.back(), logits);
    softmax_inplace(logits);
    for (auto& p : logits) p = std::max(p, std::numeric_limits<double>::min());
    return logits;
  }

  std::vector<double> forward(std::span<const int> context) const {
    LmState s = initial_state();
    for (int tok : context) step(s, tok);
    return predict(s);
  }

  // Sum of per-position log probabilities of the realized tokens; the first
  // position is scored from the initial state.
  double sequence_logprob(std::span<const int> seq) const {
    require(!seq.empty(), ErrorKind::Input, "cannot score an empty sequence");
    LmState s = initial_state();
    double lp = 0.0;
    for (int tok : seq) {
      check_token(tok);
      const auto p = predict(s);
      lp += std::log(p[static_cast<std::size_t>(tok)]);
      step(s, tok);
    }
    return lp;
  }

  // Ancestral sampling at temperature 1 from the initial state.
  std::vector<int> sample_sequence(std::size_t length, Rng& rng) const {
    require(length >= 1, ErrorKind::Input, "sample length must be >= 1");
    LmState s = initial_state();
    std::vector<int> seq;
    seq.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
      const auto p = predict(s);
      const int tok = static_cast<int>(rng.pick(p));
      seq.push_back(tok);
      step(s, tok);
    }
    return seq;
  }

  // Loss and gradient over one truncated window. `states` carries across
  // windows and is advanced in place; incoming state is treated as constant
  // for the gradient. With lambda < 1 every frozen teacher is stepped over
  // the same tokens (inference mode) threading `teacher_states`, one state
  // vector per teacher. Dropout masks come from `dropout_rng`; nullptr
  // evaluates without dropout.
  double loss_and_grad(const LmWindow& window, const SoftTargets<RecurrentLM>& targets,
                       std::vector<LmState>& states,
                       std::vector<std::vector<LmState>>* teacher_states, Rng* dropout_rng,
                       ParameterVector& grad) const {
    targets.validate(*this);
    const std::size_t B = window.inputs.size();
    require(B >= 1 && window.targets.size() == B, ErrorKind::Input,
            "window needs matching input and target streams");
    const std::size_t T = window.inputs[0].size();
    require(T >= 1, ErrorKind::Input, "window must cover at least one step");
    for (std::size_t b = 0; b < B; ++b) {
      require(window.inputs[b].size() == T && window.targets[b].size() == T, ErrorKind::Input,
              "ragged training window");
    }
    require(states.size() == B, ErrorKind::Input, "need one carried state per stream");
    const bool distill = targets.lambda < 1.0;
    if (distill) {
      require(teacher_states != nullptr && teacher_states->size() == targets.teachers.size(),
              ErrorKind::Input, "need one carried state vector per teacher");
      for (const auto& ts : *teacher_states) {
        require(ts.size() == B, ErrorKind::Input, "need one carried teacher state per stream");
      }
    }
    if (grad.size() == 0) grad = ParameterVector(params_.layout_ptr());
    params_.check_same_layout(grad);
    grad.fill(0.0);

    const std::size_t L = layer_count();
    const std::size_t V = cfg_.vocab;
    const bool use_dropout = dropout_rng != nullptr && cfg_.dropout > 0.0;
    const double keep = 1.0 - cfg_.dropout;

    struct StepCache {
      std::vector<std::vector<double>> in_vec, in_mask;  // per layer, post-dropout input
      std::vector<std::vector<double>> h_prev, c_prev;
      std::vector<std::vector<double>> gi, gf, gg, go, tc;
      std::vector<double> top_drop, top_mask;
      std::vector<double> delta;  // dL/dlogits, already scaled by 1/(B*T)
    };
    std::vector<StepCache> cache(T * B);

    auto draw_mask = [&](std::vector<double>& mask, std::vector<double>& vec) {
      if (!use_dropout) return;
      mask.resize(vec.size());
      for (std::size_t j = 0; j < vec.size(); ++j) {
        mask[j] = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        vec[j] *= mask[j];
      }
    };

    const double inv_bt = 1.0 / static_cast<double>(B * T);
    double total_loss = 0.0;
    std::vector<long double> mean_p;  // scratch for the teacher mixture

    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t b = 0; b < B; ++b) {
        StepCache& st = cache[t * B + b];
        LmState& s = states[b];
        check_state(s);
        const int tok = window.inputs[b][t];
        check_token(tok);

        st.in_vec.resize(L);
        st.in_mask.resize(L);
        st.h_prev.resize(L);
        st.c_prev.resize(L);
        st.gi.resize(L);
        st.gf.resize(L);
        st.gg.resize(L);
        st.go.resize(L);
        st.tc.resize(L);

        std::vector<double> x(embed_row(tok).begin(), embed_row(tok).end());
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t h_w = cfg_.hidden_widths[l];
          st.in_vec[l] = std::move(x);
          draw_mask(st.in_mask[l], st.in_vec[l]);
          st.h_prev[l] = s.h[l];
          st.c_prev[l] = s.c[l];
          std::vector<double> z = gate_preact(l, st.in_vec[l], s.h[l]);
          st.gi[l].resize(h_w);
          st.gf[l].resize(h_w);
          st.gg[l].resize(h_w);
          st.go[l].resize(h_w);
          st.tc[l].resize(h_w);
          for (std::size_t j = 0; j < h_w; ++j) {
            const double gi = sigmoid(z[j]);
            const double gf = sigmoid(z[h_w + j]);
            const double gg = std::tanh(z[2 * h_w + j]);
            const double go = sigmoid(z[3 * h_w + j]);
            const double c = gf * st.c_prev[l][j] + gi * gg;
            const double tc = std::tanh(c);
            st.gi[l][j] = gi;
            st.gf[l][j] = gf;
            st.gg[l][j] = gg;
            st.go[l][j] = go;
            st.tc[l][j] = tc;
            s.c[l][j] = c;
            s.h[l][j] = go * tc;
          }
          x = s.h[l];
        }

        st.top_drop = std::move(x);
        draw_mask(st.top_mask, st.top_drop);
        auto ob = params_.tensor(out_b_idx());
        std::vector<double> probs(ob.begin(), ob.end());
        matvec_add(params_.tensor(out_w_idx()), V, top_width(), st.top_drop, probs);
        softmax_inplace(probs);

        const int tgt = window.targets[b][t];
        check_token(tgt);
        st.delta = probs;
        if (!distill) {
          total_loss -= std::log(probs[static_cast<std::size_t>(tgt)]);
          st.delta[static_cast<std::size_t>(tgt)] -= 1.0;
        } else {
          // Mean teacher distribution, each teacher advanced over the same
          // input token before predicting. The mean is accumulated at
          // extended precision so identical teachers reproduce their shared
          // distribution bitwise.
          mean_p.assign(V, 0.0L);
          for (std::size_t k = 0; k < targets.teachers.size(); ++k) {
            LmState& rs = (*teacher_states)[k][b];
            targets.teachers[k]->step(rs, tok);
            const auto p = targets.teachers[k]->predict(rs);
            for (std::size_t w = 0; w < V; ++w) mean_p[w] += p[w];
          }
          const auto kk = static_cast<long double>(targets.teachers.size());
          double item = -targets.lambda * std::log(probs[static_cast<std::size_t>(tgt)]);
          for (std::size_t w = 0; w < V; ++w) {
            const auto m = static_cast<double>(mean_p[w] / kk);
            item -= (1.0 - targets.lambda) * m * std::log(probs[w]);
            st.delta[w] -= (1.0 - targets.lambda) * m;
          }
          st.delta[static_cast<std::size_t>(tgt)] -= targets.lambda;
          total_loss += item;
        }
        for (auto& d : st.delta) d *= inv_bt;
      }
    }

    // Backward sweep. dh/dc accumulate the gradient flowing into each layer's
    // state at the time step currently being processed.
    std::vector<std::vector<std::vector<double>>> dh(B), dc(B);
    for (std::size_t b = 0; b < B; ++b) {
      dh[b].resize(L);
      dc[b].resize(L);
      for (std::size_t l = 0; l < L; ++l) {
        dh[b][l].assign(cfg_.hidden_widths[l], 0.0);
        dc[b][l].assign(cfg_.hidden_widths[l], 0.0);
      }
    }

    auto grad_embed = grad.tensor(kEmbedIdx);
    auto grad_out_w = grad.tensor(out_w_idx());
    auto grad_out_b = grad.tensor(out_b_idx());

    for (std::size_t t = T; t-- > 0;) {
      for (std::size_t b = 0; b < B; ++b) {
        StepCache& st = cache[t * B + b];
        std::vector<double> dtop(top_width(), 0.0);
        matvec_backward(params_.tensor(out_w_idx()), V, top_width(), st.top_drop, st.delta,
                        grad_out_w, dtop);
        for (std::size_t w = 0; w < V; ++w) grad_out_b[w] += st.delta[w];
        for (std::size_t j = 0; j < top_width(); ++j) {
          dh[b][L - 1][j] += st.top_mask.empty() ? dtop[j] : dtop[j] * st.top_mask[j];
        }

        for (std::size_t l = L; l-- > 0;) {
          const std::size_t h_w = cfg_.hidden_widths[l];
          std::vector<double> dz(4 * h_w);
          for (std::size_t j = 0; j < h_w; ++j) {
            const double gi = st.gi[l][j];
            const double gf = st.gf[l][j];
            const double gg = st.gg[l][j];
            const double go = st.go[l][j];
            const double tc = st.tc[l][j];
            const double dh_t = dh[b][l][j];
            const double d_go = dh_t * tc;
            const double dc_t = dc[b][l][j] + dh_t * go * (1.0 - tc * tc);
            const double d_gi = dc_t * gg;
            const double d_gg = dc_t * gi;
            const double d_gf = dc_t * st.c_prev[l][j];
            dc[b][l][j] = dc_t * gf;
            dz[j] = d_gi * gi * (1.0 - gi);
            dz[h_w + j] = d_gf * gf * (1.0 - gf);
            dz[2 * h_w + j] = d_gg * (1.0 - gg * gg);
            dz[3 * h_w + j] = d_go * go * (1.0 - go);
          }
          auto gb = grad.tensor(b_idx(l));
          for (std::size_t k = 0; k < 4 * h_w; ++k) gb[k] += dz[k];
          const std::size_t in_w = st.in_vec[l].size();
          std::vector<double> din(in_w, 0.0);
          matvec_backward(params_.tensor(wx_idx(l)), 4 * h_w, in_w, st.in_vec[l], dz,
                          grad.tensor(wx_idx(l)), din);
          std::vector<double> dh_prev(h_w, 0.0);
          matvec_backward(params_.tensor(wh_idx(l)), 4 * h_w, h_w, st.h_prev[l], dz,
                          grad.tensor(wh_idx(l)), dh_prev);
          dh[b][l] = std::move(dh_prev);
          if (l > 0) {
            for (std::size_t j = 0; j < in_w; ++j) {
              dh[b][l - 1][j] += st.in_mask[l].empty() ? din[j] : din[j] * st.in_mask[l][j];
            }
          } else {
            const int tok = window.inputs[b][t];
            double* erow = grad_embed.data() + static_cast<std::size_t>(tok) * cfg_.embed_width;
            for (std::size_t j = 0; j < in_w; ++j) {
              erow[j] += st.in_mask[0].empty() ? din[j] : din[j] * st.in_mask[0][j];
            }
          }
        }
      }
    }

    return total_loss * inv_bt;
  }

 private:
  // Layout order is fixed by the constructor: embed, then wx/wh/b per layer,
  // then the output projection. Hot paths index tensors by position.
  static constexpr std::size_t kEmbedIdx = 0;
  std::size_t wx_idx(std::size_t l) const { return 1 + 3 * l; }
  std::size_t wh_idx(std::size_t l) const { return 2 + 3 * l; }
  std::size_t b_idx(std::size_t l) const { return 3 + 3 * l; }
  std::size_t out_w_idx() const { return 1 + 3 * layer_count(); }
  std::size_t out_b_idx() const { return 2 + 3 * layer_count(); }

  void check_token(int token) const {
    require(token >= 0 && static_cast<std::size_t>(token) < cfg_.vocab, ErrorKind::Input,
            "token id out of range");
  }

  void check_state(const LmState& s) const {
    require(s.h.size() == layer_count() && s.c.size() == layer_count(), ErrorKind::Input,
            "state layer count mismatch");
    for (std::size_t l = 0; l < layer_count(); ++l) {
      require(s.h[l].size() == cfg_.hidden_widths[l] && s.c[l].size() == cfg_.hidden_widths[l],
              ErrorKind::Input, "state width mismatch");
    }
  }

  std::span<const double> embed_row(int token) const {
    return params_.tensor(kEmbedIdx).subspan(static_cast<std::size_t>(token) * cfg_.embed_width,
                                             cfg_.embed_width);
  }

  // b + Wx·x + Wh·h for one layer's fused gate block.
  std::vector<double> gate_preact(std::size_t l, std::span<const double> x,
                                  std::span<const double> h) const {
    const std::size_t h_w = cfg_.hidden_widths[l];
    auto b = params_.tensor(b_idx(l));
    std::vector<double> z(b.begin(), b.end());
    matvec_add(params_.tensor(wx_idx(l)), 4 * h_w, x.size(), x, z);
    matvec_add(params_.tensor(wh_idx(l)), 4 * h_w, h_w, h, z);
    return z;
  }

  LmConfig cfg_;
  ParameterVector params_;
};

}  // namespace ftnn
