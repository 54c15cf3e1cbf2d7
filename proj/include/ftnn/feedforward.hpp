#pragma once

#include <cmath>
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

struct VecExample {
  std::vector<double> x;
  int label = 0;
};

// Plain multilayer perceptron: ReLU hidden layers, softmax output, inverted
// dropout on the input of each linear layer.
class FeedforwardClassifier {
 public:
  FeedforwardClassifier(std::vector<std::size_t> widths, std::vector<double> dropout)
      : widths_(std::move(widths)), dropout_(std::move(dropout)) {
    require(widths_.size() >= 2, ErrorKind::Config, "classifier needs input and output widths");
    require(dropout_.size() == widths_.size() - 1, ErrorKind::Config,
            "need one dropout probability per layer boundary");
    for (double p : dropout_) {
      require(p >= 0.0 && p < 1.0, ErrorKind::Config, "dropout probability must be in [0,1)");
    }
    std::vector<TensorSpec> tensors;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const auto out = static_cast<std::uint32_t>(widths_[l + 1]);
      const auto in = static_cast<std::uint32_t>(widths_[l]);
      tensors.push_back({"fc" + std::to_string(l) + ".w", {out, in}});
      tensors.push_back({"fc" + std::to_string(l) + ".b", {out}});
    }
    params_ = ParameterVector(std::make_shared<Layout>(std::move(tensors)));
  }

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_width() const { return widths_.front(); }
  std::size_t num_classes() const { return widths_.back(); }
  std::size_t num_layers() const { return widths_.size() - 1; }

  ParameterVector& parameters() { return params_; }
  const ParameterVector& parameters() const { return params_; }

  void init_weights(Rng& rng) {
    for (std::size_t l = 0; l < num_layers(); ++l) {
      for (auto& w : params_.tensor(2 * l)) w = rng.uniform(-0.05, 0.05);
      for (auto& b : params_.tensor(2 * l + 1)) b = 0.0;
    }
  }

  // Inference-mode forward pass: dropout off, returns class probabilities.
  std::vector<double> forward(std::span<const double> x) const {
    require(x.size() == input_width(), ErrorKind::Input, "input width mismatch");
    std::vector<double> act(x.begin(), x.end());
    for (std::size_t l = 0; l < num_layers(); ++l) {
      std::vector<double> next(widths_[l + 1]);
      auto b = params_.tensor(2 * l + 1);
      std::copy(b.begin(), b.end(), next.begin());
      matvec_add(params_.tensor(2 * l), widths_[l + 1], widths_[l], act, next);
      if (l + 1 < num_layers()) {
        for (auto& v : next) v = std::max(0.0, v);
      } else {
        softmax_inplace(next);
      }
      act = std::move(next);
    }
    return act;
  }

  int classify(std::span<const double> x) const {
    const auto probs = forward(x);
    return static_cast<int>(argmax(probs));
  }

  // Training loss and gradient over a minibatch. Targets mix the hard label
  // with the teachers' mean distribution when lambda < 1; teachers always
  // run in inference mode. Dropout masks come from `dropout_rng`; pass
  // nullptr to evaluate without dropout (used by the gradient checks).
  double loss_and_grad(std::span<const VecExample> batch,
                       const SoftTargets<FeedforwardClassifier>& targets, Rng* dropout_rng,
                       ParameterVector& grad) const {
    targets.validate(*this);
    require(!batch.empty(), ErrorKind::Input, "empty batch");
    if (grad.size() == 0) grad = ParameterVector(params_.layout_ptr());
    params_.check_same_layout(grad);
    grad.fill(0.0);

    const std::size_t L = num_layers();
    double total_loss = 0.0;
    std::vector<std::vector<double>> act(L + 1);   // post-dropout layer inputs + output probs
    std::vector<std::vector<double>> mask(L);      // inverted dropout masks per boundary

    for (const auto& ex : batch) {
      require(ex.x.size() == input_width(), ErrorKind::Input, "input width mismatch");
      require(ex.label >= 0 && static_cast<std::size_t>(ex.label) < num_classes(),
              ErrorKind::Input, "label out of range");

      act[0].assign(ex.x.begin(), ex.x.end());
      for (std::size_t l = 0; l < L; ++l) {
        mask[l].assign(widths_[l], 1.0);
        if (dropout_rng != nullptr && dropout_[l] > 0.0) {
          const double keep = 1.0 - dropout_[l];
          for (std::size_t i = 0; i < widths_[l]; ++i) {
            mask[l][i] = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
            act[l][i] *= mask[l][i];
          }
        }
        act[l + 1].assign(widths_[l + 1], 0.0);
        auto b = params_.tensor(2 * l + 1);
        std::copy(b.begin(), b.end(), act[l + 1].begin());
        matvec_add(params_.tensor(2 * l), widths_[l + 1], widths_[l], act[l], act[l + 1]);
        if (l + 1 < L) {
          for (auto& v : act[l + 1]) v = std::max(0.0, v);
        } else {
          softmax_inplace(act[l + 1]);
        }
      }

      const auto& probs = act[L];
      std::vector<double> target(num_classes(), 0.0);
      target[static_cast<std::size_t>(ex.label)] = targets.lambda;
      if (targets.lambda < 1.0) {
        // Extended-precision mean so identical teachers reproduce their
        // shared distribution bitwise.
        std::vector<long double> mean_p(target.size(), 0.0L);
        for (const auto* teacher : targets.teachers) {
          const auto p = teacher->forward(ex.x);
          for (std::size_t w = 0; w < target.size(); ++w) mean_p[w] += p[w];
        }
        const auto kk = static_cast<long double>(targets.teachers.size());
        for (std::size_t w = 0; w < target.size(); ++w) {
          target[w] += (1.0 - targets.lambda) * static_cast<double>(mean_p[w] / kk);
        }
      }
      double loss = 0.0;
      for (std::size_t w = 0; w < target.size(); ++w) {
        if (target[w] > 0.0) loss -= target[w] * std::log(probs[w]);
      }
      total_loss += loss;

      // Softmax + cross-entropy against a distribution: dlogits = p - t.
      std::vector<double> delta(num_classes());
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (std::size_t w = 0; w < delta.size(); ++w) delta[w] = (probs[w] - target[w]) * inv_b;

      for (std::size_t l = L; l-- > 0;) {
        std::vector<double> dprev(widths_[l], 0.0);
        auto gb = grad.tensor(2 * l + 1);
        for (std::size_t r = 0; r < widths_[l + 1]; ++r) gb[r] += delta[r];
        matvec_backward(params_.tensor(2 * l), widths_[l + 1], widths_[l], act[l], delta,
                        grad.tensor(2 * l), dprev);
        if (l > 0) {
          for (std::size_t i = 0; i < widths_[l]; ++i) {
            dprev[i] = act[l][i] > 0.0 ? dprev[i] * mask[l][i] : 0.0;
          }
          // act[l] is post-ReLU post-dropout; zero activation means the unit
          // was inactive or dropped, either way no gradient flows.
          delta = std::move(dprev);
        }
      }
    }
    return total_loss / static_cast<double>(batch.size());
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<double> dropout_;
  ParameterVector params_;
};

}  // namespace ftnn
