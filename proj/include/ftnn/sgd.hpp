#pragma once

#include <cmath>

#include "ftnn/error.hpp"
#include "ftnn/parameters.hpp"

namespace ftnn {

struct SgdConfig {
  double learning_rate = 0.75;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double clip_norm = 10.0;
  std::size_t minibatch = 10;

  void validate() const {
    // Zero freezes the model (useful as a control); negative would ascend.
    require(learning_rate >= 0.0, ErrorKind::Config, "learning rate must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config, "momentum must be in [0,1)");
    require(weight_decay >= 0.0, ErrorKind::Config, "weight decay must be >= 0");
    require(clip_norm > 0.0, ErrorKind::Config, "clip threshold must be positive");
    require(minibatch >= 1, ErrorKind::Config, "minibatch size must be >= 1");
  }
};

// Classical SGD with momentum: clip the gradient by global norm, add the L2
// decay term, fold into the velocity, then step. Throws on non-finite
// gradients before touching the model, so an aborted step leaves it intact.
class SgdState {
 public:
  SgdState() = default;
  explicit SgdState(std::shared_ptr<const Layout> layout) : velocity_(std::move(layout)) {}

  void step(ParameterVector& params, const ParameterVector& grad, const SgdConfig& cfg) {
    cfg.validate();
    params.check_same_layout(grad);
    require(grad.all_finite(), ErrorKind::Numeric, "non-finite gradient; step aborted");
    if (velocity_.size() == 0) velocity_ = ParameterVector(params.layout_ptr());
    params.check_same_layout(velocity_);

    double clip_scale = 1.0;
    const double norm = grad.l2_norm();
    if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;

    auto p = params.values();
    auto g = grad.values();
    auto v = velocity_.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = clip_scale * g[i] + cfg.weight_decay * p[i];
      v[i] = cfg.momentum * v[i] + gi;
      p[i] -= cfg.learning_rate * v[i];
    }
  }

  const ParameterVector& velocity() const { return velocity_; }

 private:
  ParameterVector velocity_;
};

}  // namespace ftnn
