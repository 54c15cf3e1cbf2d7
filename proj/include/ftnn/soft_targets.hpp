#pragma once

#include <vector>

#include "ftnn/error.hpp"

namespace ftnn {

// Soft-target mix for distillation-style losses: weight lambda on the hard
// label, 1 - lambda spread evenly over the frozen teacher models' predictive
// distributions. One teacher gives the learning-without-forgetting target;
// several give the ensemble-distillation target. lambda = 1 is plain
// cross-entropy and never touches the teachers.
template <class Model>
struct SoftTargets {
  double lambda = 1.0;
  std::vector<const Model*> teachers;

  void validate(const Model& model) const {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Config, "lambda must be in [0,1]");
    if (lambda < 1.0) {
      require(!teachers.empty(), ErrorKind::Config,
              "soft targets with lambda < 1 need at least one teacher");
      for (const Model* t : teachers) {
        require(t != nullptr, ErrorKind::Config, "soft targets received a null teacher");
        require(model.parameters().same_layout(t->parameters()), ErrorKind::Layout,
                "teacher model layout mismatch");
      }
    }
  }
};

}  // namespace ftnn
