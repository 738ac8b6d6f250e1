#pragma once

#include <vector>

#include "hissd/params.hpp"

namespace hissd::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

/// Adaptive-moment optimiser with bias correction and decoupled weight decay
/// over a fixed set of parameter stores.
class Adam {
 public:
  Adam(std::vector<ParamStore*> stores, AdamConfig cfg);

  /// Applies one update from the stores' gradient slots. Throws
  /// std::domain_error naming the parameter if any gradient is non-finite;
  /// no parameter is modified in that case.
  void step();

  long step_count() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  void zero_grad();

 private:
  std::vector<ParamStore*> stores_;
  AdamConfig cfg_;
  std::vector<std::vector<Mat>> m_;
  std::vector<std::vector<Mat>> v_;
  long steps_ = 0;
};

}  // namespace hissd::nn
