#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "planeloc/nn/tensor.hpp"

namespace planeloc::nn {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.0;   // SGD only
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

/// Adam or plain/momentum SGD over a fixed parameter list.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Parameter*> params);

  /// Applies one update from the accumulated gradients and increments the
  /// step counter. Throws ShapeMismatch if a parameter changed shape.
  void step();

  std::int64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  /// Moments and counter, little-endian binary.
  void save_state(std::ostream& out) const;
  void load_state(std::istream& in);

 private:
  OptimizerConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t steps_ = 0;
};

}  // namespace planeloc::nn
