#pragma once

#include <Eigen/Dense>

namespace mptlml {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Gradient-ascent optimizer over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(Eigen::Index size, const OptimizerSettings& settings);

  void ascend(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

  const OptimizerSettings& settings() const { return settings_; }
  long steps() const { return t_; }

 private:
  OptimizerSettings settings_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace mptlml
