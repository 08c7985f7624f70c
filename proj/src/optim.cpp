#include "mptlml/optim.hpp"

#include <cmath>

#include "mptlml/error.hpp"

namespace mptlml {

Optimizer::Optimizer(Eigen::Index size, const OptimizerSettings& settings)
    : settings_(settings), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {
  if (!(settings.learning_rate >= 0.0)) throw Error(ErrorCode::ConfigError, "learning rate must be >= 0");
}

void Optimizer::ascend(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  const double lr = settings_.learning_rate;
  if (settings_.kind == OptimizerKind::Sgd) {
    params += lr * grad;
    return;
  }
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  m_ = b1 * m_ + (1.0 - b1) * grad;
  v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  params.array() += lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + settings_.epsilon);
}

}  // namespace mptlml
