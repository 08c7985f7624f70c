#pragma once

#include <Eigen/Dense>

#include "mptlml/masking.hpp"

namespace mptlml {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Multivariate normal with a cached lower Cholesky factor. Immutable after
// construction; use assemble_joint to build one.
class GaussianJoint {
 public:
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& chol() const { return chol_; }
  Eigen::Index dim() const { return mean_.size(); }
  double logdet() const;

 private:
  friend GaussianJoint assemble_joint(Vector mean, Matrix cov);
  Vector mean_;
  Matrix cov_;
  Matrix chol_;
};

struct ConditionalGaussian {
  Vector mean;  // length |masked|
  Matrix cov;   // Schur complement
  MaskPair mask;
};

// Throws AsymmetricInput when |S_ij - S_ji| > 1e-12 max|S|, and
// NotPositiveDefinite when the Cholesky factorization fails. No jitter.
GaussianJoint assemble_joint(Vector mean, Matrix cov);

double log_density(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x);
double log_density(const ConditionalGaussian& cond, const Eigen::Ref<const Vector>& x_masked);

// Distribution of x_M given x_R = x_rest (x_rest ordered like mask.rest).
// An empty rest returns the marginal over the masked block.
ConditionalGaussian conditional(const GaussianJoint& joint, const MaskPair& mask,
                                const Eigen::Ref<const Vector>& x_rest);

// Marginal over an ordered index subset (0-based).
GaussianJoint marginal(const GaussianJoint& joint, const std::vector<Index>& indices);

// Gathers x[indices].
Vector gather(const Eigen::Ref<const Vector>& x, const std::vector<Index>& indices);
Matrix gather(const Matrix& m, const std::vector<Index>& rows, const std::vector<Index>& cols);

// log N(x | mean, var) for a scalar.
double log_normal_1d(double x, double mean, double var);

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace mptlml
