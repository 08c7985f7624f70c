#include "mptlml/gaussian.hpp"

#include <cmath>
#include <string>

#include "mptlml/error.hpp"

namespace mptlml {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::DimensionMismatch, what);
}

}  // namespace

double GaussianJoint::logdet() const {
  return 2.0 * chol_.diagonal().array().log().sum();
}

GaussianJoint assemble_joint(Vector mean, Matrix cov) {
  require(cov.rows() == cov.cols(), "covariance must be square");
  require(cov.rows() == mean.size(), "mean and covariance dimensions differ");
  const double scale = cov.cwiseAbs().maxCoeff();
  if (cov.size() > 0 && (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw Error(ErrorCode::AsymmetricInput, "covariance is not symmetric");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success || !llt.matrixL().toDenseMatrix().diagonal().allFinite())
    throw Error(ErrorCode::NotPositiveDefinite, "Cholesky factorization failed");
  GaussianJoint g;
  g.chol_ = llt.matrixL();
  g.mean_ = std::move(mean);
  g.cov_ = std::move(cov);
  return g;
}

double log_density(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x) {
  require(x.size() == joint.dim(), "point dimension " + std::to_string(x.size()) +
                                       " differs from " + std::to_string(joint.dim()));
  const Vector z = joint.chol().triangularView<Eigen::Lower>().solve(x - joint.mean());
  return -0.5 * z.squaredNorm() - 0.5 * joint.logdet() -
         0.5 * static_cast<double>(joint.dim()) * kLog2Pi;
}

double log_density(const ConditionalGaussian& cond, const Eigen::Ref<const Vector>& x_masked) {
  return log_density(assemble_joint(cond.mean, cond.cov), x_masked);
}

Vector gather(const Eigen::Ref<const Vector>& x, const std::vector<Index>& indices) {
  Vector out(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out[static_cast<Eigen::Index>(i)] = x[indices[i]];
  return out;
}

Matrix gather(const Matrix& m, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < rows.size(); ++i)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
  return out;
}

ConditionalGaussian conditional(const GaussianJoint& joint, const MaskPair& mask,
                                const Eigen::Ref<const Vector>& x_rest) {
  require(mask.dim == joint.dim(), "mask dimension differs from joint dimension");
  require(x_rest.size() == static_cast<Eigen::Index>(mask.rest.size()),
          "conditioning vector length differs from |rest|");
  ConditionalGaussian out;
  out.mask = mask;
  out.mean = gather(joint.mean(), mask.masked);
  out.cov = gather(joint.cov(), mask.masked, mask.masked);
  if (mask.rest.empty()) return out;

  const GaussianJoint rest = marginal(joint, mask.rest);
  const auto L = rest.chol().triangularView<Eigen::Lower>();
  // A = L_R^{-1} S_RM, so S_MR S_RR^{-1} S_RM = A^T A.
  const Matrix A = L.solve(gather(joint.cov(), mask.rest, mask.masked));
  const Vector z = L.solve(x_rest - rest.mean());
  out.mean.noalias() += A.transpose() * z;
  out.cov.noalias() -= A.transpose() * A;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

GaussianJoint marginal(const GaussianJoint& joint, const std::vector<Index>& indices) {
  return assemble_joint(gather(joint.mean(), indices), gather(joint.cov(), indices, indices));
}

double log_normal_1d(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

}  // namespace mptlml
