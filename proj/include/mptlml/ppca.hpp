#pragma once

#include <cstdint>
#include <string>

#include "mptlml/gaussian.hpp"
#include "mptlml/masking.hpp"

namespace mptlml {

// x = W z + mu + eps, z ~ N(0, I_K), eps ~ N(0, sigma2 I_D). The noise
// variance is stored as its logarithm so that any real value is valid.
struct PpcaParams {
  Matrix W;  // D x K
  Vector mu;
  double log_sigma2 = 0.0;

  Index dim() const { return W.rows(); }
  Index latent() const { return W.cols(); }
  double sigma2() const;

  // Throws DimensionMismatch unless D >= 1, 1 <= K <= D, |mu| = D and all
  // entries are finite.
  void validate() const;
};

struct DatasetMeta {
  std::uint64_t seed = 0;
  bool synthetic = false;
  std::string source;
};

struct Dataset {
  Matrix rows;  // n x D
  DatasetMeta meta;

  Index size() const { return rows.rows(); }
  Index dim() const { return rows.cols(); }
  // Throws MalformedInput on an empty matrix or a non-finite entry.
  void validate() const;
};

struct ParamGrad {
  Matrix dW;
  Vector dmu;
  double dlog_sigma2 = 0.0;

  static ParamGrad zeros(Index dim, Index latent);
  ParamGrad& operator+=(const ParamGrad& other);
  ParamGrad& operator*=(double s);
  double norm() const;
};

enum class ConditionalForm {
  TokenWise,  // sum_j log p(x_j | x_R), each masked token against the full rest
  Block,      // log N(x_M | m_{M|R}, v_{M|R})
};

struct LossGrad {
  double value = 0.0;
  ParamGrad grad;
};

// N(mu, W W^T + sigma2 I) with cached factor.
GaussianJoint marginal_covariance(const PpcaParams& params);

double lml(const PpcaParams& params, const Dataset& data);
Vector lml_rows(const PpcaParams& params, const Dataset& data);

// Rows are generated from independent substreams keyed by (seed, row), so the
// result does not depend on generation order.
Dataset sample_dataset(const PpcaParams& params, Index n, std::uint64_t seed);

// Gradient of lml with respect to (W, mu, log sigma2).
ParamGrad lml_grad(const PpcaParams& params, const Dataset& data);

// log p(x_M | x_R) and its gradient. With an empty rest the block form is the
// marginal log density of x.
LossGrad masked_loss_grad(const PpcaParams& params, const Eigen::Ref<const Vector>& x,
                          const MaskPair& mask, ConditionalForm form = ConditionalForm::Block);

// Reusable evaluator for many (x, mask) pairs under one parameter value.
// Caches S = W W^T + sigma2 I and its factor. Not thread-safe for a shared
// accumulator; give each worker its own ParamGrad.
class MaskedObjective {
 public:
  explicit MaskedObjective(const PpcaParams& params);

  // Adds weight * d/dtheta log p(x_M | x_R) into grad (when non-null) and
  // returns the unweighted value.
  double accumulate(const Eigen::Ref<const Vector>& x, const MaskPair& mask, ConditionalForm form,
                    double weight, ParamGrad* grad) const;

  const PpcaParams& params() const { return params_; }
  const Matrix& cov() const { return cov_; }

 private:
  double subset_term(const Eigen::Ref<const Vector>& x, const std::vector<Index>& idx, double weight,
                     ParamGrad* grad) const;
  double full_term(const Eigen::Ref<const Vector>& x, double weight, ParamGrad* grad) const;
  double token_terms(const Eigen::Ref<const Vector>& x, const MaskPair& mask, double weight,
                     ParamGrad* grad) const;

  PpcaParams params_;
  Matrix cov_;
  Eigen::LLT<Matrix> full_llt_;
  double full_logdet_ = 0.0;
  Matrix full_solved_W_;  // S^{-1} W
};

// Flat layout: W row-major, then mu, then log sigma2.
Vector flatten(const PpcaParams& params);
Vector flatten(const ParamGrad& grad);
PpcaParams unflatten_params(const Eigen::Ref<const Vector>& flat, Index dim, Index latent);

// W_ij ~ N(0, w_std^2), mu = 0, log sigma2 = 0.
PpcaParams init_params(Index dim, Index latent, double w_std, Stream& rng);

// Generating parameters for synthetic studies: W_ij ~ N(0, w_std^2),
// mu_d ~ N(0, mu_std^2), fixed noise variance.
PpcaParams random_params(Index dim, Index latent, double w_std, double mu_std, double sigma2,
                         Stream& rng);

}  // namespace mptlml
