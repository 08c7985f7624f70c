#pragma once

#include <vector>

#include "mptlml/gaussian.hpp"
#include "mptlml/masking.hpp"
#include "mptlml/optim.hpp"
#include "mptlml/ppca.hpp"

namespace mptlml {

// p(x | z) = prod_d Bern(x_d | sigmoid(w_d^T z + mu_d)), p(z) = N(0, I_K).
struct BernoulliLinearParams {
  Matrix W;  // D x K
  Vector mu;

  Index dim() const { return W.rows(); }
  Index latent() const { return W.cols(); }
  // Quadrature routines additionally require K = 2.
  void validate(bool require_k2 = true) const;
};

struct BernoulliGrad {
  Matrix dW;
  Vector dmu;

  static BernoulliGrad zeros(Index dim, Index latent);
  BernoulliGrad& operator+=(const BernoulliGrad& other);
  double norm() const;
};

// Uniform tensor grid of cell centres on [-L, L]^2 with weights equal to the
// prior density times the cell area, renormalised to sum to one so that a
// constant integrand is integrated exactly.
class QuadratureGrid {
 public:
  explicit QuadratureGrid(double half_width = 6.0, Index points_per_axis = 80);

  double half_width() const { return half_width_; }
  Index points_per_axis() const { return points_; }
  Index size() const { return nodes_.rows(); }
  const Matrix& nodes() const { return nodes_; }  // size x 2
  const Vector& log_weights() const { return log_weights_; }
  // Prior mass inside the grid before renormalisation.
  double total_weight() const { return prior_mass_; }

 private:
  double half_width_;
  Index points_;
  Matrix nodes_;
  Vector log_weights_;
  double prior_mass_ = 1.0;
};

// Diagonal Gaussian q(z) for one observation.
struct VariationalParams {
  Vector mean;
  Vector log_var;
};

// Gauss-Hermite rule for weight exp(-t^2) (Golub-Welsch).
struct GaussHermite {
  Vector nodes;
  Vector weights;
  explicit GaussHermite(Index order);
};

inline constexpr Index kDefaultHermiteOrder = 20;

double lml_quadrature(const BernoulliLinearParams& params, const Eigen::Ref<const Vector>& x,
                      const QuadratureGrid& grid);

// log p(x_M | x_R). Block form: lml over all dims minus lml over the rest
// dims (dropping the masked factors marginalises them exactly). Token-wise
// form: sum_j log p(x_j | x_R).
double conditional_quadrature(const BernoulliLinearParams& params, const Eigen::Ref<const Vector>& x,
                              const MaskPair& mask, const QuadratureGrid& grid,
                              ConditionalForm form = ConditionalForm::Block);

// E_q[log p(x|z)] - KL(q || N(0, I)); the expectation uses a tensor
// Gauss-Hermite rule of the given order per axis.
double elbo(const BernoulliLinearParams& params, const VariationalParams& q,
            const Eigen::Ref<const Vector>& x, Index hermite_order = kDefaultHermiteOrder);

// Batched quadrature over a binary data matrix (n x D). Rows are processed in
// fixed blocks whose partial results are reduced in block order.
class BernoulliQuadrature {
 public:
  BernoulliQuadrature(const BernoulliLinearParams& params, const QuadratureGrid& grid);

  // Per-row lml.
  Vector lml_rows(const Matrix& X, int workers = 1) const;

  // sum_i [log p(x_i) - log p(x_{i,R_i})] where rest(i, d) = 1 marks d in R_i.
  // Writes per-row values and, when grad is non-null, the gradient. An empty
  // rest matrix (or an all-zero row) drops the rest term: log p(x_{}) = 0.
  double masked_objective(const Matrix& X, const Matrix& rest, Vector* row_values, Vector* row_lml,
                          BernoulliGrad* grad, int workers = 1) const;

 private:
  const BernoulliLinearParams& params_;
  const QuadratureGrid& grid_;
  Matrix logits_;    // nodes x D
  Matrix softplus_;  // nodes x D
  Matrix sigmoid_;   // nodes x D
  Vector base_;      // log weight - sum_d softplus, per node
};

struct ElboGrad {
  BernoulliGrad model;
  Matrix dmean;     // n x K
  Matrix dlog_var;  // n x K
};

// Per-row ELBO for all observations, with gradients when grad is non-null.
Vector elbo_rows(const BernoulliLinearParams& params, const Matrix& q_mean, const Matrix& q_log_var,
                 const Matrix& X, const GaussHermite& rule, ElboGrad* grad, int workers = 1);

struct BernoulliTrainConfig {
  double rate = 0.33;  // MPT masking rate
  Index epochs = 200;
  OptimizerSettings optimizer{OptimizerKind::Adam, 0.05};
  std::uint64_t seed = 0;
  double init_w_std = 0.1;
  double grid_half_width = 6.0;
  Index grid_points = 80;
  Index hermite_order = kDefaultHermiteOrder;
  Index log_every = 1;
  int workers = 1;

  void validate() const;
};

struct BernoulliRecord {
  Index epoch = 0;
  double objective = 0.0;  // MPT: sum of log p(x_M | x_R); ELBO: sum of ELBO
  double lml = 0.0;        // quadrature lml at the same parameters
  double grad_norm = 0.0;
  Index mask_size = 0;     // 0 for ELBO runs
};

struct BernoulliTrace {
  std::vector<BernoulliRecord> records;  // logged epochs only
  BernoulliLinearParams final_params;
  double final_lml = 0.0;
};

// W_ij ~ N(0, w_std^2), mu = 0.
BernoulliLinearParams init_bernoulli(Index dim, Index latent, double w_std, Stream& rng);

// Data-dependent start: mu at the logit of the column means (clipped to
// [0.01, 0.99]), W along the leading principal directions of X scaled by
// `scale`, plus N(0, w_std^2) jitter.
BernoulliLinearParams init_bernoulli_pca(const Matrix& X, Index latent, double scale, double w_std, Stream& rng);

// Ascends sum_i log p(x_M | x_R) with a fresh mask of size floor(rate * D) per
// observation and epoch (Stream(seed).child({kMask, epoch, i})).
BernoulliTrace train_mpt_bernoulli(const BernoulliLinearParams& init, const Matrix& X,
                                   const BernoulliTrainConfig& config);

// Joint ascent of the ELBO over the model and one free diagonal Gaussian per
// observation (initialised at the prior).
BernoulliTrace train_elbo_bernoulli(const BernoulliLinearParams& init, const Matrix& X,
                                    const BernoulliTrainConfig& config);

// Samples a binary dataset from the model, row i from Stream(seed).child({kData, i}).
Matrix sample_bernoulli(const BernoulliLinearParams& params, Index n, std::uint64_t seed);

}  // namespace mptlml
