#include "mptlml/ppca.hpp"

#include <cmath>

#include "mptlml/error.hpp"

namespace mptlml {

namespace {

void require_dim(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::DimensionMismatch, what);
}

Matrix ppca_cov(const PpcaParams& p) {
  Matrix S = p.W * p.W.transpose();
  S.diagonal().array() += p.sigma2();
  return S;
}

Eigen::LLT<Matrix> factor(const Matrix& S) {
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPositiveDefinite, "Cholesky factorization failed");
  return llt;
}

double logdet(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

double PpcaParams::sigma2() const { return std::exp(log_sigma2); }

void PpcaParams::validate() const {
  require_dim(W.rows() >= 1, "PPCA needs D >= 1");
  require_dim(W.cols() >= 1 && W.cols() <= W.rows(), "PPCA needs 1 <= K <= D");
  require_dim(mu.size() == W.rows(), "mu length differs from D");
  require_dim(W.allFinite() && mu.allFinite() && std::isfinite(log_sigma2),
              "PPCA parameters must be finite");
}

void Dataset::validate() const {
  if (rows.rows() < 1 || rows.cols() < 1) throw Error(ErrorCode::MalformedInput, "dataset is empty");
  if (!rows.allFinite()) throw Error(ErrorCode::MalformedInput, "dataset has non-finite entries");
}

ParamGrad ParamGrad::zeros(Index dim, Index latent) {
  return ParamGrad{Matrix::Zero(dim, latent), Vector::Zero(dim), 0.0};
}

ParamGrad& ParamGrad::operator+=(const ParamGrad& other) {
  dW += other.dW;
  dmu += other.dmu;
  dlog_sigma2 += other.dlog_sigma2;
  return *this;
}

ParamGrad& ParamGrad::operator*=(double s) {
  dW *= s;
  dmu *= s;
  dlog_sigma2 *= s;
  return *this;
}

double ParamGrad::norm() const {
  return std::sqrt(dW.squaredNorm() + dmu.squaredNorm() + dlog_sigma2 * dlog_sigma2);
}

GaussianJoint marginal_covariance(const PpcaParams& params) {
  params.validate();
  return assemble_joint(params.mu, ppca_cov(params));
}

Vector lml_rows(const PpcaParams& params, const Dataset& data) {
  params.validate();
  require_dim(data.dim() == params.dim(), "data has " + std::to_string(data.dim()) +
                                              " columns, model expects " + std::to_string(params.dim()));
  const auto llt = factor(ppca_cov(params));
  const Matrix R = (data.rows.rowwise() - params.mu.transpose()).transpose();
  const Matrix Z = llt.matrixL().solve(R);
  const double c = -0.5 * logdet(llt) - 0.5 * static_cast<double>(params.dim()) * kLog2Pi;
  return (-0.5 * Z.colwise().squaredNorm().transpose()).array() + c;
}

double lml(const PpcaParams& params, const Dataset& data) {
  // Sequential sum in row order.
  const Vector rows = lml_rows(params, data);
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows.size(); ++i) total += rows[i];
  return total;
}

Dataset sample_dataset(const PpcaParams& params, Index n, std::uint64_t seed) {
  params.validate();
  if (n < 1) throw Error(ErrorCode::ConfigError, "sample_dataset needs n >= 1");
  const Index D = params.dim(), K = params.latent();
  const double sigma = std::sqrt(params.sigma2());
  const Stream base(seed);
  Dataset out;
  out.rows.resize(n, D);
  Vector z(K), eps(D);
  for (Index i = 0; i < n; ++i) {
    Stream s = base.child({tag::kData, static_cast<std::uint64_t>(i)});
    for (Index k = 0; k < K; ++k) z[k] = s.normal();
    for (Index d = 0; d < D; ++d) eps[d] = s.normal();
    out.rows.row(i) = (params.W * z + params.mu + sigma * eps).transpose();
  }
  out.meta.seed = seed;
  out.meta.synthetic = true;
  out.meta.source = "ppca";
  return out;
}

ParamGrad lml_grad(const PpcaParams& params, const Dataset& data) {
  params.validate();
  require_dim(data.dim() == params.dim(), "data/model dimension mismatch");
  const double n = static_cast<double>(data.size());
  const double s2 = params.sigma2();
  const auto llt = factor(ppca_cov(params));
  const Matrix R = (data.rows.rowwise() - params.mu.transpose()).transpose();  // D x n
  const Matrix alpha = llt.solve(R);                                          // S^{-1} r_i
  const Matrix B = llt.solve(params.W);                                       // S^{-1} W
  ParamGrad g;
  // dL/dS = 1/2 (sum_i a_i a_i^T - n S^{-1}); dW = 2 dL/dS W.
  g.dW = alpha * (alpha.transpose() * params.W) - n * B;
  g.dmu = alpha.rowwise().sum();
  // sigma2 tr(S^{-1}) = D - tr(W^T S^{-1} W).
  g.dlog_sigma2 = 0.5 * (s2 * alpha.squaredNorm() - n * static_cast<double>(params.dim()) +
                         n * (params.W.transpose() * B).trace());
  return g;
}

MaskedObjective::MaskedObjective(const PpcaParams& params) : params_(params) {
  params_.validate();
  cov_ = ppca_cov(params_);
  full_llt_ = factor(cov_);
  full_logdet_ = logdet(full_llt_);
  full_solved_W_ = full_llt_.solve(params_.W);
}

double MaskedObjective::full_term(const Eigen::Ref<const Vector>& x, double weight,
                                  ParamGrad* grad) const {
  const Vector r = x - params_.mu;
  const Vector alpha = full_llt_.solve(r);
  const double D = static_cast<double>(params_.dim());
  const double value = -0.5 * r.dot(alpha) - 0.5 * full_logdet_ - 0.5 * D * kLog2Pi;
  if (grad) {
    const Matrix& W = params_.W;
    grad->dW.noalias() += weight * (alpha * (alpha.transpose() * W) - full_solved_W_);
    grad->dmu += weight * alpha;
    grad->dlog_sigma2 += weight * 0.5 *
                         (params_.sigma2() * alpha.squaredNorm() - D +
                          (W.transpose() * full_solved_W_).trace());
  }
  return value;
}

double MaskedObjective::subset_term(const Eigen::Ref<const Vector>& x, const std::vector<Index>& idx,
                                    double weight, ParamGrad* grad) const {
  if (idx.empty()) return 0.0;
  const auto m = static_cast<Eigen::Index>(idx.size());
  const Matrix S = gather(cov_, idx, idx);
  const auto llt = factor(S);
  Vector r(m);
  Matrix W_I(m, params_.latent());
  for (Eigen::Index a = 0; a < m; ++a) {
    r[a] = x[idx[a]] - params_.mu[idx[a]];
    W_I.row(a) = params_.W.row(idx[a]);
  }
  const Vector alpha = llt.solve(r);
  const double value =
      -0.5 * r.dot(alpha) - 0.5 * logdet(llt) - 0.5 * static_cast<double>(m) * kLog2Pi;
  if (grad) {
    const Matrix B = llt.solve(W_I);
    const Matrix dW_I = alpha * (alpha.transpose() * W_I) - B;
    for (Eigen::Index a = 0; a < m; ++a) {
      grad->dW.row(idx[a]) += weight * dW_I.row(a);
      grad->dmu[idx[a]] += weight * alpha[a];
    }
    grad->dlog_sigma2 += weight * 0.5 *
                         (params_.sigma2() * alpha.squaredNorm() - static_cast<double>(m) +
                          (W_I.transpose() * B).trace());
  }
  return value;
}

// Sum over masked tokens of log p(x_j | x_R). For each j the Gram matrix of
// R u {j} is the rest block bordered by one row, so with b = S_RR^{-1} S_Rj,
// v = S_jj - S_jR b and u = [-b; 1]:
//   S_{R+j}^{-1} = S_RR^{-1} (+) 0 + u u^T / v,   alpha_{R+j} = alpha_R + u e / v,
// where e = r_j - b^T r_R. The gradient of log N(x_{R+j}) - log N(x_R) with
// respect to S is then 1/2 [(e/v)(alpha_R u^T + u alpha_R^T) + (e^2/v^2 - 1/v) u u^T].
double MaskedObjective::token_terms(const Eigen::Ref<const Vector>& x, const MaskPair& mask,
                                    double weight, ParamGrad* grad) const {
  const auto& rest = mask.rest;
  const auto nr = static_cast<Eigen::Index>(rest.size());
  const auto nm = static_cast<Eigen::Index>(mask.masked.size());
  const Index K = params_.latent();
  const Matrix& W = params_.W;
  const double s2 = params_.sigma2();

  Vector r_R(nr);
  Matrix W_R(nr, K);
  for (Eigen::Index a = 0; a < nr; ++a) {
    r_R[a] = x[rest[a]] - params_.mu[rest[a]];
    W_R.row(a) = W.row(rest[a]);
  }
  Vector alpha_R = Vector::Zero(nr);
  Matrix S_RM = gather(cov_, rest, mask.masked);
  Matrix Bm(nr, nm);  // columns b_j
  if (nr > 0) {
    const auto llt = factor(gather(cov_, rest, rest));
    alpha_R = llt.solve(r_R);
    Bm = llt.solve(S_RM);
  }
  const Eigen::RowVectorXd aW = alpha_R.transpose() * W_R;

  double value = 0.0;
  for (Eigen::Index t = 0; t < nm; ++t) {
    const Index j = mask.masked[t];
    const auto b = Bm.col(t);
    const double v = cov_(j, j) - (nr > 0 ? S_RM.col(t).dot(b) : 0.0);
    if (!(v > 0.0)) throw Error(ErrorCode::NotPositiveDefinite, "non-positive conditional variance");
    const double e = (x[j] - params_.mu[j]) - (nr > 0 ? b.dot(r_R) : 0.0);
    value += -0.5 * (kLog2Pi + std::log(v) + e * e / v);
    if (!grad) continue;
    const double ev = e / v;
    const double c2 = ev * ev - 1.0 / v;
    const Eigen::RowVectorXd uW = W.row(j) - (nr > 0 ? (b.transpose() * W_R).eval() : Eigen::RowVectorXd::Zero(K));
    for (Eigen::Index a = 0; a < nr; ++a) {
      grad->dW.row(rest[a]) += weight * (ev * (alpha_R[a] * uW - b[a] * aW) - c2 * b[a] * uW);
      grad->dmu[rest[a]] -= weight * b[a] * ev;
    }
    grad->dW.row(j) += weight * (ev * aW + c2 * uW);
    grad->dmu[j] += weight * ev;
    const double a_u = nr > 0 ? -alpha_R.dot(b) : 0.0;
    const double u_u = 1.0 + (nr > 0 ? b.squaredNorm() : 0.0);
    grad->dlog_sigma2 += weight * 0.5 * s2 * (2.0 * ev * a_u + c2 * u_u);
  }
  return value;
}

double MaskedObjective::accumulate(const Eigen::Ref<const Vector>& x, const MaskPair& mask,
                                   ConditionalForm form, double weight, ParamGrad* grad) const {
  require_dim(x.size() == params_.dim() && mask.dim == params_.dim(),
              "observation/mask dimension differs from model");
  if (form == ConditionalForm::TokenWise) return token_terms(x, mask, weight, grad);
  const double full = full_term(x, weight, grad);
  return full - subset_term(x, mask.rest, -weight, grad);
}

LossGrad masked_loss_grad(const PpcaParams& params, const Eigen::Ref<const Vector>& x,
                          const MaskPair& mask, ConditionalForm form) {
  const MaskedObjective obj(params);
  LossGrad out{0.0, ParamGrad::zeros(params.dim(), params.latent())};
  out.value = obj.accumulate(x, mask, form, 1.0, &out.grad);
  return out;
}

Vector flatten(const PpcaParams& params) {
  const Index D = params.dim(), K = params.latent();
  Vector flat(D * K + D + 1);
  for (Index d = 0; d < D; ++d)
    for (Index k = 0; k < K; ++k) flat[d * K + k] = params.W(d, k);
  flat.segment(D * K, D) = params.mu;
  flat[D * K + D] = params.log_sigma2;
  return flat;
}

Vector flatten(const ParamGrad& grad) {
  const Index D = grad.dW.rows(), K = grad.dW.cols();
  Vector flat(D * K + D + 1);
  for (Index d = 0; d < D; ++d)
    for (Index k = 0; k < K; ++k) flat[d * K + k] = grad.dW(d, k);
  flat.segment(D * K, D) = grad.dmu;
  flat[D * K + D] = grad.dlog_sigma2;
  return flat;
}

PpcaParams unflatten_params(const Eigen::Ref<const Vector>& flat, Index dim, Index latent) {
  require_dim(flat.size() == dim * latent + dim + 1, "flat parameter length mismatch");
  PpcaParams p;
  p.W.resize(dim, latent);
  for (Index d = 0; d < dim; ++d)
    for (Index k = 0; k < latent; ++k) p.W(d, k) = flat[d * latent + k];
  p.mu = flat.segment(dim * latent, dim);
  p.log_sigma2 = flat[dim * latent + dim];
  return p;
}

PpcaParams init_params(Index dim, Index latent, double w_std, Stream& rng) {
  PpcaParams p;
  p.W.resize(dim, latent);
  for (Index d = 0; d < dim; ++d)
    for (Index k = 0; k < latent; ++k) p.W(d, k) = w_std * rng.normal();
  p.mu = Vector::Zero(dim);
  p.log_sigma2 = 0.0;
  p.validate();
  return p;
}

PpcaParams random_params(Index dim, Index latent, double w_std, double mu_std, double sigma2,
                         Stream& rng) {
  if (!(sigma2 > 0.0)) throw Error(ErrorCode::ConfigError, "noise variance must be positive");
  PpcaParams p = init_params(dim, latent, w_std, rng);
  for (Index d = 0; d < dim; ++d) p.mu[d] = mu_std * rng.normal();
  p.log_sigma2 = std::log(sigma2);
  return p;
}

}  // namespace mptlml
