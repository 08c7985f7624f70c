#include "mptlml/bernoulli.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

#include "mptlml/error.hpp"
#include "mptlml/parallel.hpp"

namespace mptlml {

namespace {

constexpr Eigen::Index kRowBlock = 64;

using Array = Eigen::ArrayXXd;

// log(1 + e^l) and 1 / (1 + e^-l) from one exponential. log(1 + e) rather
// than log1p keeps the expression vectorised; the absolute error is ~1e-16.
void softplus_sigmoid(const Array& l, Array* sp, Array* sig) {
  const Array e = (-l.abs()).exp();
  if (sp) *sp = l.max(0.0) + (1.0 + e).log();
  if (sig) *sig = (l >= 0.0).select(1.0, e) / (1.0 + e);
}

Array softplus(const Array& l) {
  Array sp;
  softplus_sigmoid(l, &sp, nullptr);
  return sp;
}

// Column-wise log-sum-exp; a is overwritten with exp(a - lse), the normalised
// posterior over nodes for each observation (column).
Vector lse_cols_and_normalise(Matrix& a) {
  Vector lse(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    auto col = a.col(j);
    const double mx = col.maxCoeff();
    col = (col.array() - mx).exp().matrix();
    const double s = col.sum();
    lse[j] = mx + std::log(s);
    col /= s;
  }
  return lse;
}

Vector flatten_bern(const BernoulliLinearParams& p) {
  const Index D = p.dim(), K = p.latent();
  Vector flat(D * K + D);
  for (Index d = 0; d < D; ++d)
    for (Index k = 0; k < K; ++k) flat[d * K + k] = p.W(d, k);
  flat.segment(D * K, D) = p.mu;
  return flat;
}

Vector flatten_bern(const BernoulliGrad& g) {
  const Index D = g.dW.rows(), K = g.dW.cols();
  Vector flat(D * K + D);
  for (Index d = 0; d < D; ++d)
    for (Index k = 0; k < K; ++k) flat[d * K + k] = g.dW(d, k);
  flat.segment(D * K, D) = g.dmu;
  return flat;
}

BernoulliLinearParams unflatten_bern(const Eigen::Ref<const Vector>& flat, Index D, Index K) {
  BernoulliLinearParams p;
  p.W.resize(D, K);
  for (Index d = 0; d < D; ++d)
    for (Index k = 0; k < K; ++k) p.W(d, k) = flat[d * K + k];
  p.mu = flat.segment(D * K, D);
  return p;
}

void check_binary(const Matrix& X, Index D) {
  if (X.cols() != D) throw Error(ErrorCode::DimensionMismatch, "data/model dimension mismatch");
  if (((X.array() != 0.0) && (X.array() != 1.0)).any())
    throw Error(ErrorCode::MalformedInput, "Bernoulli data must be binary");
}

std::size_t block_count(Eigen::Index n) { return static_cast<std::size_t>((n + kRowBlock - 1) / kRowBlock); }

}  // namespace

void BernoulliLinearParams::validate(bool require_k2) const {
  if (W.rows() < 1 || W.cols() < 1 || mu.size() != W.rows())
    throw Error(ErrorCode::DimensionMismatch, "inconsistent Bernoulli parameter shapes");
  if (require_k2 && W.cols() != 2)
    throw Error(ErrorCode::DimensionMismatch, "quadrature needs a two-dimensional latent space");
  if (!W.allFinite() || !mu.allFinite()) throw Error(ErrorCode::DimensionMismatch, "non-finite parameters");
}

BernoulliGrad BernoulliGrad::zeros(Index dim, Index latent) {
  return BernoulliGrad{Matrix::Zero(dim, latent), Vector::Zero(dim)};
}

BernoulliGrad& BernoulliGrad::operator+=(const BernoulliGrad& other) {
  dW += other.dW;
  dmu += other.dmu;
  return *this;
}

double BernoulliGrad::norm() const { return std::sqrt(dW.squaredNorm() + dmu.squaredNorm()); }

QuadratureGrid::QuadratureGrid(double half_width, Index points_per_axis)
    : half_width_(half_width), points_(points_per_axis) {
  if (!(half_width > 0.0) || points_per_axis < 2)
    throw Error(ErrorCode::ConfigError, "quadrature grid needs L > 0 and G >= 2");
  const double h = 2.0 * half_width / static_cast<double>(points_per_axis);
  const double log_cell = 2.0 * std::log(h);
  nodes_.resize(points_per_axis * points_per_axis, 2);
  log_weights_.resize(points_per_axis * points_per_axis);
  for (Index a = 0; a < points_per_axis; ++a)
    for (Index b = 0; b < points_per_axis; ++b) {
      const Index g = a * points_per_axis + b;
      const double z1 = -half_width + (static_cast<double>(a) + 0.5) * h;
      const double z2 = -half_width + (static_cast<double>(b) + 0.5) * h;
      nodes_(g, 0) = z1;
      nodes_(g, 1) = z2;
      log_weights_[g] = -0.5 * (z1 * z1 + z2 * z2) - kLog2Pi + log_cell;
    }
  prior_mass_ = log_weights_.array().exp().sum();
  log_weights_.array() -= std::log(prior_mass_);
}

GaussHermite::GaussHermite(Index order) {
  if (order < 1) throw Error(ErrorCode::ConfigError, "Gauss-Hermite order must be >= 1");
  Matrix J = Matrix::Zero(order, order);
  for (Index k = 1; k < order; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k) / 2.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(J);
  nodes = eig.eigenvalues();
  weights = std::sqrt(std::numbers::pi) * eig.eigenvectors().row(0).transpose().array().square();
}

BernoulliQuadrature::BernoulliQuadrature(const BernoulliLinearParams& params, const QuadratureGrid& grid)
    : params_(params), grid_(grid) {
  params.validate();
  logits_ = grid.nodes() * params.W.transpose();
  logits_.rowwise() += params.mu.transpose();
  Array sp, sig;
  softplus_sigmoid(logits_.array(), &sp, &sig);
  softplus_ = sp.matrix();
  sigmoid_ = sig.matrix();
  base_ = grid.log_weights() - softplus_.rowwise().sum();
}

Vector BernoulliQuadrature::lml_rows(const Matrix& X, int workers) const {
  Vector out;
  masked_objective(X, Matrix(), nullptr, &out, nullptr, workers);
  return out;
}

double BernoulliQuadrature::masked_objective(const Matrix& X, const Matrix& rest, Vector* row_values,
                                             Vector* row_lml, BernoulliGrad* grad, int workers) const {
  const Index D = params_.dim();
  check_binary(X, D);
  const bool has_rest = rest.size() > 0;
  if (has_rest && (rest.rows() != X.rows() || rest.cols() != D))
    throw Error(ErrorCode::DimensionMismatch, "rest indicator shape differs from data");
  const Eigen::Index n = X.rows();
  const std::size_t blocks = block_count(n);

  const Matrix& Z = grid_.nodes();

  Vector values(n), lmls(n);
  std::vector<BernoulliGrad> partial(grad ? blocks : 0, BernoulliGrad::zeros(D, params_.latent()));

  // Logits are affine in z, so logits * v = Z (W^T v) + mu^T v for any
  // v; only the softplus and sigmoid terms need the full nodes x D products.
  parallel_for(blocks, workers, [&](std::size_t b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b) * kRowBlock;
    const Eigen::Index B = std::min(kRowBlock, n - lo);
    const auto Xb = X.middleRows(lo, B);

    // Nodes x observations, so each observation's posterior is contiguous.
    Matrix post = Z * (params_.W.transpose() * Xb.transpose());
    post.rowwise() += (Xb * params_.mu).transpose();
    post.colwise() += base_;
    const Vector full = lse_cols_and_normalise(post);
    lmls.segment(lo, B) = full;

    Matrix post_rest, XR, Rb;
    Vector rest_lse = Vector::Zero(B);  // log p(x_R) = 0 for an empty rest
    if (has_rest) {
      Rb = rest.middleRows(lo, B);
      XR = Xb.cwiseProduct(Rb);
      post_rest = Z * (params_.W.transpose() * XR.transpose());
      post_rest.noalias() -= softplus_ * Rb.transpose();
      post_rest.rowwise() += (XR * params_.mu).transpose();
      post_rest.colwise() += grid_.log_weights();
      rest_lse = lse_cols_and_normalise(post_rest);
      for (Eigen::Index i = 0; i < B; ++i)
        if (Rb.row(i).sum() == 0.0) rest_lse[i] = 0.0;
    }
    values.segment(lo, B) = full - rest_lse;

    if (!grad) return;
    // d/dlogit(g, d) = sum_i post(g,i) (x_id - s_gd) - post_rest(g,i) r_id (x_id - s_gd),
    // contracted with z_g for W and summed over g for mu.
    BernoulliGrad& gb = partial[b];
    const Vector mass = post.rowwise().sum();
    gb.dW.noalias() += Xb.transpose() * (post.transpose() * Z);
    gb.dW.noalias() -= sigmoid_.transpose() * (mass.asDiagonal() * Z);
    gb.dmu += Xb.colwise().sum().transpose() - sigmoid_.transpose() * mass;
    if (has_rest) {
      gb.dW.noalias() -= XR.transpose() * (post_rest.transpose() * Z);
      gb.dmu -= XR.colwise().sum().transpose();
      const Matrix pr = (post_rest * Rb).cwiseProduct(sigmoid_);  // nodes x D
      gb.dW.noalias() += pr.transpose() * Z;
      gb.dmu += pr.colwise().sum().transpose();
    }
  });

  if (grad) {
    *grad = BernoulliGrad::zeros(D, params_.latent());
    for (const auto& p : partial) *grad += p;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += values[i];
  if (row_values) *row_values = std::move(values);
  if (row_lml) *row_lml = std::move(lmls);
  return total;
}

double lml_quadrature(const BernoulliLinearParams& params, const Eigen::Ref<const Vector>& x,
                      const QuadratureGrid& grid) {
  const BernoulliQuadrature engine(params, grid);
  return engine.lml_rows(x.transpose())[0];
}

double conditional_quadrature(const BernoulliLinearParams& params, const Eigen::Ref<const Vector>& x,
                              const MaskPair& mask, const QuadratureGrid& grid, ConditionalForm form) {
  const Index D = params.dim();
  if (x.size() != D || mask.dim != D) throw Error(ErrorCode::DimensionMismatch, "mask/observation dimension mismatch");
  const BernoulliQuadrature engine(params, grid);
  Matrix rest = Matrix::Zero(1, D);
  for (Index r : mask.rest) rest(0, r) = 1.0;
  if (form == ConditionalForm::Block) {
    Vector values;
    engine.masked_objective(x.transpose(), rest, &values, nullptr, nullptr);
    return values[0];
  }
  // Token-wise: log posterior over nodes given x_R, then each masked token's
  // predictive log probability under it.
  Matrix logits = grid.nodes() * params.W.transpose();
  logits.rowwise() += params.mu.transpose();
  const Array sp = softplus(logits.array());
  Vector log_post = grid.log_weights();
  for (Index r : mask.rest) log_post += (x[r] * logits.col(r).array() - sp.col(r)).matrix();
  const double mx = log_post.maxCoeff();
  log_post.array() -= mx + std::log((log_post.array() - mx).exp().sum());
  double total = 0.0;
  for (Index j : mask.masked) {
    const Vector term = log_post + (x[j] * logits.col(j).array() - sp.col(j)).matrix();
    const double tm = term.maxCoeff();
    total += tm + std::log((term.array() - tm).exp().sum());
  }
  return total;
}

double elbo(const BernoulliLinearParams& params, const VariationalParams& q,
            const Eigen::Ref<const Vector>& x, Index hermite_order) {
  params.validate(false);
  const Index K = params.latent();
  if (q.mean.size() != K || q.log_var.size() != K)
    throw Error(ErrorCode::DimensionMismatch, "variational parameters must have length K");
  if (x.size() != params.dim()) throw Error(ErrorCode::DimensionMismatch, "observation dimension mismatch");
  const GaussHermite rule(hermite_order);
  return elbo_rows(params, q.mean.transpose(), q.log_var.transpose(), x.transpose(), rule, nullptr)[0];
}

namespace {

// Tensor Gauss-Hermite nodes (t) and normalised weights for N(0, I_K) after
// the change of variables z = m + sqrt(2) s t.
struct TensorRule {
  Matrix t;  // nodes x K
  Vector w;  // sums to 1
};

TensorRule tensor_rule(const GaussHermite& rule, Index K) {
  const Index n = rule.nodes.size();
  Index total = 1;
  for (Index k = 0; k < K; ++k) total *= n;
  TensorRule tr{Matrix(total, K), Vector(total)};
  for (Index g = 0; g < total; ++g) {
    Index rem = g;
    double w = 1.0;
    for (Index k = K - 1; k >= 0; --k) {
      const Index a = rem % n;
      rem /= n;
      tr.t(g, k) = rule.nodes[a];
      w *= rule.weights[a] / std::sqrt(std::numbers::pi);
    }
    tr.w[g] = w;
  }
  return tr;
}

}  // namespace

Vector elbo_rows(const BernoulliLinearParams& params, const Matrix& q_mean, const Matrix& q_log_var,
                 const Matrix& X, const GaussHermite& rule, ElboGrad* grad, int workers) {
  params.validate(false);
  const Index D = params.dim(), K = params.latent();
  const Eigen::Index n = X.rows();
  check_binary(X, D);
  if (q_mean.rows() != n || q_mean.cols() != K || q_log_var.rows() != n || q_log_var.cols() != K)
    throw Error(ErrorCode::DimensionMismatch, "variational parameter shapes differ from data");
  const TensorRule tr = tensor_rule(rule, K);
  const std::size_t blocks = block_count(n);
  Vector out(n);
  std::vector<BernoulliGrad> partial(grad ? blocks : 0, BernoulliGrad::zeros(D, K));
  if (grad) {
    grad->dmean.resize(n, K);
    grad->dlog_var.resize(n, K);
  }

  parallel_for(blocks, workers, [&](std::size_t b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b) * kRowBlock;
    const Eigen::Index hi = std::min(n, lo + kRowBlock);
    for (Eigen::Index i = lo; i < hi; ++i) {
      const Eigen::RowVectorXd m = q_mean.row(i);
      const Eigen::RowVectorXd v = q_log_var.row(i).array().exp();
      const Eigen::RowVectorXd s = v.array().sqrt();
      const Eigen::RowVectorXd scale = std::numbers::sqrt2 * s;
      Matrix Z = tr.t * scale.asDiagonal();
      Z.rowwise() += m;
      Matrix L = Z * params.W.transpose();
      L.rowwise() += params.mu.transpose();
      Array sp, sig;
      softplus_sigmoid(L.array(), &sp, grad ? &sig : nullptr);
      const auto x = X.row(i);
      const Vector ll = (L * x.transpose()) - sp.rowwise().sum().matrix();
      const double kl = 0.5 * (v.array() + m.array().square() - 1.0 - q_log_var.row(i).array()).sum();
      out[i] = tr.w.dot(ll) - kl;
      if (!grad) continue;
      Matrix G = (-sig).matrix();
      G.rowwise() += x;
      G = tr.w.asDiagonal() * G;  // weighted d ll / d logits
      partial[b].dW.noalias() += G.transpose() * Z;
      partial[b].dmu += G.colwise().sum().transpose();
      const Matrix GW = G * params.W;  // nodes x K
      grad->dmean.row(i) = GW.colwise().sum() - m;
      for (Index k = 0; k < K; ++k)
        grad->dlog_var(i, k) = 0.5 * scale[k] * GW.col(k).dot(tr.t.col(k)) - 0.5 * (v[k] - 1.0);
    }
  });
  if (grad) {
    grad->model = BernoulliGrad::zeros(D, K);
    for (const auto& p : partial) grad->model += p;
  }
  return out;
}

void BernoulliTrainConfig::validate() const {
  auto bad = [](const std::string& what) { return Error(ErrorCode::ConfigError, what); };
  if (!(rate > 0.0 && rate < 1.0)) throw bad("masking rate must lie in (0, 1)");
  if (epochs < 1) throw bad("epochs must be >= 1");
  if (!(optimizer.learning_rate >= 0.0)) throw bad("learning rate must be >= 0");
  if (log_every < 1) throw bad("log_every must be >= 1");
  if (hermite_order < 20) throw bad("Gauss-Hermite order must be >= 20");
  if (workers < 1) throw bad("workers must be >= 1");
}

BernoulliLinearParams init_bernoulli(Index dim, Index latent, double w_std, Stream& rng) {
  BernoulliLinearParams p;
  p.W.resize(dim, latent);
  for (Index d = 0; d < dim; ++d)
    for (Index k = 0; k < latent; ++k) p.W(d, k) = w_std * rng.normal();
  p.mu = Vector::Zero(dim);
  return p;
}

BernoulliLinearParams init_bernoulli_pca(const Matrix& X, Index latent, double scale, double w_std, Stream& rng) {
  const Index dim = X.cols();
  if (X.rows() < 2 || latent < 1 || latent > dim)
    throw Error(ErrorCode::DimensionMismatch, "principal init needs >= 2 rows and latent <= dim");
  const Vector mean = X.colwise().mean().transpose();
  const Matrix centred = X.rowwise() - mean.transpose();
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(centred.transpose() * centred / static_cast<double>(X.rows()));
  BernoulliLinearParams p = init_bernoulli(dim, latent, w_std, rng);
  for (Index k = 0; k < latent; ++k) {
    Vector v = eig.eigenvectors().col(dim - 1 - k);
    Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v[at] < 0.0) v = -v;  // fix the sign so the start does not depend on the solver
    p.W.col(k) += scale * v;
  }
  const Eigen::ArrayXd m = mean.array().max(0.01).min(0.99);
  p.mu = (m / (1.0 - m)).log().matrix();
  return p;
}

namespace {

bool logged(Index e, const BernoulliTrainConfig& c) { return e % c.log_every == 0 || e + 1 == c.epochs; }

}  // namespace

BernoulliTrace train_mpt_bernoulli(const BernoulliLinearParams& init, const Matrix& X,
                                   const BernoulliTrainConfig& config) {
  config.validate();
  init.validate();
  const Index D = init.dim(), K = init.latent();
  check_binary(X, D);
  const QuadratureGrid grid(config.grid_half_width, config.grid_points);
  const Index m = mask_size_for_rate(config.rate, D);
  const Stream base(config.seed);
  Optimizer opt(D * K + D, config.optimizer);
  Vector flat = flatten_bern(init);
  BernoulliTrace trace;
  Matrix rest(X.rows(), D);

  for (Index e = 0; e < config.epochs; ++e) {
    const BernoulliLinearParams params = unflatten_bern(flat, D, K);
    rest.setOnes();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      Stream s = base.child({tag::kMask, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(i)});
      for (Index j : sample_mask(D, m, s).masked) rest(i, j) = 0.0;
    }
    const BernoulliQuadrature engine(params, grid);
    Vector lmls;
    BernoulliGrad g;
    const double objective = engine.masked_objective(X, rest, nullptr, &lmls, &g, config.workers);
    const double lml = lmls.sum();
    if (!std::isfinite(objective) || !std::isfinite(lml) || !std::isfinite(g.norm()))
      throw Error(ErrorCode::NonFiniteLoss, "non-finite objective at epoch " + std::to_string(e));
    if (logged(e, config)) trace.records.push_back({e, objective, lml, g.norm(), m});
    opt.ascend(flat, flatten_bern(g));
  }
  trace.final_params = unflatten_bern(flat, D, K);
  trace.final_lml = BernoulliQuadrature(trace.final_params, grid).lml_rows(X, config.workers).sum();
  return trace;
}

BernoulliTrace train_elbo_bernoulli(const BernoulliLinearParams& init, const Matrix& X,
                                    const BernoulliTrainConfig& config) {
  config.validate();
  init.validate();
  const Index D = init.dim(), K = init.latent();
  const Eigen::Index n = X.rows();
  check_binary(X, D);
  const QuadratureGrid grid(config.grid_half_width, config.grid_points);
  const GaussHermite rule(config.hermite_order);
  const Index model_size = D * K + D;
  Optimizer opt(model_size + 2 * n * K, config.optimizer);
  Vector flat = Vector::Zero(model_size + 2 * n * K);
  flat.head(model_size) = flatten_bern(init);
  BernoulliTrace trace;

  // Row-major (n x K) views for the per-observation means and log variances.
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (Index e = 0; e < config.epochs; ++e) {
    const BernoulliLinearParams params = unflatten_bern(flat.head(model_size), D, K);
    const Matrix q_mean = Eigen::Map<const RowMajor>(flat.data() + model_size, n, K);
    const Matrix q_log_var = Eigen::Map<const RowMajor>(flat.data() + model_size + n * K, n, K);
    ElboGrad g;
    const double objective = elbo_rows(params, q_mean, q_log_var, X, rule, &g, config.workers).sum();
    Vector step(flat.size());
    step.head(model_size) = flatten_bern(g.model);
    Eigen::Map<RowMajor>(step.data() + model_size, n, K) = g.dmean;
    Eigen::Map<RowMajor>(step.data() + model_size + n * K, n, K) = g.dlog_var;
    if (!std::isfinite(objective) || !step.allFinite())
      throw Error(ErrorCode::NonFiniteLoss, "non-finite objective at epoch " + std::to_string(e));
    if (logged(e, config)) {
      const double lml = BernoulliQuadrature(params, grid).lml_rows(X, config.workers).sum();
      trace.records.push_back({e, objective, lml, g.model.norm(), 0});
    }
    opt.ascend(flat, step);
  }
  trace.final_params = unflatten_bern(flat.head(model_size), D, K);
  trace.final_lml = BernoulliQuadrature(trace.final_params, grid).lml_rows(X, config.workers).sum();
  return trace;
}

Matrix sample_bernoulli(const BernoulliLinearParams& params, Index n, std::uint64_t seed) {
  params.validate(false);
  if (n < 1) throw Error(ErrorCode::ConfigError, "sample size must be >= 1");
  const Index D = params.dim(), K = params.latent();
  const Stream base(seed);
  Matrix X(n, D);
  Vector z(K);
  for (Index i = 0; i < n; ++i) {
    Stream s = base.child({tag::kData, static_cast<std::uint64_t>(i)});
    for (Index k = 0; k < K; ++k) z[k] = s.normal();
    const Vector logits = params.W * z + params.mu;
    for (Index d = 0; d < D; ++d) X(i, d) = s.uniform() < 1.0 / (1.0 + std::exp(-logits[d])) ? 1.0 : 0.0;
  }
  return X;
}

}  // namespace mptlml
