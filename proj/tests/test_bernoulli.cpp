#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mptlml/bernoulli.hpp"
#include "mptlml/error.hpp"
#include "oracles.hpp"

using namespace mptlml;

namespace {

BernoulliLinearParams seeded(Index D, std::uint64_t seed, double w_std = 1.0) {
  Stream rng(seed);
  auto p = init_bernoulli(D, 2, w_std, rng);
  for (Index d = 0; d < D; ++d) p.mu[d] = rng.normal();
  return p;
}

Vector flat(const BernoulliLinearParams& p) {
  Vector v(p.W.size() + p.mu.size());
  for (Index d = 0; d < p.dim(); ++d) v.segment(d * 2, 2) = p.W.row(d).transpose();
  v.tail(p.dim()) = p.mu;
  return v;
}

Vector flat(const BernoulliGrad& g) {
  BernoulliLinearParams p{g.dW, g.dmu};
  return flat(p);
}

BernoulliLinearParams unflat(const Vector& v, Index D) {
  BernoulliLinearParams p{Matrix(D, 2), v.tail(D)};
  for (Index d = 0; d < D; ++d) p.W.row(d) = v.segment(d * 2, 2).transpose();
  return p;
}

double log_sigmoid(double t) { return -std::log1p(std::exp(-t)); }

double independent(const Vector& mu, const Vector& x, const std::vector<Index>& idx) {
  double s = 0.0;
  for (Index d : idx) s += x[d] > 0.5 ? log_sigmoid(mu[d]) : log_sigmoid(-mu[d]);
  return s;
}

std::vector<Index> all_of(Index D) {
  std::vector<Index> v;
  for (Index d = 0; d < D; ++d) v.push_back(d);
  return v;
}

}  // namespace

TEST_SUITE("bernoulli_linear") {
  TEST_CASE("grid captures the prior mass") {
    for (Index G : {20, 80, 160}) {
      const QuadratureGrid g(6.0, G);
      CHECK(g.size() == G * G);
      CHECK(g.total_weight() >= 0.99);
      CHECK(g.total_weight() <= 1.0);
    }
  }

  TEST_CASE("parameter validation") {
    BernoulliLinearParams p{Matrix::Zero(3, 3), Vector::Zero(3)};
    CHECK_THROWS_AS(p.validate(), Error);
    CHECK_NOTHROW(p.validate(false));
    p.W = Matrix::Zero(3, 2);
    p.mu = Vector::Zero(2);
    CHECK_THROWS_AS(p.validate(), Error);
  }

  TEST_CASE("lml_quadrature with W = 0") {
    const QuadratureGrid grid;
    BernoulliLinearParams p{Matrix::Zero(3, 2), Vector::Zero(3)};
    Vector x(3);
    x << 1, 0, 1;
    CHECK(std::abs(lml_quadrature(p, x, grid) - 3.0 * std::log(0.5)) < 1e-12);
    p.mu << 0.3, -1.2, 2.0;
    const double want = independent(p.mu, x, all_of(3));
    CHECK(std::abs(lml_quadrature(p, x, grid) - want) < 1e-12);
    CHECK(std::abs(lml_quadrature(p, x, QuadratureGrid(6.0, 17)) - want) < 1e-12);
  }

  TEST_CASE("lml_quadrature converges in the grid and matches Monte Carlo") {
    const QuadratureGrid g80, g160(6.0, 160);
    for (int seed = 0; seed < 4; ++seed) {
      const auto p = seeded(2, 10 + seed);
      for (int bits = 0; bits < 4; ++bits) {
        Vector x(2);
        x << (bits & 1), ((bits >> 1) & 1);
        const double a = lml_quadrature(p, x, g80), b = lml_quadrature(p, x, g160);
        CHECK(std::abs(a - b) < 1e-4);
        if (bits == 1) CHECK(std::abs(a - oracle::mc_bernoulli_lml(p.W, p.mu, x, 1000000, 20 + seed)) < 1e-3);
      }
    }
    // The probabilities of all 2^D patterns sum to one.
    const auto p = seeded(4, 30, 2.0);
    double total = 0.0;
    for (int bits = 0; bits < 16; ++bits) {
      Vector x(4);
      for (int d = 0; d < 4; ++d) x[d] = (bits >> d) & 1;
      total += std::exp(lml_quadrature(p, x, g80));
    }
    CHECK(std::abs(total - 1.0) < 1e-10);
  }

  TEST_CASE("conditional_quadrature identities") {
    const QuadratureGrid grid;
    Stream rng(40);
    for (int t = 0; t < 30; ++t) {
      const Index D = 3 + t % 8;
      const auto p = seeded(D, 50 + t, 1.5);
      const Matrix X = sample_bernoulli(p, 1, 60 + t);
      const Vector x = X.row(0).transpose();
      const Index m = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(D)));
      const auto mask = sample_mask(D, m, rng);
      const double cond = conditional_quadrature(p, x, mask, grid);
      BernoulliLinearParams rest{Matrix(0, 2), Vector(0)};
      double rest_lml = 0.0;
      if (!mask.rest.empty()) {
        rest.W = gather(p.W, mask.rest, {0, 1});
        rest.mu = gather(p.mu, mask.rest);
        rest_lml = lml_quadrature(rest, gather(x, mask.rest), grid);
      }
      CHECK(std::abs(cond + rest_lml - lml_quadrature(p, x, grid)) < 1e-12);
    }

    const auto p = seeded(6, 70);
    BernoulliLinearParams z{Matrix::Zero(6, 2), p.mu};
    Vector x(6);
    x << 1, 0, 0, 1, 1, 0;
    const auto mask = MaskPair::from_masked({1, 4}, 6);
    for (auto form : {ConditionalForm::Block, ConditionalForm::TokenWise}) {
      const double want = independent(z.mu, x, mask.masked);
      CHECK(std::abs(conditional_quadrature(z, x, mask, grid, form) - want) < 1e-12);
      Vector flipped = x;
      flipped[0] = 1 - flipped[0];
      CHECK(std::abs(conditional_quadrature(z, flipped, mask, grid, form) - want) < 1e-12);
    }
    const auto full = MaskPair::full(6);
    CHECK(std::abs(conditional_quadrature(p, x, full, grid) - lml_quadrature(p, x, grid)) < 1e-12);
    // A single masked token: both forms agree.
    const auto one = MaskPair::from_masked({2}, 6);
    CHECK(std::abs(conditional_quadrature(p, x, one, grid) -
                   conditional_quadrature(p, x, one, grid, ConditionalForm::TokenWise)) < 1e-10);
  }

  TEST_CASE("batched quadrature matches the single-row path") {
    const QuadratureGrid grid;
    const auto p = seeded(9, 80, 1.5);
    const Matrix X = sample_bernoulli(p, 150, 81);
    const BernoulliQuadrature q(p, grid);
    const Vector rows = q.lml_rows(X);
    for (Index i = 0; i < X.rows(); i += 7) CHECK(std::abs(rows[i] - lml_quadrature(p, X.row(i).transpose(), grid)) < 1e-10);

    Matrix rest = Matrix::Zero(X.rows(), 9);
    Stream rng(82);
    std::vector<MaskPair> masks;
    for (Index i = 0; i < X.rows(); ++i) {
      masks.push_back(sample_mask(9, 3, rng));
      for (Index r : masks.back().rest) rest(i, r) = 1.0;
    }
    rest.row(5).setZero();  // empty rest: the objective is the full lml
    Vector values, lml_out;
    const double total = q.masked_objective(X, rest, &values, &lml_out, nullptr);
    CHECK(std::abs(total - values.sum()) < 1e-9);
    for (Index i = 0; i < X.rows(); i += 5) {
      const auto mask = i == 5 ? MaskPair::full(9) : masks[static_cast<std::size_t>(i)];
      CHECK(std::abs(values[i] - conditional_quadrature(p, X.row(i).transpose(), mask, grid)) < 1e-10);
      CHECK(std::abs(lml_out[i] - rows[i]) < 1e-10);
    }

    for (int w : {4, 8}) {
      CHECK((q.lml_rows(X, w) - rows).cwiseAbs().maxCoeff() == 0.0);
      BernoulliGrad g1 = BernoulliGrad::zeros(9, 2), gw = BernoulliGrad::zeros(9, 2);
      const double a = q.masked_objective(X, rest, nullptr, nullptr, &g1, 1);
      const double b = q.masked_objective(X, rest, nullptr, nullptr, &gw, w);
      CHECK(a == b);
      CHECK(g1.dW == gw.dW);
      CHECK(g1.dmu == gw.dmu);
    }
  }

  TEST_CASE("quadrature gradient matches central differences") {
    const QuadratureGrid grid(6.0, 40);
    Stream rng(90);
    for (int t = 0; t < 24; ++t) {
      const Index D = 2 + t % 9;
      const auto p = seeded(D, 100 + t, 1.0);
      const Matrix X = sample_bernoulli(p, 6, 110 + t);
      Matrix rest = Matrix::Zero(6, D);
      if (t % 3 != 0)
        for (Index i = 0; i < 6; ++i)
          for (Index r : sample_mask(D, 1 + t % D, rng).rest) rest(i, r) = 1.0;
      BernoulliGrad g = BernoulliGrad::zeros(D, 2);
      BernoulliQuadrature(p, grid).masked_objective(X, rest, nullptr, nullptr, &g);
      const Vector fd = oracle::central_diff(
          [&](const Vector& v) {
            const auto q = unflat(v, D);
            return BernoulliQuadrature(q, grid).masked_objective(X, rest, nullptr, nullptr, nullptr);
          },
          flat(p), 1e-5);
      CHECK(oracle::max_rel_err(flat(g), fd) < 1e-4);
    }
  }

  TEST_CASE("elbo basics") {
    BernoulliLinearParams z{Matrix::Zero(4, 2), Vector::Zero(4)};
    z.mu << 0.5, -0.5, 1.0, 0.0;
    Vector x(4);
    x << 1, 1, 0, 1;
    const VariationalParams prior{Vector::Zero(2), Vector::Zero(2)};
    CHECK(std::abs(elbo(z, prior, x) - lml_quadrature(z, x, QuadratureGrid())) < 1e-12);

    const QuadratureGrid grid;
    Stream rng(120);
    for (int t = 0; t < 30; ++t) {
      const Index D = 2 + t % 9;
      const auto p = seeded(D, 130 + t, 2.0);
      const Vector xs = sample_bernoulli(p, 1, 140 + t).row(0).transpose();
      VariationalParams q{Vector(2), Vector(2)};
      for (int k = 0; k < 2; ++k) {
        q.mean[k] = 2.0 * rng.normal();
        q.log_var[k] = rng.normal();
      }
      CHECK(elbo(p, q, xs) <= lml_quadrature(p, xs, grid) + 1e-3);
    }
    CHECK_THROWS(GaussHermite(0));
  }

  TEST_CASE("Gauss-Hermite rule integrates polynomials") {
    const GaussHermite gh(20);
    CHECK(std::abs(gh.weights.sum() - std::sqrt(M_PI)) < 1e-12);
    // int t^2 exp(-t^2) = sqrt(pi)/2, int t^4 exp(-t^2) = 3 sqrt(pi)/4
    CHECK(std::abs(gh.weights.dot(gh.nodes.array().square().matrix()) - std::sqrt(M_PI) / 2) < 1e-12);
    CHECK(std::abs(gh.weights.dot(gh.nodes.array().pow(4).matrix()) - 3 * std::sqrt(M_PI) / 4) < 1e-12);
  }

  TEST_CASE("elbo gradients match central differences") {
    const GaussHermite rule(20);
    for (int t = 0; t < 20; ++t) {
      const Index D = 2 + t % 8;
      const auto p = seeded(D, 150 + t);
      const Matrix X = sample_bernoulli(p, 3, 160 + t);
      Matrix qm = Matrix::Zero(3, 2), qv = Matrix::Zero(3, 2);
      for (Index i = 0; i < 3; ++i)
        for (int k = 0; k < 2; ++k) {
          qm(i, k) = 0.3 * static_cast<double>((i + k + t) % 5) - 0.6;
          qv(i, k) = -0.2 * static_cast<double>((i * 2 + k) % 4);
        }
      ElboGrad g;
      elbo_rows(p, qm, qv, X, rule, &g);
      const Vector fd_model = oracle::central_diff(
          [&](const Vector& v) { return elbo_rows(unflat(v, D), qm, qv, X, rule, nullptr).sum(); }, flat(p), 1e-5);
      CHECK(oracle::max_rel_err(flat(g.model), fd_model) < 1e-5);
      Vector vq(12);
      vq << Eigen::Map<const Vector>(qm.data(), 6), Eigen::Map<const Vector>(qv.data(), 6);
      const Vector fd_q = oracle::central_diff(
          [&](const Vector& v) {
            const Matrix m = Eigen::Map<const Matrix>(v.data(), 3, 2);
            const Matrix lv = Eigen::Map<const Matrix>(v.data() + 6, 3, 2);
            return elbo_rows(p, m, lv, X, rule, nullptr).sum();
          },
          vq, 1e-5);
      Vector an(12);
      an << Eigen::Map<const Vector>(g.dmean.data(), 6), Eigen::Map<const Vector>(g.dlog_var.data(), 6);
      CHECK(oracle::max_rel_err(an, fd_q) < 1e-5);
    }
  }

  TEST_CASE("optimised q closes the gap") {
    const auto p = seeded(10, 170, 1.0);
    const Matrix X = sample_bernoulli(p, 1, 171);
    const GaussHermite rule(20);
    Vector v = Vector::Zero(4);
    Optimizer opt(4, OptimizerSettings{OptimizerKind::Adam, 0.05});
    for (int it = 0; it < 2000; ++it) {
      ElboGrad g;
      elbo_rows(p, v.head(2).transpose(), v.tail(2).transpose(), X, rule, &g);
      Vector grad(4);
      grad << g.dmean.row(0).transpose(), g.dlog_var.row(0).transpose();
      opt.ascend(v, grad);
    }
    const double e = elbo_rows(p, v.head(2).transpose(), v.tail(2).transpose(), X, rule, nullptr)[0];
    const double l = lml_quadrature(p, X.row(0).transpose(), QuadratureGrid());
    CHECK(e <= l + 1e-3);
    CHECK(l - e < 0.05);
  }

  TEST_CASE("trainers") {
    const auto gt = seeded(8, 180, 2.0);
    const Matrix X = sample_bernoulli(gt, 200, 181);
    Stream rng(182);
    const auto init = init_bernoulli(8, 2, 0.1, rng);
    BernoulliTrainConfig c;
    c.epochs = 5;
    c.optimizer.learning_rate = 0.0;
    c.grid_points = 40;
    for (const auto& t : {train_mpt_bernoulli(init, X, c), train_elbo_bernoulli(init, X, c)}) {
      REQUIRE(t.records.size() == 5);
      for (const auto& r : t.records) CHECK(r.lml == t.records.front().lml);
    }

    c.epochs = 40;
    c.optimizer.learning_rate = 0.05;
    c.log_every = 10;
    const auto mpt = train_mpt_bernoulli(init, X, c);
    const auto vi = train_elbo_bernoulli(init, X, c);
    CHECK(mpt.records.size() == 5);  // 0, 10, 20, 30 and the last epoch
    CHECK(mpt.records.back().epoch == 39);
    CHECK(mpt.final_lml > mpt.records.front().lml);
    CHECK(vi.final_lml > vi.records.front().lml);
    for (const auto& r : mpt.records) CHECK(r.mask_size == 2);
    for (const auto& r : vi.records) {
      CHECK(r.objective <= r.lml + 1e-3 * 200);
      CHECK(r.mask_size == 0);
    }

    c.workers = 4;
    const auto mpt4 = train_mpt_bernoulli(init, X, c);
    CHECK(mpt4.final_params.W == mpt.final_params.W);
    CHECK(mpt4.final_lml == mpt.final_lml);
    const auto vi4 = train_elbo_bernoulli(init, X, c);
    CHECK(vi4.final_params.W == vi.final_params.W);

    c.rate = 1.0;
    CHECK_THROWS_AS(train_mpt_bernoulli(init, X, c), Error);
    c.rate = 0.33;
    c.hermite_order = 10;
    CHECK_THROWS_AS(train_elbo_bernoulli(init, X, c), Error);
  }

  TEST_CASE("sample_bernoulli") {
    const auto p = seeded(5, 190);
    const Matrix a = sample_bernoulli(p, 100, 1), b = sample_bernoulli(p, 100, 1);
    CHECK(a == b);
    CHECK(sample_bernoulli(p, 30, 1) == a.topRows(30));
    CHECK(((a.array() == 0) || (a.array() == 1)).all());
    BernoulliLinearParams sure{Matrix::Zero(3, 2), Vector::Constant(3, 50.0)};
    CHECK(sample_bernoulli(sure, 20, 2).minCoeff() == 1.0);
  }

  TEST_CASE("principal init") {
    const Matrix X = sample_bernoulli(seeded(6, 200, 2.0), 400, 3);
    Stream a(5), b(5);
    const auto p = init_bernoulli_pca(X, 2, 3.0, 0.0, a);
    CHECK(p.W == init_bernoulli_pca(X, 2, 3.0, 0.0, b).W);
    CHECK(p.W.colwise().norm().isApprox(Eigen::RowVector2d(3.0, 3.0), 1e-12));
    CHECK(std::abs(p.W.col(0).dot(p.W.col(1))) < 1e-10);
    const Vector m = X.colwise().mean().transpose();
    for (Index d = 0; d < 6; ++d) {
      const double q = std::clamp(m[d], 0.01, 0.99);
      CHECK(p.mu[d] == doctest::Approx(std::log(q / (1 - q))).epsilon(1e-12));
    }
    Stream c(6);
    CHECK_FALSE(init_bernoulli_pca(X, 2, 3.0, 0.1, c).W.isApprox(p.W));
    CHECK_THROWS_AS(init_bernoulli_pca(X, 7, 1.0, 0.0, c), Error);
  }
}
