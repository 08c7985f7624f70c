#include <algorithm>
#include <functional>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mptlml/error.hpp"
#include "mptlml/gaussian.hpp"
#include "oracles.hpp"

using namespace mptlml;

namespace {

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("gaussian_core") {
  TEST_CASE("assemble_joint on small matrices") {
    const auto one = assemble_joint(Vector::Zero(1), Matrix::Identity(1, 1));
    CHECK(one.chol()(0, 0) == 1.0);
    CHECK(one.logdet() == 0.0);

    const auto two = assemble_joint(Vector::Zero(2), mat2(2, 1, 1, 2));
    CHECK(two.logdet() == doctest::Approx(std::log(3.0)).epsilon(1e-14));

    CHECK(code_of([] { assemble_joint(Vector::Zero(2), mat2(1, 2, 2, 1)); }) == ErrorCode::NotPositiveDefinite);
    CHECK(code_of([] { assemble_joint(Vector::Zero(2), mat2(2, 1, 1.1, 2)); }) == ErrorCode::AsymmetricInput);
    CHECK(code_of([] { assemble_joint(Vector::Zero(3), mat2(2, 1, 1, 2)); }) == ErrorCode::DimensionMismatch);
  }

  TEST_CASE("cholesky factor reconstructs the covariance") {
    for (int seed = 0; seed < 20; ++seed) {
      const int D = 1 + seed % 10;
      const Matrix S = oracle::random_spd(D, 100 + seed);
      const auto j = assemble_joint(Vector::Zero(D), S);
      const double rel = (j.chol() * j.chol().transpose() - S).norm() / S.norm();
      CHECK(rel < 1e-10);
    }
  }

  TEST_CASE("log_density examples") {
    const auto std1 = assemble_joint(Vector::Zero(1), Matrix::Identity(1, 1));
    CHECK(log_density(std1, Vector::Zero(1)) == doctest::Approx(-0.5 * kLog2Pi).epsilon(1e-15));

    const auto two = assemble_joint(Vector::Zero(2), mat2(2, 1, 1, 2));
    const double expected = -1.0 / 3.0 - 0.5 * std::log(3.0) - kLog2Pi;
    CHECK(std::abs(log_density(two, Vector::Ones(2)) - expected) < 1e-14);

    Vector var(4);
    var << 0.5, 1.0, 2.0, 3.0;
    Vector mu(4), x(4);
    mu << 1, -1, 0, 2;
    x << 0.3, 0.2, -1.0, 4.0;
    const auto diag = assemble_joint(mu, var.asDiagonal().toDenseMatrix());
    double sum = 0.0;
    for (int d = 0; d < 4; ++d) sum += log_normal_1d(x[d], mu[d], var[d]);
    CHECK(std::abs(log_density(diag, x) - sum) < 1e-13);

    CHECK(code_of([&] { log_density(diag, Vector::Zero(3)); }) == ErrorCode::DimensionMismatch);
  }

  TEST_CASE("log_density agrees with the explicit-inverse oracle") {
    for (int seed = 0; seed < 50; ++seed) {
      const int D = 1 + seed % 10;
      const Matrix S = oracle::random_spd(D, seed);
      const Vector mu = oracle::random_vector(D, 1000 + seed);
      const Vector x = oracle::random_vector(D, 2000 + seed, 2.0);
      const double ours = log_density(assemble_joint(mu, S), x);
      CHECK(std::abs(ours - oracle::naive_log_density(mu, S, x)) < 1e-9);
    }
  }

  TEST_CASE("conditional examples") {
    const auto two = assemble_joint(Vector::Zero(2), mat2(2, 1, 1, 2));
    const auto c = conditional(two, MaskPair::from_masked({0}, 2), Vector::Ones(1));
    CHECK(c.mean[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(c.cov(0, 0) == doctest::Approx(1.5).epsilon(1e-15));

    Vector var(3);
    var << 1.0, 2.0, 3.0;
    Vector mu(3);
    mu << 1, 2, 3;
    const auto diag = assemble_joint(mu, var.asDiagonal().toDenseMatrix());
    const auto cd = conditional(diag, MaskPair::from_masked({0, 2}, 3), Vector::Constant(1, 7.0));
    CHECK(cd.mean[0] == 1.0);
    CHECK(cd.mean[1] == 3.0);
    CHECK(cd.cov(0, 0) == 1.0);
    CHECK(cd.cov(1, 1) == 3.0);
    CHECK(cd.cov(0, 1) == 0.0);

    const Matrix S = oracle::random_spd(4, 3);
    const Vector m4 = oracle::random_vector(4, 4);
    const auto j4 = assemble_joint(m4, S);
    const auto full = conditional(j4, MaskPair::full(4), Vector(0));
    CHECK(full.mean == m4);
    CHECK(full.cov == S);
  }

  TEST_CASE("conditional variance never exceeds the marginal variance") {
    for (int seed = 0; seed < 30; ++seed) {
      const int D = 2 + seed % 6;
      const Matrix S = oracle::random_spd(D, 500 + seed);
      const auto j = assemble_joint(Vector::Zero(D), S);
      const auto mask = MaskPair::from_masked({0}, D);
      const auto c = conditional(j, mask, Vector::Zero(D - 1));
      CHECK(c.cov(0, 0) <= S(0, 0));
      CHECK(c.cov(0, 0) > 0.0);
    }
  }

  TEST_CASE("chain rule: conditional plus rest marginal equals the joint") {
    Stream rng(11);
    for (int t = 0; t < 300; ++t) {
      const int D = 2 + t % 9;
      const Matrix S = oracle::random_spd(D, 7000 + t);
      const Vector mu = oracle::random_vector(D, 8000 + t);
      const Vector x = oracle::random_vector(D, 9000 + t, 2.0);
      const auto joint = assemble_joint(mu, S);
      const Index m = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(D - 1)));
      const MaskPair mask = sample_mask(D, m, rng);
      const auto cond = conditional(joint, mask, gather(x, mask.rest));
      const double lhs = log_density(cond, gather(x, mask.masked)) +
                         log_density(marginal(joint, mask.rest), gather(x, mask.rest));
      CHECK(std::abs(lhs - log_density(joint, x)) < 1e-10);
    }
  }

  TEST_CASE("density is invariant to a joint permutation of tokens") {
    for (int seed = 0; seed < 20; ++seed) {
      const int D = 2 + seed % 7;
      const Matrix S = oracle::random_spd(D, 40 + seed);
      const Vector mu = oracle::random_vector(D, 60 + seed);
      const Vector x = oracle::random_vector(D, 80 + seed);
      std::vector<Index> perm(D);
      std::iota(perm.begin(), perm.end(), 0);
      Stream s(seed);
      std::shuffle(perm.begin(), perm.end(), s);
      const auto a = assemble_joint(mu, S);
      const auto b = assemble_joint(gather(mu, perm), gather(S, perm, perm));
      CHECK(std::abs(log_density(a, x) - log_density(b, gather(x, perm))) < 1e-10);

      // Conditioning on the same sets in permuted order gives the same value.
      const auto mask = MaskPair::from_masked({0}, D);
      std::vector<Index> rest_rev(mask.rest.rbegin(), mask.rest.rend());
      const auto ca = conditional(a, mask, gather(x, mask.rest));
      const auto sub = marginal(a, [&] {
        std::vector<Index> idx{0};
        idx.insert(idx.end(), rest_rev.begin(), rest_rev.end());
        return idx;
      }());
      Vector xs(D);
      xs[0] = x[0];
      for (Index i = 0; i < D - 1; ++i) xs[i + 1] = x[rest_rev[static_cast<std::size_t>(i)]];
      const auto cb = conditional(sub, MaskPair::from_masked({0}, D), xs.tail(D - 1));
      CHECK(std::abs(log_density(ca, gather(x, mask.masked)) - log_density(cb, xs.head(1))) < 1e-10);
    }
  }
}
