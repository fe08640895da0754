#include <cmath>

#include "helpers.hpp"
#include "tthlab/gradcheck.hpp"

using namespace tth;
using testutil::random_tensor;

TEST_CASE("matmul hand cases") {
  const Tensor eye = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const Tensor v = Tensor::from_rows({{2}, {-3}, {5}});
  CHECK(matmul(eye, v) == v);
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor ones = Tensor::from_rows({{1}, {1}});
  CHECK(matmul(a, ones) == Tensor::from_rows({{3}, {7}}));
  CHECK_ERROR_KIND(matmul(a, v), ErrorKind::Dimension);
}

TEST_CASE("matmul agrees with a triple loop") {
  Rng rng(11);
  const Tensor a = random_tensor({5, 4}, rng);
  const Tensor b = random_tensor({4, 3}, rng);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == std::vector<std::size_t>{5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 3 + j];
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("matmul is associative on random triples") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5), p = 1 + rng.below(5);
    const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), c = random_tensor({n, p}, rng);
    const Tensor left = matmul(matmul(a, b), c);
    const Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      CHECK(std::abs(left[i] - right[i]) <= 1e-9 * std::max(1.0, std::abs(left[i])));
    }
  }
}

TEST_CASE("l2_normalize") {
  const auto v = l2_normalize(std::vector<double>{3.0, 4.0});
  CHECK(v[0] == doctest::Approx(0.6));
  CHECK(v[1] == doctest::Approx(0.8));
  const std::vector<double> unit{0.0, 1.0, 0.0};
  CHECK(l2_normalize(unit) == unit);
  CHECK_ERROR_KIND(l2_normalize(std::vector<double>{0.0, 0.0}), ErrorKind::Degenerate);

  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor r = random_tensor({64}, rng);
    const auto once = l2_normalize(r.values());
    CHECK(std::abs(l2_norm(once) - 1.0) <= 1e-9);
    const auto twice = l2_normalize(once);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(std::abs(once[i] - twice[i]) <= 1e-12);
  }
}

TEST_CASE("cosine") {
  const std::vector<double> u{1.0, 2.0, -1.0};
  CHECK(cosine(u, u) == doctest::Approx(1.0));
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(std::abs(cosine(std::vector<double>{1, 1}, std::vector<double>{1, 0}) - 0.70710678) < 1e-6);
  CHECK_ERROR_KIND(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), ErrorKind::Degenerate);

  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({16}, rng), b = random_tensor({16}, rng);
    const double alpha = rng.uniform(0.01, 100.0);
    Tensor scaled = a;
    for (double& x : scaled.values()) x *= alpha;
    const double c = cosine(a.values(), b.values());
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(std::abs(cosine(scaled.values(), b.values()) - c) <= 1e-9);
  }
}

TEST_CASE("finite differences") {
  const ScalarFunction sq = [](const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v * v;
    return s;
  };
  const Tensor g = finite_diff_grad(sq, Tensor::from_values({1.0, 2.0}));
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  const Tensor z = finite_diff_grad([](const Tensor&) { return 3.5; }, Tensor::from_values({1.0, -1.0, 0.5}));
  for (double v : z.values()) CHECK(v == 0.0);

  CHECK_ERROR_KIND(finite_diff_grad([](const Tensor&) { return std::nan(""); }, Tensor::from_values({1.0})),
                   ErrorKind::Numeric);
  CHECK_ERROR_KIND(finite_diff_grad(sq, Tensor::from_values({1.0}), 0.0), ErrorKind::Config);
}

TEST_CASE("grad_check report") {
  const Tensor v = Tensor::from_values({0.5, -2.0, 3.0});
  const auto same = grad_check(v, v, 1e-4);
  CHECK(same.passed);
  CHECK(same.max_rel_error == 0.0);
  CHECK(same.probe_count == 3);

  Tensor off = v;
  for (double& x : off.values()) x += 1e-2;
  const auto bad = grad_check(v, off, 1e-4);
  CHECK_FALSE(bad.passed);
  // max |a-n| / (|a|+|n|) is at the smallest entry: 0.01 / 1.01.
  CHECK(bad.max_rel_error == doctest::Approx(0.01 / 1.01).epsilon(1e-12));
  CHECK_ERROR_KIND(grad_check(v, Tensor::from_values({1.0}), 1e-4), ErrorKind::Dimension);

  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({4}, rng), n = random_tensor({4}, rng);
    const double tol = rng.uniform(0.0, 1.0);
    const auto r = grad_check(a, n, tol);
    CHECK(r.passed == (r.max_rel_error < tol));
  }
}

TEST_CASE("tensor shape and finiteness") {
  CHECK_ERROR_KIND(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), ErrorKind::Dimension);
  CHECK(Tensor({2, 3}).size() == 6);
  CHECK_ERROR_KIND(require_finite(std::vector<double>{1.0, INFINITY}, "x"), ErrorKind::Numeric);
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, "corpus") != derive_seed(1, "train"));
  CHECK(derive_seed(1, "corpus") == derive_seed(1, "corpus"));
  // FNV-1a 64 reference values.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
}
