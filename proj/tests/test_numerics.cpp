#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "tsaug/numerics.hpp"

using namespace tsaug;
using fixture::random_matrix;

TEST_CASE("matrix products match loop products") {
  RngStream rng(1, "test/matmul");
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    const Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
    const auto ref = oracle::matmul(oracle::grid(a), oracle::grid(b));
    CHECK(oracle::max_abs_diff(ref, matmul(a, b)) < 1e-12);
    CHECK(oracle::max_abs_diff(ref, matmul_tn(a.transposed(), b)) < 1e-12);
    CHECK(oracle::max_abs_diff(ref, matmul_nt(a, b.transposed())) < 1e-12);
    Matrix acc(m, n, 1.0);
    matmul_acc(a, b, acc);
    CHECK(std::abs(acc(0, 0) - 1.0 - ref[0][0]) < 1e-12);
  }
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("matrix helpers") {
  const Matrix a = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(a.transposed()(2, 1) == 6);
  CHECK(a.reshaped(3, 2)(1, 0) == 3);
  CHECK_THROWS(a.reshaped(4, 2));
  Matrix b = a;
  CHECK(b.identical(a));
  b(0, 0) = -0.0;
  b(0, 0) = 1.0;
  CHECK(b.identical(a));
  Matrix z = a;
  z(0, 0) = 0.0;
  Matrix nz = a;
  nz(0, 0) = -0.0;
  CHECK_FALSE(z.identical(nz));
  Matrix m = a;
  add_row_broadcast(m, Matrix::from_rows({{10, 20, 30}}));
  CHECK(m(1, 2) == 36);
  Matrix sums(1, 3);
  column_sums_acc(a, sums);
  CHECK(sums[1] == 7);
}

TEST_CASE("softmax is a stable probability vector") {
  const std::vector<double> v{1000.0, 1001.0, 999.0};
  const auto s = softmax(v);
  double total = 0.0;
  for (double x : s) total += x;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s[1] > s[0]);
  const std::vector<double> shifted{0.0, 1.0, -1.0};
  const auto t = softmax(shifted);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(t[i]).epsilon(1e-14));
  CHECK_THROWS(softmax(std::vector<double>{}));
  CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::nan("")}), NumericalError);
}

TEST_CASE("softmax_rows_backward matches finite differences") {
  RngStream rng(2, "test/softmax");
  const Matrix x = random_matrix(3, 4, rng), r = random_matrix(3, 4, rng);
  const Matrix y = softmax_rows(x);
  const Matrix dx = softmax_rows_backward(y, r);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix up = x, down = x;
    up[i] += h;
    down[i] -= h;
    const double num = (fixture::weighted_sum(softmax_rows(up), r) - fixture::weighted_sum(softmax_rows(down), r)) / (2 * h);
    CHECK(dx[i] == doctest::Approx(num).epsilon(1e-7));
  }
}

TEST_CASE("losses have hand-computed values") {
  const Matrix p = Matrix::from_rows({{1.0, 2.0}});
  const Matrix t = Matrix::from_rows({{3.0, 5.0}});
  CHECK(mse(p, t) == 6.5);
  const Matrix g = mse_grad(p, t);
  CHECK(g[0] == -2.0);
  CHECK(g[1] == -3.0);
  CHECK(mae(std::vector<double>{60, 70}, std::vector<double>{62, 65}) == 3.5);
  CHECK_THROWS(mse(p, Matrix(2, 1)));
  CHECK_THROWS(mae(std::vector<double>{}, std::vector<double>{}));
}

TEST_CASE("require_finite names the offending entry") {
  Matrix m(2, 2);
  m(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(all_finite(m));
  try {
    require_finite(m, "weights");
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("weights") != std::string::npos);
    CHECK(msg.find("(1, 0)") != std::string::npos);
  }
}

TEST_CASE("rng streams are reproducible and independent") {
  RngStream a(42, "x"), b(42, "x"), c(42, "y"), d(43, "x");
  bool all_same = true, differs_id = false, differs_seed = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64(), vd = d.next_u64();
    all_same = all_same && va == vb;
    differs_id = differs_id || va != vc;
    differs_seed = differs_seed || va != vd;
  }
  CHECK(all_same);
  CHECK(differs_id);
  CHECK(differs_seed);

  RngStream u(7, "uniform");
  double lo = 1.0, hi = 0.0, sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = u.uniform();
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    sum += x;
    CHECK(u.below(7) < 7);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(sum / 10000 == doctest::Approx(0.5).epsilon(0.02));

  RngStream n(7, "normal");
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = n.normal();
    s1 += x;
    s2 += x * x;
  }
  CHECK(std::abs(s1 / 20000) < 0.03);
  CHECK(s2 / 20000 == doctest::Approx(1.0).epsilon(0.05));

  CHECK(RngStream(1, "a").derive("b").stream_id() == "a/b");
  CHECK(derive_seed(5, "validation/talstm", 3) == derive_seed(5, "validation/talstm", 3));
  CHECK(derive_seed(5, "validation/talstm", 3) != derive_seed(5, "validation/talstm", 4));
  CHECK(derive_seed(5, "validation/cnn", 3) != derive_seed(5, "validation/talstm", 3));

  std::vector<int> v{1, 2, 3, 4, 5, 6};
  RngStream sh(1, "shuffle");
  sh.shuffle(v);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 6);
}

TEST_CASE("xavier init respects its bound") {
  RngStream rng(3, "init");
  const Matrix w = init_uniform(8, 5, rng);
  const double bound = std::sqrt(6.0 / 13.0);
  CHECK(xavier_bound(8, 5) == doctest::Approx(bound));
  for (double x : w.values()) CHECK(std::abs(x) <= bound);
}

TEST_CASE("adam step matches the closed form of the first update") {
  Matrix p(1, 1, 1.0), g(1, 1, 0.5);
  AdamState st(p, AdamConfig{0.1});
  adam_step(p, g, st);
  // m̂ = g, v̂ = g², so the first step is lr · g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  adam_step(p, g, st);
  CHECK(st.t == 2);

  Matrix bad(1, 1, std::nan(""));
  CHECK_THROWS_WITH_AS(adam_step(p, bad, st, "head.w"), doctest::Contains("head.w"), NumericalError);
  CHECK_THROWS(adam_step(p, Matrix(2, 1), st));
}

TEST_CASE("grad_check accepts true gradients and flags wrong ones") {
  const ScalarFunction f = [](std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v * v;
    return s;
  };
  const std::vector<double> x{0.3, -1.2, 2.0};
  std::vector<double> g;
  for (double v : x) g.push_back(3 * v * v);
  CHECK(grad_check(f, x, g) < 1e-8);
  g[1] += 0.1;
  CHECK(grad_check(f, x, g) > 1e-3);
}

TEST_CASE("flatten and unflatten round-trip a model") {
  RngStream rng(4, "flat");
  auto probe = fixture::MhaProbe::make(3, 4, 2, rng);
  const auto flat = flatten_model(probe);
  auto copy = probe.zeros();
  unflatten_model(flat, copy);
  CHECK(copy.p.wq.identical(probe.p.wq));
  CHECK(copy.x.identical(probe.x));
  CHECK_THROWS(unflatten_model(std::vector<double>(flat.size() - 1), copy));
}
