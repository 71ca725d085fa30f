#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include "mcbeam/complex.hpp"
#include "mcbeam/rng.hpp"

using namespace mcbeam;

namespace {

CMatrix rand_cmat(Rng& rng, int r, int c) {
  CMatrix m(r, c);
  for (auto& v : m.a) v = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  return m;
}

double max_abs_diff(const CMatrix& a, const CMatrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i) d = std::max(d, std::abs(a.a[i] - b.a[i]));
  return d;
}

}  // namespace

TEST_CASE("complex scalar product (1+i)(1-i) = 2") {
  CMatrix a(1, 1), b(1, 1);
  a(0, 0) = {1.0, 1.0};
  b(0, 0) = {1.0, -1.0};
  CTensor p = cmatmul(CTensor::constant(a), CTensor::constant(b));
  REQUIRE(p.re.scalar() == Catch::Approx(2.0).margin(1e-15));
  REQUIRE(p.im.scalar() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("multiplying by the identity is a no-op") {
  Rng rng(3);
  CMatrix a = rand_cmat(rng, 4, 4);
  CTensor p = cmatmul(CTensor::constant(a), CTensor::identity(4));
  REQUIRE(max_abs_diff(p.values(), a) <= 1e-15);
}

TEST_CASE("cmatmul matches a schoolbook scalar loop") {
  Rng rng(5);
  CMatrix a = rand_cmat(rng, 4, 4), b = rand_cmat(rng, 4, 4);
  CMatrix expect(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      std::complex<double> s = 0.0;
      for (int k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      expect(i, j) = s;
    }
  }
  CMatrix taped = cmatmul(CTensor::constant(a), CTensor::constant(b)).values();
  REQUIRE(max_abs_diff(taped, expect) <= 1e-12);
  REQUIRE(max_abs_diff(cmul(a, b), expect) <= 1e-12);
}

TEST_CASE("hermitian transpose conjugates") {
  CMatrix m(1, 1);
  m(0, 0) = {0.0, 1.0};
  CMatrix h = chermitian(CTensor::constant(m)).values();
  REQUIRE(h(0, 0).real() == 0.0);
  REQUIRE(h(0, 0).imag() == -1.0);
}

TEST_CASE("hermitian transpose is an involution and reverses products") {
  Rng rng(7);
  CMatrix a = rand_cmat(rng, 3, 3), b = rand_cmat(rng, 3, 3);
  CTensor at = CTensor::constant(a), bt = CTensor::constant(b);
  REQUIRE(max_abs_diff(chermitian(chermitian(at)).values(), a) <= 1e-15);
  CMatrix lhs = chermitian(cmatmul(at, bt)).values();
  CMatrix rhs = cmatmul(chermitian(bt), chermitian(at)).values();
  REQUIRE(max_abs_diff(lhs, rhs) <= 1e-12);
}

TEST_CASE("cmatmul is associative within tolerance") {
  Rng rng(9);
  for (int t = 0; t < 5; ++t) {
    CTensor a = CTensor::constant(rand_cmat(rng, 3, 3));
    CTensor b = CTensor::constant(rand_cmat(rng, 3, 3));
    CTensor c = CTensor::constant(rand_cmat(rng, 3, 3));
    CMatrix lhs = cmatmul(cmatmul(a, b), c).values();
    CMatrix rhs = cmatmul(a, cmatmul(b, c)).values();
    REQUIRE(max_abs_diff(lhs, rhs) <= 1e-10);
  }
}

TEST_CASE("csolve with the identity returns the right-hand side") {
  Rng rng(11);
  CMatrix b = rand_cmat(rng, 3, 2);
  CMatrix x = csolve(CTensor::identity(3), CTensor::constant(b)).values();
  REQUIRE(max_abs_diff(x, b) <= 1e-14);
}

TEST_CASE("csolve handles the scalar diagonal case") {
  CMatrix a(1, 1), b(1, 1);
  a(0, 0) = 2.0;
  b(0, 0) = {4.0, 2.0};
  CMatrix x = csolve(CTensor::constant(a), CTensor::constant(b)).values();
  REQUIRE(x(0, 0).real() == Catch::Approx(2.0).margin(1e-14));
  REQUIRE(x(0, 0).imag() == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("csolve residual on random Hermitian positive definite systems") {
  Rng rng(13);
  for (int t = 0; t < 5; ++t) {
    CMatrix g = rand_cmat(rng, 6, 6);
    CMatrix a = cadd(cmul(g, chermitian(g)), cscale(CMatrix::identity(6), 0.5));
    CMatrix b = rand_cmat(rng, 6, 2);
    // taped route
    CMatrix x = csolve(CTensor::constant(a), CTensor::constant(b)).values();
    double res = std::sqrt(fro_norm2(csub(cmul(a, x), b)) / fro_norm2(b));
    REQUIRE(res <= 1e-10);
    // plain route
    CMatrix xp = csolve(a, b);
    double resp = std::sqrt(fro_norm2(csub(cmul(a, xp), b)) / fro_norm2(b));
    REQUIRE(resp <= 1e-10);
    REQUIRE(max_abs_diff(x, xp) <= 1e-10);
  }
}

TEST_CASE("cabs2 basics") {
  CMatrix one(1, 1), iu(1, 1);
  one(0, 0) = 1.0;
  iu(0, 0) = {0.0, 1.0};
  REQUIRE(cabs2(CTensor::constant(one), CTensor::constant(one)).scalar() == Catch::Approx(1.0));
  REQUIRE(cabs2(CTensor::constant(one), CTensor::constant(iu)).scalar() == Catch::Approx(1.0));
  // u^H v = (1)(i) + (-i)(1) = 0
  CMatrix u(2, 1), v(2, 1);
  u(0, 0) = 1.0;
  u(1, 0) = {0.0, 1.0};
  v(0, 0) = {0.0, 1.0};
  v(1, 0) = 1.0;
  REQUIRE(cabs2(CTensor::constant(u), CTensor::constant(v)).scalar() == Catch::Approx(0.0).margin(1e-15));
  Rng rng(1);
  REQUIRE_THROWS_AS(cabs2(CTensor::constant(u), CTensor::constant(rand_cmat(rng, 3, 1))), ShapeError);
}

TEST_CASE("gradients flow through cabs2 and csolve compositions") {
  Rng rng(17);
  // leaves: re/im of A-seed (3x3) and of b (3x1)
  auto mk = [&](Shape s) {
    std::vector<double> v(static_cast<std::size_t>(s.rows) * s.cols);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::constant(s, std::move(v));
  };
  GraphBuilder build = [](Tape&, const std::vector<Tensor>& xs) {
    CTensor g{xs[0], xs[1]};
    CTensor b{xs[2], xs[3]};
    CTensor a = cadd(cmatmul(g, chermitian(g)), CTensor::identity(3));
    CTensor x = csolve(a, b);
    return add(cabs2(b, x), smul(cfro_norm2(x), 0.5));
  };
  std::vector<Tensor> point{mk({3, 3}), mk({3, 3}), mk({3, 1}), mk({3, 1})};
  REQUIRE(grad_check(build, point) <= 1e-5);
}
