#include "doctest.h"

#include <cmath>
#include <random>

#include "stns/temporal.hpp"

using namespace stns;

TEST_CASE("DG(0) temporal matrices") {
  const auto tm = assemble_temporal(0, 0.1, 3);
  CHECK(tm.K(0, 0) == doctest::Approx(1.0));
  CHECK(tm.mass[0] == doctest::Approx(0.1));
  CHECK(tm.C(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("DG(1) temporal matrices against hand integration") {
  const auto tm = assemble_temporal(1, 1.0, 2);
  CHECK(tm.mass[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(tm.mass[1] == doctest::Approx(0.25).epsilon(1e-15));
  // Lagrange pair through -1/3 and 1: phi1 = 3(1-t)/4, phi2 = (3t+1)/4.
  // int phi_b' phi_a over [-1,1] plus phi_b(-1) phi_a(-1) with phi1(-1)=3/2, phi2(-1)=-1/2.
  auto phi = [](int a, double t) { return a == 0 ? 0.75 * (1 - t) : 0.25 * (3 * t + 1); };
  auto dphi = [](int a) { return a == 0 ? -0.75 : 0.75; };
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      // phi_a is linear, so int_{-1}^{1} phi_a = 2 phi_a(0).
      const double expect = dphi(b) * 2.0 * phi(a, 0.0) + phi(b, -1.0) * phi(a, -1.0);
      CHECK(std::abs(tm.K(a, b) - expect) < 1e-14);
    }
  CHECK(tm.K(0, 0) == doctest::Approx(1.125));
  CHECK(tm.K(0, 1) == doctest::Approx(0.375));
  CHECK(tm.K(1, 0) == doctest::Approx(-1.125));
  CHECK(tm.K(1, 1) == doctest::Approx(0.625));
  CHECK(tm.C(0, 1) == doctest::Approx(1.5));
  CHECK(tm.C(1, 1) == doctest::Approx(-0.5));
  CHECK(tm.C(0, 0) == 0.0);
}

TEST_CASE("stiffness satisfies the endpoint identity") {
  // K + K^T = phi_a(1) phi_b(1) + phi_a(-1) phi_b(-1) and phi(1) is the last unit vector.
  for (int k = 0; k <= 5; ++k) {
    const auto tm = assemble_temporal(k, 0.3, 1);
    const TemporalBasis b(k);
    for (int a = 0; a <= k; ++a)
      for (int c = 0; c <= k; ++c) {
        const double lhs = tm.K(a, c) + tm.K(c, a);
        const double rhs = (a == k && c == k ? 1.0 : 0.0) + b.value(a, -1.0) * b.value(c, -1.0);
        CHECK(std::abs(lhs - rhs) < 1e-12);
      }
    // Row sums of K reduce to the jump coefficient since sum_b phi_b = 1.
    for (int a = 0; a <= k; ++a) {
      double s = 0.0;
      for (int c = 0; c <= k; ++c) s += tm.K(a, c);
      CHECK(std::abs(s - tm.C(a, k)) < 1e-12);
    }
  }
}

TEST_CASE("lumped temporal mass equals row sums of the exact mass") {
  for (int k = 0; k <= 5; ++k) {
    const double tau = 0.37;
    const auto tm = assemble_temporal(k, tau, 1);
    const TemporalBasis b(k);
    const auto g = gauss_legendre_symmetric(k + 4);
    for (int a = 0; a <= k; ++a) {
      double row = 0.0;
      for (int d = 0; d <= k; ++d)
        for (int q = 0; q < g.size(); ++q)
          row += 0.5 * tau * g.weights[q] * b.value(a, g.nodes[q]) * b.value(d, g.nodes[q]);
      CHECK(std::abs(row - tm.mass[a]) < 1e-14);
      CHECK(tm.mass[a] > 0);
    }
  }
}

TEST_CASE("kron_apply") {
  std::mt19937 rng(1);
  std::normal_distribution<double> nd;
  const int nb = 2, m = 4;
  Vector A(nb * nb), B(m * m), x(nb * m), y(nb * m);
  for (double& v : A) v = nd(rng);
  for (double& v : B) v = nd(rng);
  for (double& v : x) v = nd(rng);
  int calls = 0;
  SpatialAction op = [&](std::span<const double> in, std::span<double> out) {
    ++calls;
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += B[i * m + j] * in[j];
      out[i] = s;
    }
  };
  kron_apply(A, nb, op, x, y);
  CHECK(calls == nb);
  for (int i = 0; i < nb; ++i)
    for (int r = 0; r < m; ++r) {
      double s = 0.0;
      for (int a = 0; a < nb; ++a)
        for (int c = 0; c < m; ++c) s += A[i * nb + a] * B[r * m + c] * x[a * m + c];
      CHECK(std::abs(y[i * m + r] - s) < 1e-14);
    }
  // Identity temporal matrix acts blockwise.
  Vector I{1, 0, 0, 1}, y2(nb * m);
  kron_apply(I, nb, op, x, y2);
  Vector blk(m);
  op(std::span<const double>(x).subspan(m, m), blk);
  for (int r = 0; r < m; ++r) CHECK(y2[m + r] == blk[r]);
  // Linearity in the temporal matrix.
  Vector A2(nb * nb), comb(nb * nb), ya(nb * m), yb(nb * m), yc(nb * m);
  for (double& v : A2) v = nd(rng);
  for (int i = 0; i < nb * nb; ++i) comb[i] = 2.0 * A[i] - 3.0 * A2[i];
  kron_apply(A, nb, op, x, ya);
  kron_apply(A2, nb, op, x, yb);
  kron_apply(comb, nb, op, x, yc);
  for (int i = 0; i < nb * m; ++i) CHECK(std::abs(yc[i] - (2 * ya[i] - 3 * yb[i])) < 1e-13);
  Vector bad(3);
  CHECK_THROWS_AS(kron_apply(A, nb, op, bad, bad), ShapeError);
}

TEST_CASE("jump_apply") {
  const int m = 3;
  SpatialAction mass = [](std::span<const double> in, std::span<double> out) {
    for (int i = 0; i < 3; ++i) out[i] = 2.0 * in[i];
  };
  const auto tm0 = assemble_temporal(0, 0.2, 2);
  Vector v{1, 2, 3}, out0(m);
  jump_apply(tm0, mass, v, out0);
  for (int i = 0; i < m; ++i) CHECK(out0[i] == doctest::Approx(2.0 * v[i]));
  const auto tm1 = assemble_temporal(1, 0.2, 2);
  Vector out1(2 * m);
  jump_apply(tm1, mass, v, out1);
  for (int i = 0; i < m; ++i) {
    CHECK(out1[i] == doctest::Approx(1.5 * 2.0 * v[i]));
    CHECK(out1[m + i] == doctest::Approx(-0.5 * 2.0 * v[i]));
  }
  Vector z(m, 0.0), oz(2 * m);
  jump_apply(tm1, mass, z, oz);
  for (double x : oz) CHECK(x == 0.0);
}
