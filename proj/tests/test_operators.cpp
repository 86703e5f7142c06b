#include "doctest.h"

#include <cmath>
#include <memory>
#include <random>

#include "stns/operators.hpp"

using namespace stns;

namespace {

struct Setup {
  MeshHierarchy mesh;
  std::unique_ptr<VelocitySpace> vel;
  std::unique_ptr<PressureSpace> pres;
  std::unique_ptr<SpatialOperator> op;

  Setup(int cells, int r, SpaceTimeField g = nullptr, NitscheConfig cfg = {},
        BoundaryRule rule = all_dirichlet())
      : mesh(make(cells, rule)) {
    vel = std::make_unique<VelocitySpace>(mesh.finest(), r);
    pres = std::make_unique<PressureSpace>(mesh.finest(), r);
    if (!g) g = [](Point2, double) { return Point2{0.0, 0.0}; };
    op = std::make_unique<SpatialOperator>(*vel, *pres, cfg, g);
  }
  static MeshHierarchy make(int cells, BoundaryRule rule) {
    const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
    return build_hierarchy(lo, hi, cells, 1, rule);
  }
};

Vector random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector x(n);
  for (double& v : x) v = u(rng);
  return x;
}

double rel(const Vector& a, const Vector& b) {
  double d = 0.0, s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d = std::max(d, std::abs(a[i] - b[i]));
    s = std::max(s, std::abs(b[i]));
  }
  return d / std::max(s, 1e-300);
}

} // namespace

TEST_CASE("mass of a constant field") {
  Setup s(2, 1);
  const Vector one = s.vel->interpolate([](Point2) { return Point2{1.0, 1.0}; });
  CHECK(dot(one, s.op->apply_mass(one)) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS_AS(s.op->apply_mass(Vector(3)), ShapeError);
}

TEST_CASE("bilinear hat products on one cell") {
  Setup s(1, 1);
  // Corner hats are bilinear, hence exactly representable in the velocity space.
  auto hat = [](int i) {
    return [i](Point2 x) {
      const double hx = (i & 1) ? x[0] : 1 - x[0];
      const double hy = (i & 2) ? x[1] : 1 - x[1];
      return Point2{hx * hy, 0.0};
    };
  };
  const double pattern[4][4] = {{4, 2, 2, 1}, {2, 4, 1, 2}, {2, 1, 4, 2}, {1, 2, 2, 4}};
  for (int i = 0; i < 4; ++i) {
    const Vector vi = s.vel->interpolate(hat(i));
    const Vector mi = s.op->apply_mass(vi);
    for (int j = 0; j < 4; ++j) {
      const Vector vj = s.vel->interpolate(hat(j));
      CHECK(dot(vj, mi) == doctest::Approx(pattern[i][j] / 36.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("stiffness of a linear field") {
  Setup s(2, 2);
  const Vector x = s.vel->interpolate([](Point2 p) { return Point2{p[0], 0.0}; });
  CHECK(dot(x, s.op->apply_stiffness(x)) == doctest::Approx(1.0).epsilon(1e-13));
  const Vector c = s.vel->interpolate([](Point2) { return Point2{0.3, -2.0}; });
  CHECK(norm2(s.op->apply_stiffness(c)) < 1e-13);
}

TEST_CASE("symmetric blocks and adjoint pairs") {
  for (int r = 1; r <= 2; ++r) {
    Setup s(2, r);
    const std::size_t nv = s.op->n_velocity(), np = s.op->n_pressure();
    const Vector x = random_vector(nv, 1), y = random_vector(nv, 2);
    const Vector p = random_vector(np, 3), q = random_vector(np, 4);
    auto sym = [&](auto f) {
      const double a = dot(x, f(y)), b = dot(y, f(x));
      CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
    };
    sym([&](const Vector& v) { return s.op->apply_mass(v); });
    sym([&](const Vector& v) { return s.op->apply_stiffness(v); });
    sym([&](const Vector& v) { return s.op->apply_nitsche_velocity(v); });
    const double b1 = dot(p, s.op->apply_div(x)), b2 = dot(x, s.op->apply_div_transpose(p));
    CHECK(std::abs(b1 - b2) <= 1e-13 * std::max(1.0, std::abs(b1)));
    const double g1 = dot(p, s.op->apply_pressure_boundary_transpose(x));
    const double g2 = dot(x, s.op->apply_pressure_boundary(p));
    CHECK(std::abs(g1 - g2) <= 1e-13 * std::max(1.0, std::abs(g1)));
    const double m1 = dot(p, s.op->apply_pressure_mass(q)), m2 = dot(q, s.op->apply_pressure_mass(p));
    CHECK(std::abs(m1 - m2) <= 1e-13);
  }
}

TEST_CASE("divergence sign and divergence-free fields") {
  Setup s(2, 2);
  // Curl of x^2 y^2, inside Q_3.
  const Vector v = s.vel->interpolate([](Point2 p) {
    const double x = p[0], y = p[1];
    return Point2{2 * x * x * y, -2 * x * y * y};
  });
  CHECK(norm2(s.op->apply_div(v)) < 1e-13);
  // B q against constant pressure: -int div v over the domain.
  const Vector w = s.vel->interpolate([](Point2 p) { return Point2{p[0], 0.0}; });
  const Vector bw = s.op->apply_div(w);
  const Vector one = s.pres->constant();
  CHECK(dot(one, bw) == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("Nitsche block vanishes on fields flat at the boundary") {
  Setup s(2, 3);
  const Vector v = s.vel->interpolate([](Point2 p) {
    const double b = p[0] * p[0] * (1 - p[0]) * (1 - p[0]) * p[1] * p[1] * (1 - p[1]) * (1 - p[1]);
    return Point2{b, -2.0 * b};
  });
  CHECK(norm2(s.op->apply_nitsche_velocity(v)) < 1e-13);
}

TEST_CASE("pressure boundary coupling") {
  Setup s(2, 1);
  const Vector tang = s.vel->interpolate([](Point2 p) { return Point2{p[0] * (1 - p[0]), p[1] * (1 - p[1])}; });
  CHECK(norm2(s.op->apply_pressure_boundary_transpose(tang)) < 1e-14);
  // Constant pressure: v^T G^T 1 = int_boundary v.n = int div v.
  const Vector one = s.pres->constant();
  const Vector flux = s.op->apply_pressure_boundary(one);
  const Vector v = s.vel->interpolate([](Point2 p) { return Point2{p[0], p[1] * p[1]}; });
  CHECK(dot(v, flux) == doctest::Approx(2.0).epsilon(1e-14));
  // Neumann faces carry no coupling.
  Setup open(2, 1, nullptr, {}, [](Point2) { return BoundaryTag::neumann; });
  CHECK(norm2(open.op->apply_pressure_boundary(open.pres->constant())) == 0.0);
}

TEST_CASE("Nitsche-augmented viscous operator is positive semidefinite") {
  for (int r = 1; r <= 3; ++r) {
    Setup s(2, r);
    for (unsigned seed = 0; seed < 5; ++seed) {
      const Vector x = random_vector(s.op->n_velocity(), 10 + seed);
      Vector ax = s.op->apply_stiffness(x);
      axpy(1.0, s.op->apply_nitsche_velocity(x), ax);
      CHECK(dot(x, ax) >= -1e-10 * dot(x, x));
    }
  }
}

TEST_CASE("convection is quadratic and its Jacobian is exact") {
  for (int r = 1; r <= 2; ++r) {
    Setup s(2, r);
    const std::size_t nv = s.op->n_velocity();
    const Vector V = random_vector(nv, 21), W = random_vector(nv, 22);
    SpatialState sv(*s.op), sw(*s.op), svw(*s.op), s2v(*s.op), s0(*s.op);
    sv.update(V, 0.0);
    sw.update(W, 0.0);
    Vector vw(nv), v2(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      vw[i] = V[i] + W[i];
      v2[i] = 2.0 * V[i];
    }
    svw.update(vw, 0.0);
    s2v.update(v2, 0.0);
    s0.update(Vector(nv, 0.0), 0.0);
    const Vector hv = s.op->convection(sv), hw = s.op->convection(sw);
    CHECK(norm2(s.op->convection(s0)) == 0.0);
    Vector scaled = hv;
    scale(4.0, scaled);
    CHECK(rel(s.op->convection(s2v), scaled) < 1e-13);
    // H(V+W) = H(V) + H'(V)W + H(W)
    Vector rhs = hv;
    axpy(1.0, s.op->convection_jacobian_action(sv, W), rhs);
    axpy(1.0, hw, rhs);
    CHECK(rel(s.op->convection(svw), rhs) < 1e-12);
    // H'(V)V = 2H(V)
    Vector twice = hv;
    scale(2.0, twice);
    CHECK(rel(s.op->convection_jacobian_action(sv, V), twice) < 1e-12);
    CHECK(norm2(s.op->convection_jacobian_action(sv, Vector(nv, 0.0))) == 0.0);
    CHECK(svw.version() > 0);
  }
}

TEST_CASE("state version increases on update") {
  Setup s(1, 1);
  SpatialState st(*s.op);
  const auto v0 = st.version();
  st.update(Vector(s.op->n_velocity(), 1.0), 0.5);
  const auto v1 = st.version();
  st.update_data(0.7);
  CHECK(v1 > v0);
  CHECK(st.version() > v1);
  CHECK(st.time() == 0.7);
}

TEST_CASE("inflow term") {
  Setup s(1, 1);
  // v.n >= 0 on every face.
  const Vector out = s.vel->interpolate([](Point2 p) { return Point2{p[0] - 0.5, p[1] - 0.5}; });
  SpatialState so(*s.op);
  so.update(out, 0.0);
  CHECK(norm2(s.op->convection_boundary_nitsche(so)) == 0.0);
  // v = (1,0): west face has v.n = -1 and v = -n. With z = n on that face the pairing is +1.
  const Vector v = s.vel->interpolate([](Point2) { return Point2{1.0, 0.0}; });
  SpatialState st(*s.op);
  st.update(v, 0.0);
  const Vector z = s.vel->interpolate([](Point2 p) { return Point2{-(1 - p[0]), 0.0}; });
  CHECK(dot(z, s.op->convection_boundary_nitsche(st)) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("right-hand side assembly") {
  SUBCASE("homogeneous data") {
    Setup s(2, 1);
    Vector fv(s.op->n_velocity()), fp(s.op->n_pressure());
    s.op->assemble_rhs(nullptr, 0.3, fv, fp);
    CHECK(norm2(fv) == 0.0);
    CHECK(norm2(fp) == 0.0);
  }
  SUBCASE("constant forcing gives the mass-consistency vector") {
    Setup s(2, 1);
    const SpaceTimeField f = [](Point2, double) { return Point2{1.0, 0.0}; };
    Vector fv(s.op->n_velocity()), fp(s.op->n_pressure());
    s.op->assemble_rhs(&f, 0.0, fv, fp);
    const Vector ex = s.vel->interpolate([](Point2) { return Point2{1.0, 0.0}; });
    CHECK(rel(fv, s.op->apply_mass(ex)) < 1e-14);
  }
  SUBCASE("data with zero trace") {
    Setup s(2, 2, [](Point2 x, double t) {
      const double b = x[0] * (1 - x[0]) * x[1] * (1 - x[1]);
      return Point2{b * (1 + t), -b};
    });
    Vector fv(s.op->n_velocity()), fp(s.op->n_pressure());
    s.op->assemble_rhs(nullptr, 0.4, fv, fp);
    CHECK(norm2(fv) < 1e-15);
    CHECK(norm2(fp) < 1e-15);
  }
}

TEST_CASE("colored parallel loop matches the serial reference") {
  Setup s(4, 2, [](Point2 x, double t) { return Point2{std::sin(x[0] + t), x[1] * x[0]}; });
  const std::size_t nv = s.op->n_velocity(), np = s.op->n_pressure();
  const Vector v = random_vector(nv, 31), p = random_vector(np, 32);
  SpatialState st(*s.op);
  st.update(random_vector(nv, 33), 0.2);
  for (unsigned terms : {term::navier_stokes | term::mass | term::p_mass,
                         term::navier_stokes | term::linearized | term::mass}) {
    Vector m1(nv), v1(nv), p1(np), m2(nv), v2(nv), p2(np);
    s.op->apply(terms, &st, v, p, m1, v1, p1);
    s.op->apply_serial(terms, &st, v, p, m2, v2, p2);
    CHECK(rel(m1, m2) < 1e-14);
    CHECK(rel(v1, v2) < 1e-13);
    CHECK(rel(p1, p2) < 1e-13);
    Vector v3(nv);
    s.op->apply(terms, &st, v, p, {}, v3, {});
    CHECK(v3 == v1);
  }
}
