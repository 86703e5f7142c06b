#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <random>

#include "stns/stmg.hpp"

using namespace stns;

namespace {

MeshHierarchy unit_hierarchy(int base, int levels, BoundaryRule rule = all_dirichlet()) {
  const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
  return build_hierarchy(lo, hi, base, levels, std::move(rule));
}

struct Spaces {
  std::unique_ptr<VelocitySpace> vel;
  std::unique_ptr<PressureSpace> pres;
  std::unique_ptr<SpatialOperator> op;
  Spaces(const MeshLevel& m, int r, SpaceTimeField g, double nu = 1.0) {
    vel = std::make_unique<VelocitySpace>(m, r);
    pres = std::make_unique<PressureSpace>(m, r);
    op = std::make_unique<SpatialOperator>(*vel, *pres, NitscheConfig{nu, 10.0, 10.0}, std::move(g));
  }
};

const SpaceTimeField zero_field = [](Point2, double) { return Point2{0.0, 0.0}; };
const SpaceTimeField swirl = [](Point2 x, double t) {
  return Point2{std::sin(M_PI * x[0]) * std::cos(M_PI * x[1]) * (1 + t),
                -std::cos(M_PI * x[0]) * std::sin(M_PI * x[1]) * (1 + t)};
};

Vector random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Vector x(n);
  for (double& v : x) v = u(rng);
  return x;
}

SlabVector random_slab(const SlabProblem& p, unsigned seed) {
  SlabVector u = p.zeros();
  const Vector r = random_vector(u.size(), seed);
  std::copy(r.begin(), r.end(), u.data().begin());
  return u;
}

// Slab state sampled from a space-time field at the temporal nodes.
SlabVector sampled_state(const SlabProblem& p, const VelocitySpace& vel, const SpaceTimeField& f) {
  SlabVector u = p.zeros();
  for (int a = 0; a <= p.k(); ++a) {
    const double t = p.node_time(a);
    const Vector v = vel.interpolate([&](Point2 x) { return f(x, t); });
    std::copy(v.begin(), v.end(), u.velocity(a).begin());
  }
  return u;
}

Eigen::MatrixXd dense_jacobian(const SlabJacobian& jac) {
  const SlabProblem& p = jac.problem();
  SlabVector e = p.zeros(), col = p.zeros();
  const auto n = static_cast<Eigen::Index>(e.size());
  Eigen::MatrixXd J(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    jac.apply(e, col);
    e[j] = 0.0;
    J.col(j) = Eigen::Map<const Eigen::VectorXd>(col.data().data(), n);
  }
  return J;
}

// Global slab indices of a cell patch in patch order.
std::vector<int> patch_indices(const SlabProblem& p, int cell) {
  const SpatialOperator& op = p.op();
  const int nv = op.n_velocity(), np = op.n_pressure(), n = p.k() + 1;
  std::vector<int> out;
  for (int a = 0; a < n; ++a) {
    for (int l = 0; l < op.velocity().local_size(); ++l) out.push_back(a * nv + op.velocity().dof(cell, l));
    for (int l = 0; l < op.pressure().local_size(); ++l) out.push_back(n * nv + a * np + op.pressure().dof(cell, l));
  }
  return out;
}

double spectral_norm(const Eigen::MatrixXd& A) { return Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0); }

} // namespace

TEST_CASE("level schedule examples") {
  auto specs = [](LevelSpec f) { return build_schedule(f).levels; };
  CHECK(specs({2, 4, 4}) == std::vector<LevelSpec>{{2, 4, 4}, {2, 2, 2}, {2, 1, 1}, {1, 1, 1}, {0, 1, 1}});
  CHECK(specs({1, 1, 1}) == std::vector<LevelSpec>{{1, 1, 1}, {0, 1, 1}});
  CHECK(specs({0, 3, 3}) == std::vector<LevelSpec>{{0, 3, 3}, {0, 1, 1}});
  CHECK(specs({0, 1, 1}) == std::vector<LevelSpec>{{0, 1, 1}});
  // Spatial-only steps come first when the pressure degree is deeper.
  const auto s = build_schedule({1, 1, 4});
  CHECK(s.levels == std::vector<LevelSpec>{{1, 1, 4}, {1, 1, 2}, {1, 1, 1}, {0, 1, 1}});
  CHECK(s.transfers == std::vector<TransferKind>{TransferKind::polynomial, TransferKind::polynomial,
                                                 TransferKind::geometric});
  CHECK(specs({0, 4, 1}) == std::vector<LevelSpec>{{0, 4, 1}, {0, 2, 1}, {0, 1, 1}});
  CHECK_THROWS_AS(build_schedule({0, 0, 1}), Error);
}

TEST_CASE("patch size formula") {
  CHECK(patch_size(1, 1) == 42);
  CHECK(patch_size(2, 3) == 3 * (2 * 25 + 10));
}

TEST_CASE("prolongation reproduces coarse fields exactly") {
  const MeshHierarchy mh = unit_hierarchy(1, 3);
  const SpaceTimeField quad = [](Point2 x, double t) { return Point2{x[0] * x[0] * x[1] + t, 1 - x[1] * x[1] * t}; };
  const ScalarField plin = [](Point2 x) { return 1.0 + x[0] - 2 * x[1]; };
  struct Case {
    int sf, kf, rf, sc, kc, rc;
  };
  for (const Case c : {Case{2, 2, 2, 2, 1, 1}, Case{2, 1, 1, 1, 1, 1}, Case{1, 2, 3, 1, 2, 1}}) {
    CAPTURE(c.sf);
    CAPTURE(c.kf);
    CAPTURE(c.rf);
    Spaces f(mh.level(c.sf), c.rf, zero_field), co(mh.level(c.sc), c.rc, zero_field);
    const SlabTransfer tr(mh, *f.vel, *f.pres, c.kf, *co.vel, *co.pres, c.kc);
    const SlabProblem pf(*f.op, c.kf, 0.0, 0.5, 1, nullptr, {});
    const SlabProblem pc(*co.op, c.kc, 0.0, 0.5, 1, nullptr, {});
    // Fields linear in time are reproduced by the temporal embedding too.
    SlabVector uc = sampled_state(pc, *co.vel, quad), uf = sampled_state(pf, *f.vel, quad);
    for (int a = 0; a <= c.kc; ++a) {
      const Vector p = co.pres->interpolate(plin);
      std::copy(p.begin(), p.end(), uc.pressure(a).begin());
    }
    for (int a = 0; a <= c.kf; ++a) {
      const Vector p = f.pres->interpolate(plin);
      std::copy(p.begin(), p.end(), uf.pressure(a).begin());
    }
    SlabVector out;
    tr.prolong(uc, out);
    double err = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) err = std::max(err, std::abs(out[i] - uf[i]));
    CHECK(err < 1e-11);
  }
}

TEST_CASE("restriction is the transpose of prolongation") {
  const MeshHierarchy mh = unit_hierarchy(1, 3);
  Spaces f(mh.level(2), 2, zero_field), co(mh.level(1), 2, zero_field);
  Spaces fp(mh.level(1), 2, zero_field), cp(mh.level(1), 1, zero_field);
  const SlabTransfer geo(mh, *f.vel, *f.pres, 2, *co.vel, *co.pres, 2);
  const SlabTransfer poly(mh, *fp.vel, *fp.pres, 2, *cp.vel, *cp.pres, 1);
  for (const auto* c : {&geo, &poly}) {
    const bool g = c == &geo;
    const SlabProblem pf(g ? *f.op : *fp.op, 2, 0.0, 0.5, 1, nullptr, {});
    const SlabProblem pc(g ? *co.op : *cp.op, g ? 2 : 1, 0.0, 0.5, 1, nullptr, {});
    const SlabVector x = random_slab(pf, 1), y = random_slab(pc, 2);
    SlabVector px, rx;
    c->prolong(y, px);
    c->restrict(x, rx);
    CHECK(dot(x.all(), px.all()) == doctest::Approx(dot(rx.all(), y.all())).epsilon(1e-13));
  }
}

TEST_CASE("state interpolation keeps smooth fields") {
  const MeshHierarchy mh = unit_hierarchy(1, 3);
  Spaces f(mh.level(2), 1, zero_field), co(mh.level(1), 1, zero_field);
  const SlabTransfer tr(mh, *f.vel, *f.pres, 1, *co.vel, *co.pres, 1);
  const SpaceTimeField lin = [](Point2 x, double t) { return Point2{x[0] + t, x[1] * x[0]}; };
  const SlabProblem pf(*f.op, 1, 0.0, 0.5, 1, nullptr, {});
  const SlabProblem pc(*co.op, 1, 0.0, 0.5, 1, nullptr, {});
  SlabVector out;
  tr.interpolate_state(sampled_state(pf, *f.vel, lin), out);
  const SlabVector ref = sampled_state(pc, *co.vel, lin);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("mismatched transfers are rejected") {
  const MeshHierarchy mh = unit_hierarchy(1, 3);
  Spaces f(mh.level(2), 1, zero_field), co(mh.level(0), 1, zero_field);
  CHECK_THROWS_AS(SlabTransfer(mh, *f.vel, *f.pres, 1, *co.vel, *co.pres, 1), InvalidId);
}

TEST_CASE("exact patch equals the restricted global Jacobian") {
  const MeshHierarchy mh = unit_hierarchy(3, 1);
  for (int r : {1, 4}) {
    CAPTURE(r);
    Spaces s(mh.finest(), r, swirl, 0.1);
    const SlabProblem p(*s.op, 1, 0.0, 0.25, 1, nullptr, Vector(s.op->n_velocity(), 0.0));
    const SlabVector u = random_slab(p, 4);
    const SlabJacobian jac(p, u);
    const Eigen::MatrixXd J = dense_jacobian(jac);
    for (int cell : {0, 4, 7}) {
      CAPTURE(cell);
      const Eigen::MatrixXd P = assemble_patch(jac, cell, VankaMode::exact);
      REQUIRE(P.rows() == patch_size(1, r));
      const auto idx = patch_indices(p, cell);
      Eigen::MatrixXd R(P.rows(), P.cols());
      for (int i = 0; i < P.rows(); ++i)
        for (int j = 0; j < P.cols(); ++j) R(i, j) = J(idx[i], idx[j]);
      CHECK((R - P).cwiseAbs().maxCoeff() <= 1e-12 * J.cwiseAbs().maxCoeff());
    }
  }
}

TEST_CASE("surrogate equals exact patch at a zero state") {
  const MeshHierarchy mh = unit_hierarchy(2, 1);
  Spaces s(mh.finest(), 1, zero_field, 0.1);
  const SlabProblem p(*s.op, 2, 0.0, 0.25, 1, nullptr, {});
  const SlabJacobian jac(p, p.zeros());
  for (int cell = 0; cell < 4; ++cell) {
    const Eigen::MatrixXd E = assemble_patch(jac, cell, VankaMode::exact);
    const Eigen::MatrixXd S = assemble_patch(jac, cell, VankaMode::surrogate);
    CHECK((E - S).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("surrogate perturbation bounds on a patch") {
  const MeshHierarchy mh = unit_hierarchy(3, 1);
  Spaces s(mh.finest(), 2, swirl, 1e-2);
  const int cell = 4;
  // eps scales with the time derivative of the state, not with tau: the
  // pressure Schur complement makes |J^-1| grow like 1/tau^2.
  const SpaceTimeField slow = [](Point2 x, double t) {
    const Point2 v = swirl(x, 0.0);
    return Point2{v[0] * (1 + 0.05 * t), v[1] * (1 + 0.05 * t)};
  };
  std::vector<double> taus, errs;
  int checked = 0;
  for (double tau : {0.25, 0.125, 0.0625, 0.03125}) {
    CAPTURE(tau);
    const SlabProblem p(*s.op, 2, 0.1, tau, 1, nullptr, {});
    const SlabJacobian jac(p, sampled_state(p, *s.vel, slow));
    const Eigen::MatrixXd J = assemble_patch(jac, cell, VankaMode::exact);
    const Eigen::MatrixXd Jt = assemble_patch(jac, cell, VankaMode::surrogate);
    const Eigen::MatrixXd Jinv = J.inverse();
    const double e = spectral_norm(Jt - J);
    const double eps = e * spectral_norm(Jinv);
    taus.push_back(tau);
    errs.push_back(e);
    if (eps >= 1.0) continue;  // bounds below assume eps < 1
    ++checked;
    // (i) inverse bound
    CHECK(spectral_norm(Jt.inverse()) <= spectral_norm(Jinv) / (1 - eps) * (1 + 1e-10));
    // (ii) approximation property
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(J.rows(), J.cols());
    CHECK(spectral_norm(I - Jinv * Jt) <= eps * (1 + 1e-10));
    // (iii) singular values
    const Eigen::VectorXd sj = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues();
    const Eigen::VectorXd st = Eigen::JacobiSVD<Eigen::MatrixXd>(Jt).singularValues();
    const double smin = sj(sj.size() - 1), smax = sj(0);
    CHECK(st(st.size() - 1) >= (1 - eps) * smin * (1 - 1e-10));
    CHECK(st(0) <= (1 + eps) * smax * (1 + 1e-10));
  }
  CHECK(checked == 4);
  for (std::size_t i = 1; i < taus.size(); ++i) {
    const double slope = std::log(errs[i - 1] / errs[i]) / std::log(taus[i - 1] / taus[i]);
    CAPTURE(slope);
    CHECK(slope >= 0.9);
  }
}

TEST_CASE("one-cell exact Vanka solves the slab in one sweep") {
  const BoundaryRule rule = [](Point2 x) { return x[0] > 0.99 ? BoundaryTag::neumann : BoundaryTag::dirichlet; };
  const MeshHierarchy mh = unit_hierarchy(1, 1, rule);
  Spaces s(mh.finest(), 1, swirl, 0.1);
  const SlabProblem p(*s.op, 1, 0.0, 0.25, 1, nullptr, Vector(s.op->n_velocity(), 0.0));
  const SlabJacobian jac(p, sampled_state(p, *s.vel, swirl));
  const VankaSmoother sm(jac, VankaConfig{1.0, VankaMode::exact, false});
  CHECK(sm.fallbacks() == 0);
  const SlabVector b = random_slab(p, 9);
  SlabVector x = p.zeros(), jx = p.zeros();
  sm.smooth(jac, b.all(), x.all(), 1);
  jac.apply(x, jx);
  double err = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) err = std::max(err, std::abs(jx[i] - b[i]));
  CHECK(err < 1e-10 * norm2(b.all()));
}

TEST_CASE("smoother refuses patches from another slab") {
  const MeshHierarchy mh = unit_hierarchy(2, 1);
  Spaces s(mh.finest(), 1, zero_field);
  const SlabProblem p1(*s.op, 1, 0.0, 0.25, 1, nullptr, {});
  const SlabProblem p2(*s.op, 1, 0.25, 0.25, 2, nullptr, {});
  const SlabJacobian j1(p1, p1.zeros()), j2(p2, p2.zeros());
  const VankaSmoother sm(j1, {});
  SlabVector x = p2.zeros();
  CHECK_THROWS_AS(sm.smooth(j2, x.all(), x.all(), 1), StalePatch);
}

TEST_CASE("V-cycle is linear and preconditions FGMRES") {
  const MeshHierarchy mh = unit_hierarchy(1, 3);
  const int s_fine = 2;
  Spaces s(mh.level(s_fine), 2, swirl, 1e-2);
  const SpaceTimeField f = [](Point2 x, double t) { return Point2{std::sin(3 * x[1]) + t, x[0]}; };
  const Vector v0 = s.vel->interpolate([](Point2 x) { return swirl(x, 0.0); });
  const SlabProblem p(*s.op, 2, 0.0, 0.125, 1, &f, v0);
  StmgPreconditioner mg(mh, {s_fine, 2, 2}, NitscheConfig{1e-2, 10.0, 10.0}, swirl, term::navier_stokes, {});
  CHECK(mg.schedule().levels.size() == 4);
  const SlabVector u = sampled_state(p, *s.vel, swirl);
  mg.rebuild(p, u);
  CHECK(mg.rebuilds() == 1);

  SlabVector z1 = p.zeros(), z2 = p.zeros(), z3 = p.zeros();
  const SlabVector r1 = random_slab(p, 21), r2 = random_slab(p, 22);
  SlabVector r3 = r1;
  scale(2.5, r3.all());
  axpy(1.0, r2.all(), r3.all());
  mg.apply(r1.all(), z1.all());
  mg.apply(r2.all(), z2.all());
  mg.apply(r3.all(), z3.all());
  double err = 0.0;
  for (std::size_t i = 0; i < z3.size(); ++i) err = std::max(err, std::abs(z3[i] - 2.5 * z1[i] - z2[i]));
  CHECK(err <= 1e-10 * norm2(z3.all()));
  SlabVector zero = p.zeros(), zz = p.zeros();
  mg.apply(zero.all(), zz.all());
  CHECK(norm2(zz.all()) == 0.0);

  const SlabJacobian jac(p, u);
  const PressureProjector proj(*s.op);
  const LinearAction op = [&](std::span<const double> in, std::span<double> out) {
    SlabVector x = p.zeros(), y = p.zeros();
    std::copy(in.begin(), in.end(), x.data().begin());
    jac.apply(x, y);
    std::copy(y.data().begin(), y.data().end(), out.begin());
  };
  const LinearAction pre = [&](std::span<const double> in, std::span<double> out) {
    mg.apply(in, out);
    SlabVector x = p.zeros();
    std::copy(out.begin(), out.end(), x.data().begin());
    proj.project(x);
    std::copy(x.data().begin(), x.data().end(), out.begin());
  };
  SlabVector b = random_slab(p, 23);
  proj.project_dual(b);
  SlabVector x = p.zeros();
  const KrylovResult res = fgmres(op, pre, nullptr, b.all(), x.all(), 1e-6, {});
  MESSAGE("FGMRES iterations with the V-cycle: " << res.iterations);
  CHECK(res.converged);
  CHECK(res.iterations <= 25);
}

TEST_CASE("V-cycle without smoothing is the coarse-grid correction") {
  const BoundaryRule rule = [](Point2 x) { return x[1] > 0.99 ? BoundaryTag::neumann : BoundaryTag::dirichlet; };
  const MeshHierarchy mh = unit_hierarchy(1, 2, rule);
  Spaces s(mh.finest(), 1, swirl, 0.1);
  const SlabProblem p(*s.op, 1, 0.0, 0.25, 1, nullptr, Vector(s.op->n_velocity(), 0.0));
  StmgConfig cfg;
  cfg.pre_smooth = cfg.post_smooth = 0;
  StmgPreconditioner mg(mh, {1, 1, 1}, NitscheConfig{0.1, 10.0, 10.0}, swirl, term::navier_stokes, cfg);
  const SlabVector u = sampled_state(p, *s.vel, swirl);
  mg.rebuild(p, u);
  const Eigen::MatrixXd Jc = dense_jacobian(mg.level_jacobian(1));
  const SlabTransfer& tr = mg.transfer(0);
  const SlabVector b = random_slab(p, 31);
  SlabVector bc, xc = mg.level_problem(1).zeros(), ref;
  tr.restrict(b, bc);
  const Eigen::VectorXd sol = Jc.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(bc.data().data(), bc.size()));
  std::copy(sol.data(), sol.data() + sol.size(), xc.data().begin());
  tr.prolong(xc, ref);
  SlabVector z = p.zeros();
  mg.apply(b.all(), z.all());
  double err = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) err = std::max(err, std::abs(z[i] - ref[i]));
  CHECK(err <= 1e-10 * norm2(ref.all()));
}
