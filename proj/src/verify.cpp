#include "stns/verify.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "stns/stmg.hpp"

namespace stns {

namespace {

struct Fixture {
  MeshHierarchy mesh;
  VelocitySpace vel;
  PressureSpace pres;
  SpatialOperator op;
  Fixture(int cells, int r, SpaceTimeField g, double nu = 1.0, BoundaryRule rule = all_dirichlet())
      : mesh(make(cells, std::move(rule))), vel(mesh.finest(), r), pres(mesh.finest(), r),
        op(vel, pres, NitscheConfig{nu, 10.0, 10.0}, std::move(g)) {}
  static MeshHierarchy make(int cells, BoundaryRule rule) {
    const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
    return build_hierarchy(lo, hi, cells, 1, rule);
  }
};

const SpaceTimeField zero_field = [](Point2, double) { return Point2{0.0, 0.0}; };
const SpaceTimeField wavy = [](Point2 x, double t) {
  return Point2{std::sin(x[0] + t) + 0.3, x[0] * x[1] * t - 0.2};
};
const SpaceTimeField load = [](Point2 x, double t) { return Point2{std::cos(x[1]) * t, x[0] * x[0]}; };
const SpaceTimeField swirl = [](Point2 x, double t) {
  const double pi = 3.14159265358979323846;
  return Point2{std::sin(pi * x[0]) * std::cos(pi * x[1]) * (1 + t),
                -std::cos(pi * x[0]) * std::sin(pi * x[1]) * (1 + t)};
};

Vector random_vector(std::size_t n, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector x(n);
  for (double& v : x) v = u(rng);
  return x;
}

SlabVector random_slab(const SlabProblem& p, std::mt19937& rng) {
  SlabVector u = p.zeros();
  const Vector r = random_vector(u.size(), rng);
  std::copy(r.begin(), r.end(), u.data().begin());
  return u;
}

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

Eigen::MatrixXd probe(const SlabJacobian& jac) {
  const SlabProblem& p = jac.problem();
  SlabVector e = p.zeros(), col = p.zeros();
  const auto n = static_cast<Eigen::Index>(e.size());
  Eigen::MatrixXd J(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    jac.apply(e, col);
    e[j] = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) J(i, j) = col[i];
  }
  return J;
}

double spectral_norm(const Eigen::MatrixXd& a) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues()(0);
}

SlabVector sampled_state(const SlabProblem& p, const VelocitySpace& vel, const SpaceTimeField& f) {
  SlabVector u = p.zeros();
  for (int a = 0; a <= p.k(); ++a) {
    const double t = p.node_time(a);
    const Vector v = vel.interpolate([&](Point2 x) { return f(x, t); });
    std::copy(v.begin(), v.end(), u.velocity(a).begin());
  }
  return u;
}

} // namespace

double gauss_radau_exactness_error(int k_max) {
  double worst = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    const QuadratureRule q = gauss_radau(k);
    for (int d = 0; d <= 2 * k; ++d) {
      double s = 0.0;
      for (int i = 0; i < q.size(); ++i) s += q.weights[i] * std::pow(q.nodes[i], d);
      const double exact = d % 2 == 0 ? 2.0 / (d + 1) : 0.0;
      worst = std::max(worst, std::abs(s - exact));
    }
  }
  return worst;
}

OracleReport oracle_equivalence(int states_per_case, unsigned seed) {
  OracleReport rep;
  std::mt19937 rng(seed);
  const std::pair<int, int> kr[] = {{1, 1}, {1, 2}, {2, 1}};
  for (const auto& [k, r] : kr)
    for (int cells : {1, 2}) {
      const Fixture f(cells, r, wavy);
      for (int s = 0; s < states_per_case; ++s) {
        const Vector vp = random_vector(f.op.n_velocity(), rng);
        const SlabProblem p(f.op, k, 0.25, 0.5, 2, &load, vp);
        const SlabVector u = random_slab(p, rng);
        const DenseSystem ds = dense_oracle(p, u);
        const SlabVector res = residual(p, u);
        double d = 0.0;
        for (std::size_t i = 0; i < res.size(); ++i)
          d = std::max(d, std::abs(res[i] - ds.residual[static_cast<Eigen::Index>(i)]));
        rep.residual_rel = std::max(rep.residual_rel, d / ds.residual.cwiseAbs().maxCoeff());
        const Eigen::MatrixXd J = probe(SlabJacobian(p, u));
        rep.jacobian_rel =
            std::max(rep.jacobian_rel, (J - ds.jacobian).cwiseAbs().maxCoeff() / ds.jacobian.cwiseAbs().maxCoeff());
        const Eigen::Index pv = static_cast<Eigen::Index>(k + 1) * f.op.n_velocity();
        const Eigen::Index pp = J.rows() - pv;
        const Eigen::MatrixXd j12 = J.block(0, pv, pv, pp), j21 = J.block(pv, 0, pp, pv);
        rep.coupling_asym =
            std::max(rep.coupling_asym, (j21 - j12.transpose()).cwiseAbs().maxCoeff() / j12.cwiseAbs().maxCoeff());
        rep.pressure_block = std::max(rep.pressure_block, J.block(pv, pv, pp, pp).cwiseAbs().maxCoeff());
        ++rep.cases;
      }
    }
  return rep;
}

LinearizationReport linearization_identities(int samples, unsigned seed) {
  LinearizationReport rep;
  std::mt19937 rng(seed);
  const Fixture f(2, 2, wavy);
  const SpatialOperator& op = f.op;
  const std::size_t nv = op.n_velocity();
  // The inflow switch is only piecewise smooth and stays out of the Taylor check.
  const unsigned terms = term::navier_stokes & ~term::inflow;
  for (int s = 0; s < samples; ++s) {
    const Vector V = random_vector(nv, rng), W = random_vector(nv, rng);
    Vector vw(nv);
    for (std::size_t i = 0; i < nv; ++i) vw[i] = V[i] + W[i];
    SpatialState sv(op), sw(op), svw(op);
    sv.update(V, 0.0);
    sw.update(W, 0.0);
    svw.update(vw, 0.0);
    Vector rhs = op.convection(sv);
    axpy(1.0, op.convection_jacobian_action(sv, W), rhs);
    axpy(1.0, op.convection(sw), rhs);
    const Vector lhs = op.convection(svw);
    double d = 0.0;
    for (std::size_t i = 0; i < nv; ++i) d = std::max(d, std::abs(lhs[i] - rhs[i]));
    rep.quadratic_rel = std::max(rep.quadratic_rel, d / max_abs(lhs));

    const Vector vp = random_vector(nv, rng);
    const SlabProblem p(op, 1, 0.0, 0.5, 1, &load, vp, terms);
    const SlabVector u = random_slab(p, rng), du = random_slab(p, rng);
    SlabVector ud = u;
    axpy(1.0, du.all(), ud.all());
    const SlabVector r0 = residual(p, u), r1 = residual(p, ud), jd = jacobian_action(p, u, du);
    SpatialState st(op);
    double err = 0.0, ref = 0.0;
    for (int a = 0; a <= p.k(); ++a) {
      st.update(du.velocity(a), p.node_time(a));
      const Vector h = op.convection(st);
      for (std::size_t i = 0; i < nv; ++i) {
        const double rem = r1.velocity(a)[i] - r0.velocity(a)[i] - jd.velocity(a)[i];
        const double ex = p.temporal().mass[a] * h[i];
        err = std::max(err, std::abs(rem - ex));
        ref = std::max(ref, std::abs(ex));
      }
      for (std::size_t i = 0; i < du.pressure(a).size(); ++i)
        err = std::max(err, std::abs(r1.pressure(a)[i] - r0.pressure(a)[i] - jd.pressure(a)[i]));
    }
    rep.taylor_rel = std::max(rep.taylor_rel, err / ref);
  }
  return rep;
}

SurrogateReport surrogate_bounds() {
  SurrogateReport rep;
  const Fixture f(3, 2, swirl, 1e-2);
  const int cell = 4;
  // eps scales with the time derivative of the state rather than tau, so the
  // state varies slowly in time.
  const SpaceTimeField slow = [](Point2 x, double t) {
    const Point2 v = swirl(x, 0.0);
    return Point2{v[0] * (1 + 0.05 * t), v[1] * (1 + 0.05 * t)};
  };
  constexpr double slack = 1e-10;
  for (double tau : {0.25, 0.125, 0.0625, 0.03125}) {
    const SlabProblem p(f.op, 2, 0.1, tau, 1, nullptr, {});
    const SlabJacobian jac(p, sampled_state(p, f.vel, slow));
    const Eigen::MatrixXd J = assemble_patch(jac, cell, VankaMode::exact);
    const Eigen::MatrixXd Jt = assemble_patch(jac, cell, VankaMode::surrogate);
    const Eigen::MatrixXd Jinv = J.inverse();
    const double e = spectral_norm(Jt - J);
    const double eps = e * spectral_norm(Jinv);
    rep.tau.push_back(tau);
    rep.perturbation.push_back(e);
    rep.eps.push_back(eps);
    if (eps >= 1.0) continue;
    ++rep.checked;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(J.rows(), J.cols());
    const Eigen::VectorXd sj = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues();
    const Eigen::VectorXd st = Eigen::JacobiSVD<Eigen::MatrixXd>(Jt).singularValues();
    const double smin = sj(sj.size() - 1), smax = sj(0);
    const bool ok = spectral_norm(Jt.inverse()) <= spectral_norm(Jinv) / (1 - eps) * (1 + slack) &&
                    spectral_norm(I - Jinv * Jt) <= eps * (1 + slack) &&
                    st(st.size() - 1) >= (1 - eps) * smin * (1 - slack) &&
                    st(0) <= (1 + eps) * smax * (1 + slack);
    rep.bounds_hold = rep.bounds_hold && ok;
  }
  rep.min_slope = 1e300;
  for (std::size_t i = 1; i < rep.tau.size(); ++i)
    rep.min_slope = std::min(rep.min_slope, std::log(rep.perturbation[i - 1] / rep.perturbation[i]) /
                                                std::log(rep.tau[i - 1] / rep.tau[i]));
  return rep;
}

ProbeResult quadrature_error_probe(int k, std::span<const double> taus, bool constant_in_time) {
  if (k < 0) throw Error("temporal degree must be non-negative");
  const Fixture f(2, 1, zero_field);
  const SpatialOperator& op = f.op;
  const Vector U1 = f.vel.interpolate([](Point2 x) { return Point2{std::sin(2 * x[1]) + 0.5, x[0] * x[1]}; });
  const Vector W1 = f.vel.interpolate([](Point2 x) { return Point2{x[1] * x[1], 1.0 - x[0]}; });
  // Positive monotone coefficients keep every time derivative of the
  // integrand one-signed, so the per-slab errors do not cancel.
  SpatialState state(op);
  Vector u(op.n_velocity()), w(op.n_velocity());
  const auto integrand = [&](double t) {
    const double s = constant_in_time ? 0.0 : t;
    const double alpha = std::exp(0.5 * s), beta = 1.0 + 0.5 * s;
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = alpha * U1[i];
      w[i] = beta * W1[i];
    }
    state.update(u, t);
    return dot(w, op.convection(state));
  };
  const QuadratureRule gr = gauss_radau(k);
  const QuadratureRule ref = gauss_legendre(2 * k + 2);
  ProbeResult out;
  out.k = k;
  for (double tau : taus) {
    const int n = static_cast<int>(std::lround(1.0 / tau));
    double sum = 0.0;
    for (int s = 0; s < n; ++s) {
      const double t0 = s * tau;
      double cg = 0.0, cr = 0.0;
      for (int i = 0; i < gr.size(); ++i) cg += 0.5 * tau * gr.weights[i] * integrand(t0 + 0.5 * tau * (1 + gr.nodes[i]));
      for (int i = 0; i < ref.size(); ++i) cr += tau * ref.weights[i] * integrand(t0 + tau * ref.nodes[i]);
      sum += cr - cg;
    }
    out.tau.push_back(tau);
    out.error.push_back(std::abs(sum));
  }
  // least-squares slope of log(error) against log(tau)
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(out.tau.size());
  for (std::size_t i = 0; i < out.tau.size(); ++i) {
    const double x = std::log(out.tau[i]), y = std::log(std::max(out.error[i], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  out.slope = m > 1 ? (m * sxy - sx * sy) / (m * sxx - sx * sx) : 0.0;
  return out;
}

double dg0_backward_euler_difference() {
  const double nu = 0.3, tau = 0.125;
  const Fixture f(2, 1, zero_field, nu);
  const SpatialOperator& op = f.op;
  const int nv = op.n_velocity();
  const Vector vp = f.vel.interpolate([](Point2 x) { return Point2{x[0] * (1 - x[0]), std::sin(x[1])}; });
  const unsigned terms = term::viscous | term::nitsche;
  const SlabProblem p(op, 0, 0.5, tau, 5, &load, vp, terms);

  // DG(0): the velocity block of the slab Jacobian applied to the unknown equals -R(0).
  const SlabVector r0 = residual(p, p.zeros());
  const Eigen::MatrixXd J = probe(SlabJacobian(p, p.zeros())).topLeftCorner(nv, nv);
  Eigen::VectorXd rhs(nv);
  for (int i = 0; i < nv; ++i) rhs(i) = -r0.velocity(0)[i];
  const Eigen::VectorXd v_dg = J.partialPivLu().solve(rhs);

  // Backward Euler from the spatial blocks: (M + tau (nu A + N)) v = M v_prev + tau F(t_n).
  Eigen::MatrixXd A(nv, nv);
  Vector e(nv, 0.0);
  for (int j = 0; j < nv; ++j) {
    e[j] = 1.0;
    const Vector m = op.apply_mass(e), a = op.apply_stiffness(e), n = op.apply_nitsche_velocity(e);
    e[j] = 0.0;
    for (int i = 0; i < nv; ++i) A(i, j) = m[i] + tau * (nu * a[i] + n[i]);
  }
  Vector fv(nv), fp(op.n_pressure());
  const double t_n = 0.5 + tau;
  op.assemble_rhs(&load, t_n, fv, fp, terms);
  const Vector mv = op.apply_mass(vp);
  Eigen::VectorXd b(nv);
  for (int i = 0; i < nv; ++i) b(i) = mv[i] + tau * fv[i];
  const Eigen::VectorXd v_be = A.partialPivLu().solve(b);
  return (v_dg - v_be).cwiseAbs().maxCoeff() / v_be.cwiseAbs().maxCoeff();
}

double one_cell_vanka_residual() {
  const BoundaryRule rule = [](Point2 x) { return x[0] > 0.99 ? BoundaryTag::neumann : BoundaryTag::dirichlet; };
  const Fixture f(1, 1, swirl, 0.1, rule);
  const SlabProblem p(f.op, 1, 0.0, 0.25, 1, nullptr, Vector(f.op.n_velocity(), 0.0));
  const SlabJacobian jac(p, sampled_state(p, f.vel, swirl));
  const VankaSmoother sm(jac, VankaConfig{1.0, VankaMode::exact, false, false});
  std::mt19937 rng(9);
  const SlabVector b = random_slab(p, rng);
  SlabVector x = p.zeros(), jx = p.zeros();
  sm.smooth(jac, b.all(), x.all(), 1);
  jac.apply(x, jx);
  axpy(-1.0, b.all(), jx.all());
  return max_abs(jx.all()) / max_abs(b.all());
}

int stokes_newton_steps() {
  const SpaceTimeField g = [](Point2 x, double t) { return Point2{x[1] * (1 + t), -x[0] * t}; };
  const SpaceTimeField f = [](Point2 x, double t) { return Point2{std::sin(x[0]) + t, x[1]}; };
  const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
  const MeshHierarchy mesh = build_hierarchy(lo, hi, 1, 3, all_dirichlet());
  const VelocitySpace vel(mesh.finest(), 1);
  const PressureSpace pres(mesh.finest(), 1);
  const NitscheConfig nc{1.0, 10.0, 10.0};
  const SpatialOperator op(vel, pres, nc, g);
  const Vector vp = vel.interpolate([](Point2 x) { return Point2{x[1], 0.0}; });
  const SlabProblem p(op, 1, 0.0, 0.25, 1, &f, vp, term::stokes);
  StmgPreconditioner mg(mesh, {2, 1, 1}, nc, g, term::stokes, {});
  SolverConfig cfg;
  cfg.newton.eta0 = cfg.newton.eta_min = cfg.newton.eta_max = 1e-10;
  SlabVector u = p.zeros();
  const SlabStats st = newton_solve_slab(p, u, mg, cfg);
  return st.converged ? st.newton_iterations : -1;
}

namespace {
template <class... T>
std::string describe(const T&... parts) {
  std::ostringstream os;
  os.precision(3);
  ((os << parts), ...);
  return os.str();
}
} // namespace

std::vector<CheckResult> property_checks(int oracle_states) {
  std::vector<CheckResult> out;
  const OracleReport o = oracle_equivalence(oracle_states, 20240611u);
  out.push_back({"oracle", o.residual_rel <= 1e-12 && o.jacobian_rel <= 1e-12 && o.coupling_asym <= 1e-12 &&
                               o.pressure_block <= 1e-14,
                 describe("residual ", o.residual_rel, ", jacobian ", o.jacobian_rel, ", J21-J12^T ",
                          o.coupling_asym, ", |J22| ", o.pressure_block, " over ", o.cases, " cases")});

  const LinearizationReport l = linearization_identities(20, 7u);
  out.push_back({"linearization", l.quadratic_rel <= 1e-12 && l.taylor_rel <= 1e-12,
                 describe("quadratic ", l.quadratic_rel, ", taylor ", l.taylor_rel)});

  const double gr = gauss_radau_exactness_error(6);
  bool quad_ok = gr <= 1e-13;
  std::string quad = describe("radau exactness ", gr);
  const double taus[] = {0.25, 0.125, 0.0625, 0.03125, 0.015625};
  for (int k = 0; k <= 2; ++k) {
    const ProbeResult pr = quadrature_error_probe(k, taus);
    quad_ok = quad_ok && pr.slope >= 2 * k + 1 - 0.1;
    quad += describe(", slope k=", k, " ", pr.slope);
  }
  const ProbeResult flat = quadrature_error_probe(1, taus, true);
  const double flat_err = *std::max_element(flat.error.begin(), flat.error.end());
  quad_ok = quad_ok && flat_err <= 1e-13;
  quad += describe(", constant fields ", flat_err);
  out.push_back({"quadrature", quad_ok, quad});

  const SurrogateReport s = surrogate_bounds();
  out.push_back({"surrogate", s.checked > 0 && s.bounds_hold && s.min_slope >= 0.9,
                 describe(s.checked, " steps with eps < 1, bounds ", s.bounds_hold ? "hold" : "violated",
                          ", min slope ", s.min_slope)});

  const double be = dg0_backward_euler_difference();
  const double vk = one_cell_vanka_residual();
  const int st = stokes_newton_steps();
  out.push_back({"reductions", be <= 1e-13 && vk <= 1e-10 && st == 1,
                 describe("dg0 vs euler ", be, ", one-cell vanka ", vk, ", stokes newton ", st)});
  return out;
}

} // namespace stns
