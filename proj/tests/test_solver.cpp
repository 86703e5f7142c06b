#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <random>

#include "stns/solver.hpp"

using namespace stns;

namespace {

LinearAction dense_action(const Eigen::MatrixXd& A) {
  return [&A](std::span<const double> in, std::span<double> out) {
    const Eigen::Map<const Eigen::VectorXd> x(in.data(), static_cast<Eigen::Index>(in.size()));
    Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())) = A * x;
  };
}

const LinearAction identity = [](std::span<const double> in, std::span<double> out) {
  std::copy(in.begin(), in.end(), out.begin());
};

Eigen::MatrixXd random_spd(int n, unsigned seed) {
  std::srand(seed);
  const Eigen::MatrixXd R = Eigen::MatrixXd::Random(n, n);
  return R * R.transpose() + n * Eigen::MatrixXd::Identity(n, n);
}

struct Setup {
  MeshHierarchy mesh;
  std::unique_ptr<VelocitySpace> vel;
  std::unique_ptr<PressureSpace> pres;
  std::unique_ptr<SpatialOperator> op;
  Setup(int cells, int r, SpaceTimeField g, double nu = 1.0) : mesh(make(cells)) {
    vel = std::make_unique<VelocitySpace>(mesh.finest(), r);
    pres = std::make_unique<PressureSpace>(mesh.finest(), r);
    op = std::make_unique<SpatialOperator>(*vel, *pres, NitscheConfig{nu, 10.0, 10.0}, std::move(g));
  }
  static MeshHierarchy make(int cells) {
    const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
    return build_hierarchy(lo, hi, cells, 1, all_dirichlet());
  }
};

const SpaceTimeField zero_field = [](Point2, double) { return Point2{0.0, 0.0}; };

} // namespace

TEST_CASE("fgmres with identity operator converges in one iteration") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(6, 6);
  const auto op = dense_action(I);
  Vector b{1, 2, 3, 4, 5, 6}, x(6, 0.0);
  const KrylovResult res = fgmres(op, identity, nullptr, b, x, 1e-12, {});
  CHECK(res.converged);
  CHECK(res.iterations == 1);
  for (int i = 0; i < 6; ++i) CHECK(x[i] == doctest::Approx(b[i]).epsilon(1e-14));
}

TEST_CASE("fgmres solves an SPD system and its history decreases") {
  const int n = 10;
  const Eigen::MatrixXd A = random_spd(n, 3);
  const auto op = dense_action(A);
  Eigen::VectorXd bb = Eigen::VectorXd::LinSpaced(n, -1.0, 2.0);
  Vector b(bb.data(), bb.data() + n), x(n, 0.0);
  const KrylovResult res = fgmres(op, identity, nullptr, b, x, 1e-12, {});
  CHECK(res.converged);
  CHECK(res.iterations <= n);
  for (std::size_t i = 1; i < res.history.size(); ++i) CHECK(res.history[i] <= res.history[i - 1] * (1 + 1e-12));
  const Eigen::VectorXd ref = A.ldlt().solve(bb);
  for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("fgmres accepts a varying preconditioner and a metric") {
  const int n = 12;
  Eigen::MatrixXd A = random_spd(n, 5);
  A(0, n - 1) += 3.0;  // nonsymmetric
  const auto op = dense_action(A);
  const Eigen::MatrixXd M = random_spd(n, 7);
  const auto metric = dense_action(M);
  int calls = 0;
  const Eigen::VectorXd d = A.diagonal();
  const LinearAction jacobi = [&](std::span<const double> in, std::span<double> out) {
    // Alternates between Jacobi and plain copies.
    ++calls;
    for (int i = 0; i < n; ++i) out[i] = calls % 2 ? in[i] / d[i] : in[i];
  };
  Vector b(n, 1.0), x(n, 0.0);
  const KrylovResult res = fgmres(op, jacobi, metric, b, x, 1e-10, {});
  CHECK(res.converged);
  const Eigen::VectorXd ref = A.partialPivLu().solve(Eigen::VectorXd::Ones(n));
  for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(ref[i]).epsilon(1e-7));
  // Reported norm is the metric norm of the true residual.
  Eigen::VectorXd r = Eigen::VectorXd::Ones(n) - A * Eigen::Map<Eigen::VectorXd>(x.data(), n);
  CHECK(std::sqrt(r.dot(M * r)) == doctest::Approx(res.history.back()).epsilon(1e-6).scale(1e-12));
}

TEST_CASE("fgmres respects the iteration cap") {
  const int n = 30;
  const Eigen::MatrixXd A = random_spd(n, 11);
  const auto op = dense_action(A);
  Vector b(n, 1.0), x(n, 0.0);
  KrylovConfig cfg;
  cfg.max_iterations = 3;
  const KrylovResult res = fgmres(op, identity, nullptr, b, x, 1e-14, cfg);
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 3);
  KrylovConfig bad;
  bad.max_iterations = 0;
  CHECK_THROWS_AS(fgmres(op, identity, nullptr, b, x, 1e-3, bad), Error);
}

TEST_CASE("forcing term examples") {
  NewtonConfig cfg;
  CHECK(ew_forcing(0, 0.0, 1.0, 1.0, cfg) == 0.4);
  CHECK(ew_forcing(1, 0.4, 0.1, 1.0, cfg) == doctest::Approx(6.3246e-3).epsilon(1e-4));
  CHECK(ew_forcing(1, 0.4, 10.0, 1.0, cfg) == 0.8);
  CHECK(ew_forcing(3, 0.4, 1e-9, 1.0, cfg) == cfg.eta_min);
  cfg.forcing_rule = ForcingRule::direct;
  CHECK(ew_forcing(1, 0.4, 0.1, 1.0, cfg) == doctest::Approx(0.5 * std::pow(0.1, 1.5)));
}

TEST_CASE("line search") {
  NewtonConfig cfg;
  SUBCASE("full step accepted") {
    std::deque<double> w;
    const auto ls = armijo([](double a) { return 0.5 * (1 - a) * (1 - a); }, 0.5, -1.0, w, cfg);
    CHECK(ls.accepted);
    CHECK(ls.alpha == 1.0);
    CHECK(ls.backtracks == 0);
    CHECK(w.back() == 0.0);
  }
  SUBCASE("quadratic model gives one backtrack") {
    std::deque<double> w;
    // phi(a) = 0.5 (1 - 2a)^2 + small: minimizer a = 0.5.
    const auto ls = armijo([](double a) { return 0.5 * (1 - 2 * a) * (1 - 2 * a); }, 0.5, -2.0, w, cfg);
    CHECK(ls.accepted);
    CHECK(ls.backtracks == 1);
    CHECK(ls.alpha == doctest::Approx(0.5));
  }
  SUBCASE("no decrease falls back to the minimum step") {
    std::deque<double> w;
    int evals = 0;
    const auto ls = armijo([&](double) { ++evals; return 10.0; }, 0.5, -1.0, w, cfg);
    CHECK_FALSE(ls.accepted);
    CHECK(ls.alpha == cfg.alpha_min);
    // Trials stop once the step drops below alpha_min or the budget is spent.
    CHECK(ls.backtracks >= 1);
    CHECK(ls.backtracks <= cfg.max_backtracks + 1);
    CHECK(evals == ls.backtracks + 1);
  }
  SUBCASE("nonmonotone window accepts an increase") {
    std::deque<double> w{4.0, 1.0};
    const auto ls = armijo([](double) { return 2.0; }, 1.0, -1.0, w, cfg);
    CHECK(ls.accepted);
    CHECK(ls.alpha == 1.0);
  }
  SUBCASE("window length is bounded") {
    std::deque<double> w;
    for (int i = 0; i < 10; ++i) armijo([](double) { return 0.0; }, 1.0, -1.0, w, cfg);
    CHECK(static_cast<int>(w.size()) == cfg.window);
  }
}

TEST_CASE("rebuild triggers") {
  const RebuildConfig cfg;
  CHECK_FALSE(should_rebuild({}, {}, {}, cfg));
  const std::vector<double> rho{0.1, 0.5};
  CHECK(should_rebuild(rho, {}, {}, cfg));
  const std::vector<double> rho_ok{0.1, 0.15};
  CHECK_FALSE(should_rebuild(rho_ok, {}, {}, cfg));
  const std::vector<double> kappa{10, 12};
  CHECK_FALSE(should_rebuild({}, kappa, {}, cfg));
  const std::vector<double> kappa_big{30, 46};
  CHECK(should_rebuild({}, kappa_big, {}, cfg));
  const std::vector<double> flat{1.0, 0.99, 0.98, 0.97, 0.96, 0.95, 0.94};
  CHECK(stagnates(flat, cfg));
  CHECK(should_rebuild({}, {}, flat, cfg));
  const std::vector<double> fast{1.0, 0.5, 0.25, 0.1, 0.05, 0.01, 0.001};
  CHECK_FALSE(stagnates(fast, cfg));
  RebuildConfig bad;
  bad.theta_n = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("pressure projections") {
  Setup s(2, 2, zero_field);
  const PressureProjector proj(*s.op);
  Vector p = s.pres->interpolate([](Point2 x) { return 3.0 + x[0] * x[1]; });
  proj.project(p);
  CHECK(std::abs(proj.mean(p)) < 1e-14);
  // Dual projection removes the constant mode: c^T r = 0.
  Vector r(s.op->n_pressure());
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& x : r) x = u(rng);
  proj.project_dual(r);
  CHECK(std::abs(dot(s.pres->constant(), r)) < 1e-13);
  // Projections are idempotent.
  Vector q = p;
  proj.project(q);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-14));
}

TEST_CASE("Newton with zero data takes no steps") {
  Setup s(2, 1, zero_field);
  const Vector vp(s.op->n_velocity(), 0.0);
  const SlabProblem p(*s.op, 1, 0.0, 0.5, 1, nullptr, vp);
  SlabVector u = p.zeros();
  IdentityPreconditioner id;
  const SlabStats st = newton_solve_slab(p, u, id, {});
  CHECK(st.converged);
  CHECK(st.newton_iterations == 0);
}

TEST_CASE("Stokes slab converges in one Newton step") {
  const SpaceTimeField g = [](Point2 x, double t) { return Point2{x[1] * (1 + t), -x[0] * t}; };
  const SpaceTimeField f = [](Point2 x, double t) { return Point2{std::sin(x[0]) + t, x[1]}; };
  Setup s(2, 1, g);
  Vector vp = s.vel->interpolate([](Point2 x) { return Point2{x[1], 0.0 * x[0]}; });
  const SlabProblem p(*s.op, 1, 0.0, 0.25, 1, &f, vp, term::stokes);
  SlabVector u = p.zeros();
  IdentityPreconditioner id;
  SolverConfig cfg;
  cfg.newton.eta0 = cfg.newton.eta_min = 1e-3;
  cfg.newton.rel_tol = 1e-2;
  cfg.krylov.max_iterations = 400;
  cfg.newton.max_iterations = 1;
  const SlabStats st = newton_solve_slab(p, u, id, cfg);
  CHECK(st.newton_iterations == 1);
  CHECK(st.converged);
  CHECK(st.steps[0].alpha == 1.0);
}

TEST_CASE("march over trivial data keeps the zero solution") {
  Setup s(2, 1, zero_field);
  const TimePartition part = build_time_partition(1.0, 3);
  const Vector v0(s.op->n_velocity(), 0.0);
  IdentityPreconditioner id;
  int seen = 0;
  const SolveStats st = march(*s.op, part, 1, nullptr, v0, id, {},
                              [&](const SlabProblem& p, const SlabVector& u, const SlabStats&) {
                                ++seen;
                                CHECK(p.temporal().slab == seen);
                                CHECK(norm2(u.all()) == 0.0);
                              });
  CHECK(seen == 3);
  CHECK(st.all_converged());
  CHECK(st.mean_newton() == 0.0);
  CHECK(st.failed_slabs().empty());
}
