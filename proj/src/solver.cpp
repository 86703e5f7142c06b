#include "stns/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stns {

void KrylovConfig::validate() const {
  if (max_iterations < 1) throw Error("Krylov iteration cap must be positive");
}

namespace {

double inner(std::span<const double> a, std::span<const double> gb) { return dot(a, gb); }

void apply_metric(const LinearAction& metric, std::span<const double> v, std::span<double> out) {
  if (metric)
    metric(v, out);
  else
    std::copy(v.begin(), v.end(), out.begin());
}

} // namespace

KrylovResult fgmres(const LinearAction& op, const LinearAction& precond, const LinearAction& metric,
                    std::span<const double> b, std::span<double> x, double rel_tol,
                    const KrylovConfig& cfg) {
  cfg.validate();
  require_size(x.size(), b.size(), "fgmres solution");
  const std::size_t n = b.size();
  const int m = cfg.max_iterations;
  KrylovResult res;

  Vector gb(n);
  apply_metric(metric, b, gb);
  const double bnorm = std::sqrt(std::max(0.0, inner(b, gb)));

  Vector r(n), ax(n);
  op(x, ax);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - ax[i];
  std::vector<Vector> V, GV, Z;
  V.reserve(m + 1);
  GV.reserve(m + 1);
  Z.reserve(m);
  GV.emplace_back(n);
  apply_metric(metric, r, GV[0]);
  const double beta = std::sqrt(std::max(0.0, inner(r, GV[0])));
  res.history.push_back(beta);
  const double target = rel_tol * (bnorm > 0.0 ? bnorm : 1.0);
  if (beta <= target || beta == 0.0) {
    res.converged = true;
    return res;
  }
  V.push_back(r);
  scale(1.0 / beta, V[0]);
  scale(1.0 / beta, GV[0]);

  // Hessenberg matrix, column-major with leading dimension m+1.
  std::vector<double> H(static_cast<std::size_t>(m + 1) * m, 0.0);
  auto h = [&](int i, int j) -> double& { return H[static_cast<std::size_t>(j) * (m + 1) + i]; };
  std::vector<double> cs(m), sn(m), g(m + 1, 0.0);
  g[0] = beta;

  int j = 0;
  Vector w(n), gw(n);
  for (; j < m; ++j) {
    Z.emplace_back(n);
    precond(V[j], Z[j]);
    op(Z[j], w);
    for (int i = 0; i <= j; ++i) {
      const double hij = inner(w, GV[i]);
      h(i, j) = hij;
      axpy(-hij, V[i], w);
    }
    apply_metric(metric, w, gw);
    const double hn = std::sqrt(std::max(0.0, inner(w, gw)));
    h(j + 1, j) = hn;
    for (int i = 0; i < j; ++i) {
      const double a = h(i, j), c = h(i + 1, j);
      h(i, j) = cs[i] * a + sn[i] * c;
      h(i + 1, j) = -sn[i] * a + cs[i] * c;
    }
    const double a = h(j, j), c = h(j + 1, j);
    const double rho = std::hypot(a, c);
    cs[j] = rho > 0.0 ? a / rho : 1.0;
    sn[j] = rho > 0.0 ? c / rho : 0.0;
    h(j, j) = rho;
    h(j + 1, j) = 0.0;
    g[j + 1] = -sn[j] * g[j];
    g[j] = cs[j] * g[j];
    const double rnorm = std::abs(g[j + 1]);
    res.history.push_back(rnorm);
    const bool done = rnorm <= target;
    if (hn <= 1e-14 * beta && !done) {
      res.breakdown = true;
      ++j;
      break;
    }
    if (done) {
      res.converged = true;
      ++j;
      break;
    }
    V.push_back(w);
    scale(1.0 / hn, V.back());
    GV.push_back(gw);
    scale(1.0 / hn, GV.back());
  }
  const int used = std::min(j, m);
  res.iterations = used;
  // Back substitution for the least-squares coefficients.
  std::vector<double> y(used, 0.0);
  for (int i = used - 1; i >= 0; --i) {
    double s = g[i];
    for (int l = i + 1; l < used; ++l) s -= h(i, l) * y[l];
    y[i] = h(i, i) != 0.0 ? s / h(i, i) : 0.0;
  }
  for (int i = 0; i < used; ++i) axpy(y[i], Z[i], x);
  if (res.breakdown) res.converged = res.history.back() <= target;
  return res;
}

void NewtonConfig::validate() const {
  if (!(abs_tol >= 0.0 && rel_tol >= 0.0)) throw Error("Newton tolerances must be nonnegative");
  if (max_iterations < 0) throw Error("Newton iteration cap must be nonnegative");
  if (!(0.0 < eta_min && eta_min <= eta0 && eta0 <= eta_max && eta_max < 1.0))
    throw Error("forcing terms must satisfy 0 < eta_min <= eta0 <= eta_max < 1");
  if (!(0.0 < c1 && c1 < 1.0)) throw Error("sufficient-decrease constant must lie in (0,1)");
  if (!(0.0 < backtrack && backtrack < 1.0)) throw Error("backtracking factor must lie in (0,1)");
  if (!(0.0 < alpha_min && alpha_min <= lambda0)) throw Error("minimum step must lie in (0, lambda0]");
  if (window < 0 || max_backtracks < 0) throw Error("line-search window and backtracks must be nonnegative");
}

void RebuildConfig::validate() const {
  if (!(theta_n > 1.0 && theta_l > 1.0)) throw Error("rebuild thresholds must exceed 1");
  if (!(stagnation_ratio > 0.0 && stagnation_ratio < 1.0)) throw Error("stagnation ratio must lie in (0,1)");
  if (stagnation_window < 1) throw Error("stagnation window must be positive");
}

double ew_forcing(int m, double eta_prev, double r_norm, double r_prev_norm, const NewtonConfig& cfg) {
  if (m <= 0) return cfg.eta0;
  constexpr double eps = std::numeric_limits<double>::min();
  const double ratio = std::pow(r_norm / std::max(r_prev_norm, eps), cfg.theta);
  const double eta = cfg.forcing_rule == ForcingRule::recursive ? cfg.c_eta * eta_prev * ratio : cfg.c_eta * ratio;
  return std::clamp(eta, cfg.eta_min, cfg.eta_max);
}

LineSearchResult armijo(const std::function<double(double)>& merit, double phi0, double g0,
                        std::deque<double>& window, const NewtonConfig& cfg) {
  if (window.empty()) window.push_back(phi0);
  const double phi_ref = cfg.window > 0 ? *std::max_element(window.begin(), window.end()) : phi0;
  LineSearchResult out;
  double alpha = cfg.lambda0;
  for (int attempt = 0; attempt <= cfg.max_backtracks && alpha >= cfg.alpha_min; ++attempt) {
    const double phi = merit(alpha);
    if (std::isfinite(phi) && phi <= phi_ref + cfg.c1 * alpha * g0) {
      if (cfg.window > 0) {
        window.push_back(phi);
        while (static_cast<int>(window.size()) > cfg.window) window.pop_front();
      }
      out.alpha = alpha;
      out.accepted = true;
      out.merit = phi;
      return out;
    }
    ++out.backtracks;
    // Minimizer of the quadratic through phi0, g0 and the failed trial.
    const double denom = 2.0 * (phi - phi0 - g0 * alpha);
    double next = cfg.backtrack * alpha;
    if (std::isfinite(phi) && g0 < 0.0 && denom > 0.0)
      next = std::clamp(-g0 * alpha * alpha / denom, 0.1 * alpha, 0.5 * alpha);
    alpha = next;
  }
  out.alpha = cfg.alpha_min;
  out.accepted = false;
  out.merit = merit(cfg.alpha_min);
  return out;
}

bool stagnates(std::span<const double> history, const RebuildConfig& cfg) {
  const int s = cfg.stagnation_window;
  const int n = static_cast<int>(history.size());
  if (n <= s) return false;
  const double before = history[n - 1 - s];
  return before > 0.0 && history[n - 1] / before >= cfg.stagnation_ratio;
}

bool should_rebuild(std::span<const double> rho, std::span<const double> kappa,
                    std::span<const double> last_krylov_history, const RebuildConfig& cfg) {
  const std::size_t m = rho.size();
  if (m >= 2 && rho[m - 1] >= cfg.theta_n * rho[m - 2]) return true;
  const std::size_t l = kappa.size();
  if (l >= 2 && kappa[l - 1] >= std::max(cfg.theta_l * kappa[l - 2], cfg.kappa_abs)) return true;
  return !last_krylov_history.empty() && stagnates(last_krylov_history, cfg);
}

PressureProjector::PressureProjector(const SpatialOperator& op)
    : constant_(op.pressure().constant()), mass_constant_(op.apply_pressure_mass(constant_)) {
  measure_ = dot(constant_, mass_constant_);
}

double PressureProjector::mean(std::span<const double> p) const { return dot(mass_constant_, p) / measure_; }

void PressureProjector::project(std::span<double> p) const { axpy(-mean(p), constant_, p); }

void PressureProjector::project_dual(std::span<double> r) const {
  axpy(-dot(constant_, r) / measure_, mass_constant_, r);
}

void PressureProjector::project(SlabVector& u) const {
  for (int a = 0; a < u.blocks(); ++a) project(u.pressure(a));
}

void PressureProjector::project_dual(SlabVector& r) const {
  for (int a = 0; a < r.blocks(); ++a) project_dual(r.pressure(a));
}

void IdentityPreconditioner::apply(std::span<const double> r, std::span<double> z) {
  std::copy(r.begin(), r.end(), z.begin());
}

double SolveStats::mean_newton() const {
  if (slabs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& sl : slabs) s += sl.newton_iterations;
  return s / static_cast<double>(slabs.size());
}

double SolveStats::mean_krylov() const {
  double s = 0.0;
  int n = 0;
  for (const auto& sl : slabs)
    for (const auto& st : sl.steps) {
      s += st.krylov_iterations;
      ++n;
    }
  return n ? s / n : 0.0;
}

bool SolveStats::all_converged() const {
  return std::all_of(slabs.begin(), slabs.end(), [](const SlabStats& s) { return s.converged; });
}

std::vector<int> SolveStats::failed_slabs() const {
  std::vector<int> out;
  for (const auto& s : slabs)
    if (!s.converged) out.push_back(s.slab);
  return out;
}

SlabStats newton_solve_slab(const SlabProblem& problem, SlabVector& u, SlabPreconditioner& precond,
                            const SolverConfig& cfg) {
  cfg.newton.validate();
  cfg.krylov.validate();
  cfg.rebuild.validate();
  const NewtonConfig& nc = cfg.newton;
  const SpatialOperator& op = problem.op();
  const TemporalMatrices& tm = problem.temporal();
  if (!u.same_shape(problem.zeros())) throw ShapeError("newton: slab vector shape mismatch");

  const bool pin = problem.pure_dirichlet();
  const PressureProjector proj(op);
  auto eval_residual = [&](const SlabVector& x) {
    SlabVector r = residual(problem, x);
    if (pin) proj.project_dual(r);
    return r;
  };
  if (pin) proj.project(u);

  SlabStats stats;
  stats.slab = problem.temporal().slab;
  SlabVector r = eval_residual(u);
  double rn = mass_norm(problem, r);
  const double n0 = rn;
  stats.initial_residual = n0;
  stats.residual_history.push_back(rn);
  const double stop = std::max(nc.abs_tol, nc.rel_tol * n0);

  const LinearAction metric = [&](std::span<const double> in, std::span<double> out) {
    SlabVector x = problem.zeros(), y;
    std::copy(in.begin(), in.end(), x.data().begin());
    apply_slab_mass(op, tm, x, y);
    std::copy(y.data().begin(), y.data().end(), out.begin());
  };

  std::deque<double> window;
  std::vector<double> rho, kappa;
  std::vector<double> last_history;
  double eta = nc.eta0, r_prev = n0;
  bool need_rebuild = true;
  int m = 0;
  while (rn > stop && m < nc.max_iterations) {
    NewtonStep step;
    step.residual = rn;
    if (need_rebuild) {
      precond.rebuild(problem, u);
      step.rebuilt = true;
      ++stats.rebuilds;
      need_rebuild = false;
    } else {
      precond.linearize(problem, u);
    }
    eta = ew_forcing(m, eta, rn, r_prev, nc);
    step.eta = eta;

    const SlabJacobian jac(problem, u);
    SlabVector tmp_in = problem.zeros(), tmp_out = problem.zeros();
    const LinearAction jop = [&](std::span<const double> in, std::span<double> out) {
      std::copy(in.begin(), in.end(), tmp_in.data().begin());
      jac.apply(tmp_in, tmp_out);
      std::copy(tmp_out.data().begin(), tmp_out.data().end(), out.begin());
    };
    SlabVector pz = problem.zeros();
    const LinearAction pop = [&](std::span<const double> in, std::span<double> out) {
      precond.apply(in, out);
      if (pin) {
        std::copy(out.begin(), out.end(), pz.data().begin());
        proj.project(pz);
        std::copy(pz.data().begin(), pz.data().end(), out.begin());
      }
    };
    SlabVector rhs = r;
    scale(-1.0, rhs.all());
    SlabVector du = problem.zeros();
    const KrylovResult kr = fgmres(jop, pop, metric, rhs.all(), du.all(), eta, cfg.krylov);
    step.krylov_iterations = kr.iterations;
    step.krylov_converged = kr.converged;
    last_history = kr.history;
    if (pin) proj.project(du);

    SlabVector jdu = problem.zeros();
    jac.apply(du, jdu);
    const double g0 = mass_inner(op, tm, r, jdu);
    const double phi0 = 0.5 * rn * rn;

    double cached_alpha = -1.0;
    SlabVector trial, trial_r;
    const auto merit = [&](double alpha) {
      trial = u;
      axpy(alpha, du.all(), trial.all());
      trial_r = eval_residual(trial);
      cached_alpha = alpha;
      const double nr = mass_norm(problem, trial_r);
      return 0.5 * nr * nr;
    };
    const LineSearchResult ls = armijo(merit, phi0, g0, window, nc);
    step.alpha = ls.alpha;
    step.backtracks = ls.backtracks;
    if (cached_alpha != ls.alpha) merit(ls.alpha);
    u = std::move(trial);
    if (pin) proj.project(u);
    r = std::move(trial_r);
    r_prev = rn;
    rn = mass_norm(problem, r);
    stats.residual_history.push_back(rn);
    stats.steps.push_back(step);
    rho.push_back(rn / std::max(r_prev, std::numeric_limits<double>::min()));
    kappa.push_back(std::max(1.0, static_cast<double>(kr.iterations)));
    need_rebuild = should_rebuild(rho, kappa, last_history, cfg.rebuild);
    ++m;
  }
  stats.newton_iterations = m;
  stats.final_residual = rn;
  stats.converged = rn <= stop;
  return stats;
}

SolveStats march(const SpatialOperator& op, const TimePartition& partition, int k,
                 const SpaceTimeField* forcing, std::span<const double> v0,
                 SlabPreconditioner& precond, const SolverConfig& cfg, const SlabObserver& observer) {
  require_size(v0.size(), static_cast<std::size_t>(op.n_velocity()), "initial velocity");
  SolveStats out;
  Vector trace(v0.begin(), v0.end());
  Vector p_trace(op.n_pressure(), 0.0);
  for (int n = 1; n <= partition.n_slabs; ++n) {
    const SlabProblem problem(op, k, partition.endpoints[n - 1], partition.tau(n), n, forcing, trace);
    SlabVector u = problem.zeros();
    for (int a = 0; a <= k; ++a) {
      std::copy(trace.begin(), trace.end(), u.velocity(a).begin());
      std::copy(p_trace.begin(), p_trace.end(), u.pressure(a).begin());
    }
    SlabStats st = newton_solve_slab(problem, u, precond, cfg);
    st.slab = n;
    if (observer) observer(problem, u, st);
    std::copy(u.velocity(k).begin(), u.velocity(k).end(), trace.begin());
    std::copy(u.pressure(k).begin(), u.pressure(k).end(), p_trace.begin());
    out.slabs.push_back(std::move(st));
  }
  return out;
}

} // namespace stns
