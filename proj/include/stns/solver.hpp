#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stns/common.hpp"
#include "stns/slab.hpp"

namespace stns {

using LinearAction = std::function<void(std::span<const double> in, std::span<double> out)>;

struct KrylovConfig {
  int max_iterations = 50;
  void validate() const;
};

struct KrylovResult {
  int iterations = 0;
  bool converged = false;
  bool breakdown = false;
  // Residual norms in the solver metric, starting with the initial residual.
  std::vector<double> history;
};

// Flexible GMRES with right preconditioning. precond may vary between
// iterations. metric, if set, applies the SPD matrix defining the inner
// product; residual norms and the stopping test use that norm. x holds the
// initial guess on entry.
KrylovResult fgmres(const LinearAction& op, const LinearAction& precond, const LinearAction& metric,
                    std::span<const double> b, std::span<double> x, double rel_tol,
                    const KrylovConfig& cfg);

enum class ForcingRule {
  recursive, // multiplies by the previous forcing term
  direct,    // ratio-only form
};

struct NewtonConfig {
  double abs_tol = 1e-12;
  double rel_tol = 1e-8;
  int max_iterations = 30;
  double eta0 = 0.4;
  double eta_min = 1e-3;
  double eta_max = 0.8;
  double c_eta = 0.5;
  double theta = 1.5;
  ForcingRule forcing_rule = ForcingRule::recursive;
  double lambda0 = 1.0;
  double c1 = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 5;
  double alpha_min = 1e-3;
  int window = 5;
  void validate() const;
};

// Smoother rebuild triggers.
struct RebuildConfig {
  double theta_n = 2.0;
  double theta_l = 1.5;
  double kappa_abs = 40.0;
  int stagnation_window = 5;
  double stagnation_ratio = 0.9;
  void validate() const;
};

// Forcing term for Newton step m given the current and previous residual norms.
double ew_forcing(int m, double eta_prev, double r_norm, double r_prev_norm, const NewtonConfig& cfg);

struct LineSearchResult {
  double alpha = 1.0;
  int backtracks = 0;
  bool accepted = false;
  double merit = 0.0;
};

// Nonmonotone backtracking on merit(alpha) = 0.5 ||R(U + alpha dU)||^2.
// window holds recent accepted merit values and is updated on acceptance.
LineSearchResult armijo(const std::function<double(double)>& merit, double phi0, double g0,
                        std::deque<double>& window, const NewtonConfig& cfg);

// True when inner residuals fell by less than the stagnation ratio over the
// last stagnation_window iterations.
bool stagnates(std::span<const double> history, const RebuildConfig& cfg);

// Newton residual ratios rho and Krylov counts kappa of the steps so far.
bool should_rebuild(std::span<const double> rho, std::span<const double> kappa,
                    std::span<const double> last_krylov_history, const RebuildConfig& cfg);

// Mean-zero pressure projections for pure-Dirichlet problems. The primal
// projection removes the mass-weighted mean of a pressure field, the dual one
// removes the constant mode from a residual.
class PressureProjector {
public:
  explicit PressureProjector(const SpatialOperator& op);
  double mean(std::span<const double> p) const;
  void project(std::span<double> p) const;
  void project_dual(std::span<double> r) const;
  void project(SlabVector& u) const;
  void project_dual(SlabVector& r) const;

private:
  Vector constant_, mass_constant_;
  double measure_;
};

// Preconditioner interface seen by Newton. rebuild refreshes frozen parts
// (smoother factorizations), linearize moves the Jacobian point.
class SlabPreconditioner {
public:
  virtual ~SlabPreconditioner() = default;
  virtual void rebuild(const SlabProblem& problem, const SlabVector& state) = 0;
  virtual void linearize(const SlabProblem& problem, const SlabVector& state) = 0;
  virtual void apply(std::span<const double> r, std::span<double> z) = 0;
};

class IdentityPreconditioner final : public SlabPreconditioner {
public:
  void rebuild(const SlabProblem&, const SlabVector&) override {}
  void linearize(const SlabProblem&, const SlabVector&) override {}
  void apply(std::span<const double> r, std::span<double> z) override;
};

struct NewtonStep {
  double residual = 0.0; // before the step
  double eta = 0.0;
  int krylov_iterations = 0;
  bool krylov_converged = false;
  double alpha = 0.0;
  int backtracks = 0;
  bool rebuilt = false;
};

struct SlabStats {
  int slab = 0;
  int newton_iterations = 0;
  bool converged = false;
  int rebuilds = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  std::vector<NewtonStep> steps;
  std::vector<double> residual_history;
};

struct SolveStats {
  std::vector<SlabStats> slabs;
  double mean_newton() const;
  double mean_krylov() const;
  bool all_converged() const;
  std::vector<int> failed_slabs() const;
};

struct SolverConfig {
  NewtonConfig newton;
  KrylovConfig krylov;
  RebuildConfig rebuild;
};

// Solves one slab in place starting from u.
SlabStats newton_solve_slab(const SlabProblem& problem, SlabVector& u, SlabPreconditioner& precond,
                            const SolverConfig& cfg);

// Called after every slab with the solved problem and its solution.
using SlabObserver = std::function<void(const SlabProblem&, const SlabVector&, const SlabStats&)>;

// Slab-by-slab solve on [0, T]. Each slab starts from the constant-in-time
// extension of the previous end-time velocity and pressure.
SolveStats march(const SpatialOperator& op, const TimePartition& partition, int k,
                 const SpaceTimeField* forcing, std::span<const double> v0,
                 SlabPreconditioner& precond, const SolverConfig& cfg,
                 const SlabObserver& observer = nullptr);

} // namespace stns
