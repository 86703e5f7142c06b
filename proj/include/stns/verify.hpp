#pragma once

#include <span>
#include <string>
#include <vector>

namespace stns {

// Structural checks shared by the acceptance binary and the command line.
// Each one builds its own small problem and returns raw numbers; the caller
// decides what counts as passing.

// Largest error of the (k+1)-point right Gauss-Radau rule on monomials of
// degree <= 2k, over k = 0..k_max.
double gauss_radau_exactness_error(int k_max);

struct OracleReport {
  double residual_rel = 0.0;    // worst max-norm relative residual mismatch
  double jacobian_rel = 0.0;    // worst relative Jacobian column mismatch
  double coupling_asym = 0.0;   // max |J21 - J12^T| / max |J12|
  double pressure_block = 0.0;  // max |J22|
  int cases = 0;
};
// Matrix-free residual and Jacobian against the dense quadrature oracle for
// (k,r) in {(1,1),(1,2),(2,1)} on 1x1 and 2x2 meshes.
OracleReport oracle_equivalence(int states_per_case, unsigned seed);

struct LinearizationReport {
  double quadratic_rel = 0.0;  // H(V+W) - H(V) - H'(V)W - H(W)
  double taylor_rel = 0.0;     // R(U+dU) - R(U) - J(U)dU against the convection of dU
};
LinearizationReport linearization_identities(int samples, unsigned seed);

struct SurrogateReport {
  std::vector<double> tau, perturbation, eps;
  int checked = 0;          // time steps with eps < 1
  bool bounds_hold = true;  // inverse, approximation and singular value bounds
  double min_slope = 0.0;   // of the perturbation norm against tau
};
// Exact against midpoint-frozen patch Jacobians for one cell and a smooth
// state, over four halvings of tau.
SurrogateReport surrogate_bounds();

struct ProbeResult {
  int k = 0;
  std::vector<double> tau, error;
  double slope = 0.0;  // least-squares log-log slope
};
// Accumulated error of the Gauss-Radau rule on the convection form
// c(u(t))(w(t)) over [0,1] against a (2k+2)-point Gauss reference. u and w
// combine fixed discrete spatial fields with smooth temporal coefficients;
// constant_in_time freezes the coefficients at t = 0.
ProbeResult quadrature_error_probe(int k, std::span<const double> taus, bool constant_in_time = false);

// Max relative difference between one DG(0) slab of the viscous problem and
// a backward Euler step assembled from the spatial blocks.
double dg0_backward_euler_difference();

// Residual of one exact-mode Vanka sweep with omega = 1 on a one-cell mesh.
double one_cell_vanka_residual();

// Newton steps for a Stokes slab with a linear solve to 1e-10.
int stokes_newton_steps();

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};
// Runs every check above against fixed tolerances. The entries are grouped
// as oracle, linearization, quadrature, surrogate and reductions.
std::vector<CheckResult> property_checks(int oracle_states = 20);

} // namespace stns
