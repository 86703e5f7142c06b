#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "stns/common.hpp"
#include "stns/solver.hpp"
#include "stns/stmg.hpp"

namespace stns {

// Smooth solution on [0,1]^2 x [0,1] with no-slip walls and zero initial
// velocity; the forcing is written out in closed form.
struct ManufacturedCase {
  double nu = 1e-2;
  double t_end = 1.0;

  Point2 velocity(Point2 x, double t) const;
  // {dv1/dx, dv1/dy, dv2/dx, dv2/dy}
  std::array<double, 4> velocity_gradient(Point2 x, double t) const;
  double pressure(Point2 x, double t) const;
  Point2 forcing(Point2 x, double t) const;

  SpaceTimeField forcing_field() const;
  SpaceTimeField dirichlet_field() const;
};

// Lid-driven cavity on [0,1]^2 with a time-ramped lid on the top edge.
struct CavityCase {
  double nu = 4e-4;
  double t_end = 8.0;
  Point2 lid(Point2 x, double t) const;
  SpaceTimeField dirichlet_field() const;
};

struct ErrorReport {
  double v_l2l2 = 0.0;
  double v_l2h1 = 0.0;
  double v_linf = 0.0;  // sampled at the quadrature points
  double p_l2l2 = 0.0;  // mean-adjusted at every time point
  double div_l2l2 = 0.0;
  std::array<double, 5> values() const { return {v_l2l2, v_l2h1, v_linf, p_l2l2, div_l2l2}; }
};

// Accumulates space-time errors slab by slab with over-integration:
// (r+3)^2 points per cell and k+2 Gauss points per slab.
class ErrorAccumulator {
public:
  ErrorAccumulator(const SpatialOperator& op, const ManufacturedCase& exact);
  void add_slab(const SlabProblem& problem, const SlabVector& u);
  ErrorReport report() const;

private:
  const SpatialOperator* op_;
  const ManufacturedCase* exact_;
  int nq_;
  TensorRule rule_;
  Vector xq_;                      // 1D points on [0,1]
  std::vector<Vector> vb_, vd_;    // velocity basis values/derivatives [i][q]
  std::vector<Vector> pb_;         // pressure shapes [l][q2]
  double sv_ = 0, sh1_ = 0, sp_ = 0, sdiv_ = 0, linf_ = 0;
};

struct SlabRecord {
  SlabProblem problem;
  SlabVector u;
};
ErrorReport compute_errors(const SpatialOperator& op, const std::vector<SlabRecord>& trajectory,
                           const ManufacturedCase& exact);

// Rates log2(e[i-1]/e[i]); entry 0 and undefined rates are NaN.
std::vector<double> eoc(std::span<const double> errors);

struct RunOptions {
  double gamma1 = 10.0, gamma2 = 10.0;
  PenaltyScale penalty_scale = PenaltyScale::degree_squared;
  int quad_points = 0;  // spatial points per direction; 0 selects r+2
  StmgConfig stmg;
  SolverConfig solver;
  // Number of slabs is slabs_per_cell * 2^c for the convergence study.
  int slabs_per_cell = 1;
  bool deterministic = false;
};

struct RunStats {
  int slabs = 0;
  double mean_newton = 0.0;
  double mean_krylov = 0.0;
  int max_krylov = 0;
  int rebuilds = 0;
  bool converged = true;
  bool krylov_cap_hit = false;
  double wall_time = 0.0;
  std::vector<double> newton_per_slab;
};

struct ConvergenceRow {
  int c = 0;
  double h = 0.0;
  int r = 1, k = 1;
  long long dofs = 0;  // unknowns per slab
  double nu = 0.0;
  ErrorReport errors;
  std::array<double, 5> eoc{};
  RunStats stats;
};

struct CavityRow {
  int c = 0;
  double h = 0.0;
  int r = 1, k = 1;
  long long dofs = 0;
  double nu = 0.0;
  int nsm = 1;
  RunStats stats;
};

// One manufactured-solution run per entry of levels (cells per side 2^c).
std::vector<ConvergenceRow> run_convergence(int r, int k, double nu, std::span<const int> levels,
                                            const RunOptions& opts);
CavityRow run_cavity(int c, int r, int k, double nu, int n_slabs, const RunOptions& opts);

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};
// Six significant digits in scientific notation; NaN becomes "nan".
std::string format_sci(double v);
CsvTable convergence_table(std::span<const ConvergenceRow> rows, bool deterministic);
CsvTable cavity_table(std::span<const CavityRow> rows, bool deterministic);
void write_csv(const CsvTable& table, std::ostream& out);
void write_csv(const CsvTable& table, const std::string& path);
CsvTable read_csv(std::istream& in);
// Fixed-width text rendering of a table.
void write_text(const CsvTable& table, std::ostream& out);

} // namespace stns
