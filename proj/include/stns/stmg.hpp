#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "stns/common.hpp"
#include "stns/slab.hpp"
#include "stns/solver.hpp"

namespace stns {

// One multigrid level: spatial level s, temporal degree k, pressure degree r.
struct LevelSpec {
  int s = 0, k = 1, r = 1;
  bool operator==(const LevelSpec&) const = default;
};

enum class TransferKind { polynomial, geometric };

struct LevelSchedule {
  std::vector<LevelSpec> levels;        // finest first
  std::vector<TransferKind> transfers;  // transfers[i] links levels[i] and levels[i+1]
};

// Polynomial steps first, then geometric ones. Without coarsen_time only r is
// lowered and every level keeps the temporal degree of the finest one.
LevelSchedule build_schedule(LevelSpec finest, bool coarsen_time = true);

struct CsrMatrix {
  int rows = 0, cols = 0;
  std::vector<int> row_ptr, col;
  Vector val;
  void apply(std::span<const double> x, std::span<double> y) const;
  void apply_transpose(std::span<const double> x, std::span<double> y) const;
};

// Picks the source cell holding a target point (given by target cell and
// reference coordinates).
using CellLocator = std::function<int(int target_cell, Point2 target_ref)>;

// Nodal interpolation of a source velocity field at the target nodes.
CsrMatrix velocity_interpolation(const VelocitySpace& from, const VelocitySpace& to,
                                 const CellLocator& locate);
// Cellwise L2 projection of a source pressure field onto the target space.
CsrMatrix pressure_projection(const PressureSpace& from, const PressureSpace& to,
                              const CellLocator& locate);

// Prolongation between consecutive levels of one slab; restriction is its
// transpose. The state map carries Newton states from fine to coarse.
class SlabTransfer {
public:
  SlabTransfer(const MeshHierarchy& mesh, const VelocitySpace& fine_v, const PressureSpace& fine_p,
               int fine_k, const VelocitySpace& coarse_v, const PressureSpace& coarse_p, int coarse_k);
  void prolong(const SlabVector& coarse, SlabVector& fine) const;
  void restrict(const SlabVector& fine, SlabVector& coarse) const;
  // Evaluates a fine velocity state at the coarse nodes in space and time.
  void interpolate_state(const SlabVector& fine, SlabVector& coarse) const;
  int fine_k() const { return kf_; }
  int coarse_k() const { return kc_; }

private:
  int kf_, kc_;
  CsrMatrix pv_, pp_, state_v_;
  Vector time_prolong_;  // (kf+1) x (kc+1), row-major
  Vector time_state_;    // (kc+1) x (kf+1), row-major
};

enum class VankaMode { exact, surrogate };

// Element matrices of one cell: velocity mass and the full linearized
// spatial operator with rows/columns [velocity local | pressure local].
struct CellMatrices {
  Eigen::MatrixXd mass;
  Eigen::MatrixXd op;
};
CellMatrices cell_matrices(const SpatialOperator& op, unsigned terms, const SpatialState& state,
                           int cell);

// Dense Jacobian of the patch of one cell: all velocity and pressure dofs of
// the cell for every temporal node, ordered [a][velocity local | pressure local].
// Exact mode uses the per-node states of jac; surrogate mode freezes the
// linearization at the slab midpoint for every node.
Eigen::MatrixXd assemble_patch(const SlabJacobian& jac, int cell, VankaMode mode);
int patch_size(int k, int r);

struct VankaConfig {
  double omega = 0.8;
  VankaMode mode = VankaMode::surrogate;
  // Scale corrections by the inverse patch multiplicity of each dof. The
  // plain sum overcorrects shared velocity nodes and can diverge.
  bool weighted = true;
  // Refresh the defect after each cell color (block Gauss-Seidel over colors).
  bool multiplicative = false;
};

class VankaSmoother {
public:
  VankaSmoother(const SlabJacobian& jac, VankaConfig cfg);
  // Additive sweeps x += omega sum_K R_K^T J_K^{-1} R_K (b - J x).
  void smooth(const SlabJacobian& jac, std::span<const double> b, std::span<double> x, int sweeps) const;
  int patch_size() const { return m_; }
  int fallbacks() const { return fallbacks_; }
  const Eigen::MatrixXd& patch_matrix(int cell) const { return matrices_[cell]; }

private:
  const SlabProblem* problem_;
  int slab_;
  double tau_;
  VankaConfig cfg_;
  int m_;
  std::vector<std::vector<int>> dofs_;  // global slab index per patch entry
  std::vector<Eigen::MatrixXd> matrices_;
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> lu_;
  Vector weight_;
  int fallbacks_ = 0;
};

struct StmgConfig {
  int pre_smooth = 1;
  int post_smooth = 1;
  // Lowering k on coarse levels leaves smooth pressure errors in the dropped
  // temporal directions uncorrected; the V-cycle then degrades like 1 - C h^2.
  bool coarsen_time = false;
  VankaConfig vanka;
};

// hp space-time multigrid V-cycle used as right preconditioner.
class StmgPreconditioner final : public SlabPreconditioner {
public:
  // mesh must outlive the preconditioner. The finest level operator is taken
  // from the slab problem passed to rebuild/linearize.
  StmgPreconditioner(const MeshHierarchy& mesh, LevelSpec finest, NitscheConfig nitsche,
                     SpaceTimeField dirichlet, unsigned terms, StmgConfig cfg);
  ~StmgPreconditioner() override;

  void rebuild(const SlabProblem& problem, const SlabVector& state) override;
  void linearize(const SlabProblem& problem, const SlabVector& state) override;
  void apply(std::span<const double> r, std::span<double> z) override;

  const LevelSchedule& schedule() const { return schedule_; }
  int rebuilds() const { return rebuilds_; }
  int patch_fallbacks() const;
  // Level problems and Jacobians of the current slab, finest first.
  const SlabProblem& level_problem(int l) const;
  const SlabJacobian& level_jacobian(int l) const;
  const SlabTransfer& transfer(int l) const { return *transfers_[l]; }
  void vcycle(int l, std::span<const double> b, std::span<double> x) const;

private:
  struct Level;
  void set_slab(const SlabProblem& problem);
  void coarse_solve(std::span<const double> b, std::span<double> x) const;

  const MeshHierarchy* mesh_;
  LevelSchedule schedule_;
  NitscheConfig nitsche_;
  SpaceTimeField dirichlet_;
  unsigned terms_;
  StmgConfig cfg_;
  std::vector<std::unique_ptr<Level>> levels_;
  std::vector<std::unique_ptr<SlabTransfer>> transfers_;
  const SlabProblem* fine_problem_ = nullptr;
  Eigen::PartialPivLU<Eigen::MatrixXd> coarse_lu_;
  std::vector<int> coarse_pins_;
  int rebuilds_ = 0;
};

} // namespace stns
