#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stns/common.hpp"
#include "stns/elements.hpp"
#include "stns/geometry.hpp"

namespace stns {

// Face size entering the penalties. face_length alone loses coercivity of the
// Nitsche form for velocity degree >= 4 at gamma = 10.
enum class PenaltyScale { face_length, degree_squared };

struct NitscheConfig {
  double nu = 1.0;
  double gamma1 = 10.0;
  double gamma2 = 10.0;
  PenaltyScale scale = PenaltyScale::degree_squared;
  void validate() const;
  // Effective face size for a face of the given length and velocity degree.
  double h_face(double length, int degree) const {
    return scale == PenaltyScale::degree_squared ? length / (degree * degree) : length;
  }
};

// Space-time vector field, used for Dirichlet data and forcing.
using SpaceTimeField = std::function<Point2(Point2 x, double t)>;

// Bit mask selecting the contributions of the fused cell kernel.
namespace term {
constexpr unsigned mass = 1u << 0;          // M v into the mass output
constexpr unsigned viscous = 1u << 1;       // nu (grad v, grad z)
constexpr unsigned grad_p = 1u << 2;        // B^T p
constexpr unsigned div = 1u << 3;           // B v into the pressure output
constexpr unsigned p_mass = 1u << 4;        // M^p p into the pressure output
constexpr unsigned convection = 1u << 5;    // volume and full-boundary convection
constexpr unsigned nitsche = 1u << 6;       // consistency, symmetry and penalties on Dirichlet faces
constexpr unsigned boundary_p = 1u << 7;    // (G^p)^T p
constexpr unsigned boundary_div = 1u << 8;  // G^p v into the pressure output
constexpr unsigned inflow = 1u << 9;        // inflow pairing with the Dirichlet data
constexpr unsigned linearized = 1u << 10;   // convection/inflow as derivatives at the cached state

constexpr unsigned stokes = viscous | grad_p | div | nitsche | boundary_p | boundary_div;
constexpr unsigned navier_stokes = stokes | convection | inflow;
} // namespace term

class SpatialOperator;

// Velocity (and Dirichlet data) sampled at the quadrature points of every cell
// and boundary face. Regenerated by update(); version() increases each time.
class SpatialState {
public:
  explicit SpatialState(const SpatialOperator& op);

  // Dirichlet data only, no linearization point.
  void update_data(double t);
  void update(std::span<const double> v, double t);

  std::uint64_t version() const { return version_; }
  double time() const { return time_; }
  bool has_velocity() const { return has_velocity_; }
  const Vector& velocity() const { return velocity_; }
  // [cell][comp][q], q over the tensor volume rule
  std::span<const double> volume(int cell) const;
  // [comp][q] for boundary face f
  std::span<const double> face_velocity(int f) const;
  std::span<const double> face_data(int f) const;

private:
  const SpatialOperator* op_;
  std::uint64_t version_ = 0;
  double time_ = 0.0;
  bool has_velocity_ = false;
  Vector velocity_;
  Vector volume_;
  Vector face_velocity_;
  Vector face_data_;
};

// Per-call scratch for the cell kernel.
struct KernelScratch {
  Vector v_in, p_in, mass_out, vel_out, pres_out;
  Vector work;
};

// Matrix-free spatial operator on one level. All terms are evaluated by a
// single sum-factorized cell kernel; boundary faces are handled inside it.
class SpatialOperator {
public:
  SpatialOperator(const VelocitySpace& vel, const PressureSpace& pres, NitscheConfig cfg,
                  SpaceTimeField dirichlet, int quad_points = 0);  // 0 selects r+2 points

  const VelocitySpace& velocity() const { return *vel_; }
  const PressureSpace& pressure() const { return *pres_; }
  const MeshLevel& mesh() const { return vel_->mesh(); }
  const NitscheConfig& config() const { return cfg_; }
  const ShapeTables& tables() const { return tables_; }
  const SpaceTimeField& dirichlet() const { return dirichlet_; }
  int n_velocity() const { return vel_->n_dofs(); }
  int n_pressure() const { return pres_->n_dofs(); }

  // Global action. Outputs are overwritten; empty spans are skipped.
  // state supplies the Dirichlet data and, with term::linearized, the
  // linearization point. nu overrides the configured viscosity when >= 0.
  void apply(unsigned terms, const SpatialState* state, std::span<const double> v,
             std::span<const double> p, std::span<double> mass_out, std::span<double> vel_out,
             std::span<double> pres_out, double nu = -1.0) const;

  // Same action restricted to one cell on local coefficient arrays
  // (velocity ordering c*n1^2 + b*n1 + a). Outputs are overwritten.
  void cell_apply(unsigned terms, const SpatialState* state, int cell,
                  std::span<const double> v_local, std::span<const double> p_local,
                  std::span<double> mass_local, std::span<double> vel_local,
                  std::span<double> pres_local, KernelScratch& scratch, double nu = -1.0) const;

  // Lexicographic cell loop without coloring or threads.
  void apply_serial(unsigned terms, const SpatialState* state, std::span<const double> v,
                    std::span<const double> p, std::span<double> mass_out,
                    std::span<double> vel_out, std::span<double> pres_out, double nu = -1.0) const;

  // Named actions.
  Vector apply_mass(std::span<const double> v) const;
  Vector apply_stiffness(std::span<const double> v) const;
  Vector apply_div(std::span<const double> v) const;
  Vector apply_div_transpose(std::span<const double> p) const;
  Vector apply_pressure_mass(std::span<const double> p) const;
  Vector apply_nitsche_velocity(std::span<const double> v) const;
  Vector apply_pressure_boundary(std::span<const double> p) const;
  Vector apply_pressure_boundary_transpose(std::span<const double> v) const;
  Vector convection(const SpatialState& state) const;
  Vector convection_boundary_nitsche(const SpatialState& state) const;
  Vector convection_jacobian_action(const SpatialState& state, std::span<const double> vhat) const;

  // Linear-in-data right-hand side at time t: forcing plus the Nitsche
  // pairings with g (velocity rows, if term::nitsche) and the normal flux of g
  // (pressure rows, if term::boundary_div).
  void assemble_rhs(const SpaceTimeField* forcing, double t, std::span<double> vel_rhs,
                    std::span<double> pres_rhs, unsigned terms = term::navier_stokes) const;

  const std::vector<int>& cells_of_color(int c) const { return color_cells_[c]; }

  void gather(int cell, std::span<const double> v, std::span<const double> p,
              std::span<double> v_local, std::span<double> p_local) const;

private:
  friend class SpatialState;
  const VelocitySpace* vel_;
  const PressureSpace* pres_;
  NitscheConfig cfg_;
  SpaceTimeField dirichlet_;
  ShapeTables tables_;
  std::array<std::vector<int>, 4> color_cells_;

  void scatter_add(int cell, std::span<const double> local, std::span<double> global) const;
};

} // namespace stns
