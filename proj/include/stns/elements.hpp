#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "stns/common.hpp"
#include "stns/geometry.hpp"

namespace stns {

struct QuadratureRule {
  Vector nodes;
  Vector weights;
  int exactness_degree = 0;
  int size() const { return static_cast<int>(nodes.size()); }
};

// Gauss-Legendre rule with n points on [0,1].
QuadratureRule gauss_legendre(int n_points);
// Gauss-Legendre rule with n points on [-1,1].
QuadratureRule gauss_legendre_symmetric(int n_points);
// Right-sided Gauss-Radau rule with k+1 points on [-1,1]; the last node is +1.
QuadratureRule gauss_radau(int k);
// Gauss-Lobatto points on [0,1], including both endpoints, ascending.
Vector gauss_lobatto_nodes(int n_points);

struct TensorRule {
  std::vector<Point2> points;
  Vector weights;
  int exactness_degree = 0;
};
TensorRule tensorize(const QuadratureRule& rule);

class LagrangeBasis1D {
public:
  explicit LagrangeBasis1D(Vector nodes);
  int size() const { return static_cast<int>(nodes_.size()); }
  const Vector& nodes() const { return nodes_; }
  double value(int i, double x) const;
  double derivative(int i, double x) const;
  void values(double x, std::span<double> out) const;
  void derivatives(double x, std::span<double> out) const;

private:
  Vector nodes_;
  Vector denom_;
};

class TemporalBasis {
public:
  explicit TemporalBasis(int k);
  int degree() const { return k_; }
  int size() const { return k_ + 1; }
  const QuadratureRule& radau() const { return radau_; }
  double value(int a, double t_ref) const { return lagrange_.value(a, t_ref); }
  double derivative(int a, double t_ref) const { return lagrange_.derivative(a, t_ref); }

private:
  int k_;
  QuadratureRule radau_;
  LagrangeBasis1D lagrange_;
};

using VectorField = std::function<Point2(Point2)>;
using ScalarField = std::function<double(Point2)>;

// Continuous vector-valued Q_{r+1} on tensor Gauss-Lobatto nodes.
// Global velocity dof of scalar node m and component c is 2*m + c.
class VelocitySpace {
public:
  VelocitySpace(const MeshLevel& mesh, int r);

  const MeshLevel& mesh() const { return *mesh_; }
  int r() const { return r_; }
  int degree() const { return r_ + 1; }
  int n1() const { return r_ + 2; }
  int nodes_per_cell() const { return n1() * n1(); }
  int local_size() const { return 2 * nodes_per_cell(); }
  int n_nodes() const { return static_cast<int>(points_.size()); }
  int n_dofs() const { return 2 * n_nodes(); }
  // Global scalar node ids of a cell, local ordering b*n1 + a.
  std::span<const int> cell_nodes(int cell) const {
    return {cell_nodes_.data() + static_cast<std::size_t>(cell) * nodes_per_cell(),
            static_cast<std::size_t>(nodes_per_cell())};
  }
  // Local dof ordering c*n1^2 + b*n1 + a.
  int dof(int cell, int local) const {
    const int npc = nodes_per_cell();
    return 2 * cell_nodes(cell)[local % npc] + local / npc;
  }
  const std::vector<Point2>& node_points() const { return points_; }
  const LagrangeBasis1D& basis() const { return basis_; }
  const std::vector<int>& boundary_dofs() const { return boundary_dofs_; }

  Vector interpolate(const VectorField& f) const;
  Point2 evaluate(std::span<const double> v, Point2 x) const;
  // Value and physical gradient (row c = component, column d = direction).
  void evaluate_with_gradient(std::span<const double> v, Point2 x, Point2& value,
                              std::array<std::array<double, 2>, 2>& grad) const;
  int locate(Point2 x, Point2& ref) const;

private:
  const MeshLevel* mesh_;
  int r_;
  LagrangeBasis1D basis_;
  std::vector<int> cell_nodes_;
  std::vector<Point2> points_;
  std::vector<int> boundary_dofs_;
};

// Discontinuous P_r: reference monomials x^i y^j on [0,1]^2 mapped per cell.
class PressureSpace {
public:
  PressureSpace(const MeshLevel& mesh, int r);

  const MeshLevel& mesh() const { return *mesh_; }
  int r() const { return r_; }
  int local_size() const { return dim_; }
  int n_dofs() const { return dim_ * mesh_->n_cells(); }
  int dof(int cell, int l) const { return cell * dim_ + l; }
  std::array<int, 2> exponents(int l) const { return exps_[l]; }
  double shape(int l, Point2 ref) const;
  Point2 shape_gradient_ref(int l, Point2 ref) const;

  // Coefficients of the constant function 1.
  Vector constant() const;
  // Cellwise L2 projection.
  Vector interpolate(const ScalarField& f) const;
  double evaluate(std::span<const double> p, Point2 x) const;
  double evaluate_in_cell(std::span<const double> p, int cell, Point2 ref) const;

private:
  const MeshLevel* mesh_;
  int r_;
  int dim_;
  std::vector<std::array<int, 2>> exps_;
};

// Reference tables reused by every cell kernel.
struct ShapeTables {
  int n1 = 0;      // velocity nodes per direction
  int nq = 0;      // quadrature points per direction
  int np = 0;      // pressure shapes per cell
  QuadratureRule rule;
  Vector value;    // [q * n1 + a]
  Vector grad;     // [q * n1 + a], reference derivative
  std::array<Vector, 2> end_value;  // basis at x=0 and x=1, [a]
  std::array<Vector, 2> end_grad;
  Vector pressure;                  // [l * nq*nq + qy*nq + qx]
  std::array<Vector, 4> pressure_face;  // per face side, [l * nq + q]
};

ShapeTables shape_tables(const VelocitySpace& vel, const PressureSpace& pres,
                         const QuadratureRule& rule);

} // namespace stns
