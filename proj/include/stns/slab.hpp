#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "stns/common.hpp"
#include "stns/geometry.hpp"
#include "stns/operators.hpp"
#include "stns/temporal.hpp"

namespace stns {

// Coefficients of one slab: all velocity blocks first, then all pressure blocks.
class SlabVector {
public:
  SlabVector() = default;
  SlabVector(int k, int nv, int np) : k_(k), nv_(nv), np_(np), data_(static_cast<std::size_t>(k + 1) * (nv + np), 0.0) {}

  int k() const { return k_; }
  int blocks() const { return k_ + 1; }
  int n_velocity() const { return nv_; }
  int n_pressure() const { return np_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const SlabVector& o) const { return k_ == o.k_ && nv_ == o.nv_ && np_ == o.np_; }

  std::span<double> velocity(int a) { return {data_.data() + static_cast<std::size_t>(a) * nv_, static_cast<std::size_t>(nv_)}; }
  std::span<const double> velocity(int a) const { return {data_.data() + static_cast<std::size_t>(a) * nv_, static_cast<std::size_t>(nv_)}; }
  std::span<double> pressure(int a) { return {data_.data() + pressure_offset() + static_cast<std::size_t>(a) * np_, static_cast<std::size_t>(np_)}; }
  std::span<const double> pressure(int a) const { return {data_.data() + pressure_offset() + static_cast<std::size_t>(a) * np_, static_cast<std::size_t>(np_)}; }
  std::span<double> all() { return data_; }
  std::span<const double> all() const { return data_; }
  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

private:
  std::size_t pressure_offset() const { return static_cast<std::size_t>(k_ + 1) * nv_; }
  int k_ = 0, nv_ = 0, np_ = 0;
  Vector data_;
};

// Everything needed to evaluate the residual and Jacobian of one slab.
class SlabProblem {
public:
  // forcing may be null. v_prev is the previous slab's end-time velocity (or
  // the initial value); an empty span means no right-hand side at all, which
  // is what coarse multigrid levels use.
  SlabProblem(const SpatialOperator& op, int k, double t_start, double tau, int slab_index,
              const SpaceTimeField* forcing, std::span<const double> v_prev,
              unsigned terms = term::navier_stokes);

  const SpatialOperator& op() const { return *op_; }
  const TemporalMatrices& temporal() const { return tm_; }
  const TemporalBasis& basis() const { return basis_; }
  int k() const { return tm_.k; }
  unsigned terms() const { return terms_; }
  double t_start() const { return t_start_; }
  double tau() const { return tm_.tau; }
  double node_time(int a) const;
  double midpoint_time() const { return t_start_ + 0.5 * tm_.tau; }
  bool pure_dirichlet() const { return op_->mesh().all_dirichlet(); }
  bool has_rhs() const { return has_rhs_; }
  const Vector& previous_trace() const { return v_prev_; }
  SlabVector zeros() const { return SlabVector(tm_.k, op_->n_velocity(), op_->n_pressure()); }
  const SpatialState& data_state(int a) const { return data_states_[a]; }
  const SpaceTimeField* forcing() const { return forcing_; }
  // Forcing plus linear Dirichlet data per temporal node.
  std::span<const double> rhs_velocity(int a) const { return rhs_v_[a]; }
  std::span<const double> rhs_pressure(int a) const { return rhs_p_[a]; }
  std::span<const double> mass_previous() const { return mv_prev_; }

private:
  const SpatialOperator* op_;
  TemporalMatrices tm_;
  TemporalBasis basis_;
  double t_start_;
  const SpaceTimeField* forcing_;
  unsigned terms_;
  bool has_rhs_;
  Vector v_prev_, mv_prev_;
  std::vector<Vector> rhs_v_, rhs_p_;
  std::vector<SpatialState> data_states_;
};

SlabVector residual(const SlabProblem& problem, const SlabVector& u);

// Jacobian at a fixed linearization point; states are cached per temporal node.
class SlabJacobian {
public:
  SlabJacobian(const SlabProblem& problem, const SlabVector& u);
  void apply(const SlabVector& du, SlabVector& out) const;
  const SlabProblem& problem() const { return *problem_; }
  const SpatialState& state(int a) const { return states_[a]; }

private:
  const SlabProblem* problem_;
  std::vector<SpatialState> states_;
};

SlabVector jacobian_action(const SlabProblem& problem, const SlabVector& u, const SlabVector& du);

// blockdiag(M^tau (x) M_h, M^tau (x) M_h^p) applied to z.
void apply_slab_mass(const SpatialOperator& op, const TemporalMatrices& tm, const SlabVector& z,
                     SlabVector& out);
double mass_inner(const SpatialOperator& op, const TemporalMatrices& tm, const SlabVector& x,
                  const SlabVector& y);
double mass_norm(const SlabProblem& problem, const SlabVector& z);

// Explicit residual and Jacobian assembled by direct quadrature loops,
// independent of the sum-factorized kernel. Test use only.
struct DenseSystem {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
};
constexpr std::size_t dense_oracle_limit = 5000;
DenseSystem dense_oracle(const SlabProblem& problem, const SlabVector& u);

} // namespace stns
