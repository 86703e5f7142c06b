#pragma once

#include <functional>
#include <span>

#include "stns/common.hpp"
#include "stns/elements.hpp"

namespace stns {

// Small dense (k+1)x(k+1) temporal matrices, row-major.
struct TemporalMatrices {
  int k = 0;
  int slab = 1;  // 1-based slab index
  double tau = 0.0;
  Vector stiffness;  // derivative plus upwind jump term
  Vector mass;       // diagonal entries only
  Vector jump;       // coupling to the previous slab's trace
  int size() const { return k + 1; }
  double K(int a, int b) const { return stiffness[a * (k + 1) + b]; }
  double C(int a, int b) const { return jump[a * (k + 1) + b]; }
};

TemporalMatrices assemble_temporal(int k, double tau, int slab);

using SpatialAction = std::function<void(std::span<const double> in, std::span<double> out)>;

// Y^i = sum_a A(i,a) * op(X^a), with op invoked once per temporal block.
void kron_apply(std::span<const double> a_temporal, int n_blocks, const SpatialAction& op,
                std::span<const double> x, std::span<double> y);

// (C (x) M) applied to a previous-slab trace packed into the last block; the
// mass action is called once. Output has n_blocks * block entries.
void jump_apply(const TemporalMatrices& tm, const SpatialAction& mass,
                std::span<const double> v_prev, std::span<double> out);

} // namespace stns
