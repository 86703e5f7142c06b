#include "stns/temporal.hpp"

namespace stns {

TemporalMatrices assemble_temporal(int k, double tau, int slab) {
  if (k < 0) throw Error("temporal degree must be non-negative");
  if (!(tau > 0.0)) throw Error("time step must be positive");
  const TemporalBasis basis(k);
  const int n = k + 1;
  TemporalMatrices tm;
  tm.k = k;
  tm.slab = slab;
  tm.tau = tau;
  tm.stiffness.assign(n * n, 0.0);
  tm.mass.resize(n);
  tm.jump.assign(n * n, 0.0);

  // phi_b' phi_a has degree 2k-1, so k+1 Gauss points integrate it exactly.
  const QuadratureRule gl = gauss_legendre_symmetric(n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double s = 0.0;
      for (int q = 0; q < gl.size(); ++q)
        s += gl.weights[q] * basis.derivative(b, gl.nodes[q]) * basis.value(a, gl.nodes[q]);
      tm.stiffness[a * n + b] = s + basis.value(b, -1.0) * basis.value(a, -1.0);
    }
  for (int a = 0; a < n; ++a) tm.mass[a] = 0.5 * tau * basis.radau().weights[a];
  // The previous slab's right-Radau basis is nodal at its right endpoint, so
  // only the last column couples; the first slab packs v0 the same way.
  for (int a = 0; a < n; ++a) tm.jump[a * n + k] = basis.value(a, -1.0);
  return tm;
}

void kron_apply(std::span<const double> a_temporal, int n_blocks, const SpatialAction& op,
                std::span<const double> x, std::span<double> y) {
  require_size(a_temporal.size(), static_cast<std::size_t>(n_blocks) * n_blocks, "kron_apply matrix");
  require_size(y.size(), x.size(), "kron_apply output");
  if (x.size() % n_blocks != 0) throw ShapeError("kron_apply: block size mismatch");
  const std::size_t block = x.size() / n_blocks;
  Vector tmp(block);
  fill(y, 0.0);
  for (int a = 0; a < n_blocks; ++a) {
    op(x.subspan(a * block, block), tmp);
    for (int i = 0; i < n_blocks; ++i) {
      const double c = a_temporal[i * n_blocks + a];
      if (c != 0.0) axpy(c, tmp, y.subspan(i * block, block));
    }
  }
}

void jump_apply(const TemporalMatrices& tm, const SpatialAction& mass,
                std::span<const double> v_prev, std::span<double> out) {
  const int n = tm.size();
  const std::size_t block = v_prev.size();
  require_size(out.size(), block * n, "jump_apply output");
  Vector mv(block);
  mass(v_prev, mv);
  for (int a = 0; a < n; ++a) {
    const double c = tm.C(a, tm.k);
    auto dst = out.subspan(a * block, block);
    for (std::size_t i = 0; i < block; ++i) dst[i] = c * mv[i];
  }
}

} // namespace stns
