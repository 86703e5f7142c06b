#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>

#include "stns/bench.hpp"

namespace {

using namespace stns;

struct Setup {
  MeshHierarchy mesh;
  VelocitySpace vel;
  PressureSpace pres;
  SpatialOperator op;
  SpatialState state;
  Vector v, p;

  Setup(int c, int r)
      : mesh(make(c)), vel(mesh.finest(), r), pres(mesh.finest(), r),
        op(vel, pres, NitscheConfig{1e-2, 10.0, 10.0}, ManufacturedCase{}.dirichlet_field()),
        state(op), v(vel.interpolate([](Point2 x) {
          return Point2{std::sin(3 * x[0]) * x[1], std::cos(2 * x[1]) * x[0]};
        })),
        p(op.n_pressure(), 0.5) {
    state.update(v, 0.3);
  }
  static MeshHierarchy make(int c) {
    const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
    return build_hierarchy(lo, hi, 1, c + 1, all_dirichlet());
  }
};

// Full Navier-Stokes spatial action on a 16x16 mesh, degree from the range.
template <bool serial>
void spatial_apply(benchmark::State& bs) {
  const Setup s(4, static_cast<int>(bs.range(0)));
  Vector mv(s.op.n_velocity()), av(s.op.n_velocity()), ap(s.op.n_pressure());
  const unsigned terms = term::mass | term::navier_stokes | term::linearized;
  for (auto _ : bs) {
    if constexpr (serial)
      s.op.apply_serial(terms, &s.state, s.v, s.p, mv, av, ap);
    else
      s.op.apply(terms, &s.state, s.v, s.p, mv, av, ap);
    benchmark::DoNotOptimize(av.data());
  }
  bs.counters["dofs"] = static_cast<double>(s.op.n_velocity() + s.op.n_pressure());
}

// Slab Jacobian action with k = r; parallel::set_serial selects the path.
template <bool serial>
void slab_jacobian(benchmark::State& bs) {
  const int r = static_cast<int>(bs.range(0));
  const Setup s(3, r);
  const SlabProblem prob(s.op, r, 0.0, 0.125, 1, nullptr, s.v);
  SlabVector u = prob.zeros();
  for (int a = 0; a <= r; ++a) std::copy(s.v.begin(), s.v.end(), u.velocity(a).begin());
  const SlabJacobian jac(prob, u);
  SlabVector out = prob.zeros();
  parallel::set_serial(serial);
  for (auto _ : bs) {
    jac.apply(u, out);
    benchmark::DoNotOptimize(out.all().data());
  }
  parallel::set_serial(false);
}

BENCHMARK(spatial_apply<true>)->Name("spatial_apply/serial")->DenseRange(1, 4)->Unit(benchmark::kMicrosecond);
BENCHMARK(spatial_apply<false>)->Name("spatial_apply/openmp")->DenseRange(1, 4)->Unit(benchmark::kMicrosecond);
BENCHMARK(slab_jacobian<true>)->Name("slab_jacobian/serial")->DenseRange(1, 3)->Unit(benchmark::kMicrosecond);
BENCHMARK(slab_jacobian<false>)->Name("slab_jacobian/openmp")->DenseRange(1, 3)->Unit(benchmark::kMicrosecond);

} // namespace

BENCHMARK_MAIN();
