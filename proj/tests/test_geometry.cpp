#include "doctest.h"

#include <cmath>
#include <set>

#include "stns/geometry.hpp"

using namespace stns;

namespace {
MeshHierarchy unit(int base, int levels, BoundaryRule rule = all_dirichlet()) {
  const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
  return build_hierarchy(lo, hi, base, levels, rule);
}
} // namespace

TEST_CASE("hierarchy cell counts and mesh size") {
  const auto mh = unit(1, 3);
  CHECK(mh.finest().n_cells() == 16);
  CHECK(mh.finest().h() == doctest::Approx(0.25));
  const auto deep = unit(1, 6);
  CHECK(deep.finest().h() == std::ldexp(1.0, -5));
  for (int s = 1; s < deep.n_levels(); ++s) {
    CHECK(deep.level(s).n_cells() == 4 * deep.level(s - 1).n_cells());
    CHECK(deep.level(s).h() == doctest::Approx(deep.level(s - 1).h() / 2).epsilon(1e-15));
  }
}

TEST_CASE("three-dimensional or degenerate domains are rejected") {
  const double lo3[3] = {0, 0, 0}, hi3[3] = {1, 1, 1};
  CHECK_THROWS_AS(build_hierarchy(lo3, hi3, 1, 2, all_dirichlet()), InvalidDomain);
  const double lo[2] = {0, 0}, flat[2] = {1, 0};
  CHECK_THROWS_AS(build_hierarchy(lo, flat, 1, 2, all_dirichlet()), InvalidDomain);
}

TEST_CASE("parents cover children exactly") {
  const auto mh = unit(1, 4);
  for (int s = 1; s < mh.n_levels(); ++s) {
    const MeshLevel& fine = mh.level(s);
    const MeshLevel& coarse = mh.level(s - 1);
    for (int p = 0; p < coarse.n_cells(); ++p) {
      const Cell& pc = coarse.cell(p);
      std::set<std::pair<int, int>> quads;
      double area = 0.0;
      for (int child : pc.children) {
        REQUIRE(child >= 0);
        CHECK(mh.coarse_parent(s, child) == p);
        const auto q = mh.quadrant(s, child);
        quads.insert({q[0], q[1]});
        const Cell& cc = fine.cell(child);
        area += (cc.upper[0] - cc.lower[0]) * (cc.upper[1] - cc.lower[1]);
        CHECK(cc.lower[0] >= pc.lower[0]);
        CHECK(cc.upper[1] <= pc.upper[1]);
      }
      CHECK(quads.size() == 4);
      CHECK(std::abs(area - (pc.upper[0] - pc.lower[0]) * (pc.upper[1] - pc.lower[1])) < 1e-15);
    }
  }
  CHECK_THROWS_AS(mh.coarse_parent(0, 0), InvalidId);
  CHECK_THROWS_AS(mh.coarse_parent(1, 99), InvalidId);
}

TEST_CASE("boundary tags are inherited by child faces") {
  auto lid = [](Point2 m) { return m[1] > 0.999 ? BoundaryTag::neumann : BoundaryTag::dirichlet; };
  const auto mh = unit(1, 3, lid);
  for (int s = 1; s < mh.n_levels(); ++s) {
    const MeshLevel& fine = mh.level(s);
    const MeshLevel& coarse = mh.level(s - 1);
    for (const auto& f : fine.boundary_faces()) {
      const int p = mh.coarse_parent(s, f.cell);
      bool found = false;
      for (int pf : coarse.faces_of(p))
        if (coarse.boundary_faces()[pf].side == f.side) {
          found = true;
          CHECK(coarse.boundary_faces()[pf].tag == f.tag);
        }
      CHECK(found);
    }
  }
  CHECK(mh.finest().boundary_faces().size() == 16);
}

TEST_CASE("uniform cells and affine maps") {
  const auto mh = unit(2, 2);
  const MeshLevel& m = mh.finest();
  for (int c = 0; c < m.n_cells(); ++c) {
    const CellMap map = m.map(c);
    CHECK(map.jacobian_det() > 0);
    const Cell& cell = m.cell(c);
    const Point2 lo = map.to_physical({0, 0}), hi = map.to_physical({1, 1});
    CHECK(lo[0] == cell.lower[0]);
    CHECK(lo[1] == cell.lower[1]);
    CHECK(hi[0] == doctest::Approx(cell.upper[0]).epsilon(1e-15));
    CHECK(map.size[0] == doctest::Approx(m.hx()));
  }
}

TEST_CASE("cells of one color share no vertex") {
  const auto mh = unit(1, 3);
  const MeshLevel& m = mh.finest();
  for (int a = 0; a < m.n_cells(); ++a)
    for (int b = a + 1; b < m.n_cells(); ++b)
      if (m.color(a) == m.color(b)) {
        const Cell& ca = m.cell(a);
        const Cell& cb = m.cell(b);
        CHECK((std::abs(ca.ix - cb.ix) >= 2 || std::abs(ca.iy - cb.iy) >= 2));
      }
}

TEST_CASE("time partitions") {
  const auto tp = build_time_partition(1.0, 2);
  CHECK(tp.endpoints == std::vector<double>{0.0, 0.5, 1.0});
  const auto fine = build_time_partition(1.0, 32);
  for (int n = 1; n <= 32; ++n) CHECK(fine.tau(n) == 1.0 / 32);
  const auto cavity = build_time_partition(8.0, 16);
  for (int n = 1; n <= 16; ++n) CHECK(cavity.tau(n) == 0.5);
  CHECK_THROWS_AS(build_time_partition(1.0, 0), InvalidPartition);
}
