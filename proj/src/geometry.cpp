#include "stns/geometry.hpp"

#include <cmath>
#include <string>

namespace stns {

MeshLevel::MeshLevel(const Rectangle& domain, int cells_per_dim, const FaceTagger& tagger)
    : n_(cells_per_dim), hx_(domain.width() / cells_per_dim),
      hy_(domain.height() / cells_per_dim) {
  const int n = n_;
  cells_.resize(static_cast<std::size_t>(n) * n);
  // Corner coordinates are computed from integer indices so that shared
  // vertices of neighbouring cells and nested levels agree bitwise.
  auto xcoord = [&](int i) { return domain.lower[0] + domain.width() * i / n; };
  auto ycoord = [&](int j) { return domain.lower[1] + domain.height() * j / n; };
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      Cell& c = cells_[cell_index(ix, iy)];
      c.ix = ix;
      c.iy = iy;
      c.lower = {xcoord(ix), ycoord(iy)};
      c.upper = {xcoord(ix + 1), ycoord(iy + 1)};
    }
  vertices_.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) vertices_.push_back({xcoord(i), ycoord(j)});

  face_offsets_.assign(cells_.size() + 1, 0);
  for (int id = 0; id < n_cells(); ++id) {
    const Cell& c = cells_[id];
    auto add = [&](FaceSide side, Point2 normal, double length, Point2 mid) {
      faces_.push_back({id, side, tagger(c.ix, c.iy, side, mid), normal, length});
      face_ids_.push_back(static_cast<int>(faces_.size()) - 1);
    };
    const double xm = 0.5 * (c.lower[0] + c.upper[0]);
    const double ym = 0.5 * (c.lower[1] + c.upper[1]);
    if (c.ix == 0) add(FaceSide::west, {-1.0, 0.0}, hy_, {c.lower[0], ym});
    if (c.ix == n - 1) add(FaceSide::east, {1.0, 0.0}, hy_, {c.upper[0], ym});
    if (c.iy == 0) add(FaceSide::south, {0.0, -1.0}, hx_, {xm, c.lower[1]});
    if (c.iy == n - 1) add(FaceSide::north, {0.0, 1.0}, hx_, {xm, c.upper[1]});
    face_offsets_[id + 1] = static_cast<int>(face_ids_.size());
  }
}

const Cell& MeshLevel::cell(int id) const {
  if (id < 0 || id >= n_cells()) throw InvalidId("cell id " + std::to_string(id) + " out of range");
  return cells_[id];
}

CellMap MeshLevel::map(int id) const {
  const Cell& c = cell(id);
  return {c.lower, {c.upper[0] - c.lower[0], c.upper[1] - c.lower[1]}};
}

std::span<const int> MeshLevel::faces_of(int id) const {
  return {face_ids_.data() + face_offsets_[id],
          static_cast<std::size_t>(face_offsets_[id + 1] - face_offsets_[id])};
}

bool MeshLevel::has_dirichlet() const {
  for (const auto& f : faces_)
    if (f.tag == BoundaryTag::dirichlet) return true;
  return false;
}

bool MeshLevel::all_dirichlet() const {
  for (const auto& f : faces_)
    if (f.tag != BoundaryTag::dirichlet) return false;
  return true;
}

const MeshLevel& MeshHierarchy::level(int s) const {
  if (s < 0 || s >= n_levels()) throw InvalidId("mesh level " + std::to_string(s) + " out of range");
  return levels_[s];
}

void MeshHierarchy::link(MeshLevel& coarse, MeshLevel& fine) {
  for (int id = 0; id < fine.n_cells(); ++id) {
    Cell& c = fine.cells_[id];
    const int pid = coarse.cell_index(c.ix / 2, c.iy / 2);
    c.parent = pid;
    coarse.cells_[pid].children[(c.ix & 1) + 2 * (c.iy & 1)] = id;
  }
}

int MeshHierarchy::coarse_parent(int s, int cell) const {
  if (s == 0) throw InvalidId("level 0 cells have no parent");
  return level(s).cell(cell).parent;
}

std::array<int, 2> MeshHierarchy::quadrant(int s, int cell) const {
  const Cell& c = level(s).cell(cell);
  if (s == 0) throw InvalidId("level 0 cells have no parent");
  return {c.ix & 1, c.iy & 1};
}

MeshHierarchy build_hierarchy(std::span<const double> lower, std::span<const double> upper,
                              int base_cells_per_dim, int levels, const BoundaryRule& rule) {
  if (lower.size() != 2 || upper.size() != 2)
    throw InvalidDomain("only two-dimensional rectangles are supported");
  if (!(upper[0] > lower[0]) || !(upper[1] > lower[1]))
    throw InvalidDomain("rectangle must have positive extents");
  if (levels < 1 || base_cells_per_dim < 1)
    throw InvalidDomain("need at least one level and one base cell");

  MeshHierarchy mh;
  mh.domain_ = {{lower[0], lower[1]}, {upper[0], upper[1]}};
  mh.levels_.reserve(levels);
  mh.levels_.emplace_back(mh.domain_, base_cells_per_dim,
                          [&](int, int, FaceSide, Point2 mid) { return rule(mid); });
  for (int s = 1; s < levels; ++s) {
    const MeshLevel& coarse = mh.levels_.back();
    // Children inherit the tag of the parent face they lie on.
    auto inherit = [&coarse](int ix, int iy, FaceSide side, Point2) {
      const int pid = coarse.cell_index(ix / 2, iy / 2);
      for (int f : coarse.faces_of(pid))
        if (coarse.boundary_faces()[f].side == side) return coarse.boundary_faces()[f].tag;
      throw Error("boundary face without parent face");
    };
    MeshLevel fine(mh.domain_, 2 * coarse.cells_per_dim(), inherit);
    mh.levels_.push_back(std::move(fine));
    MeshHierarchy::link(mh.levels_[s - 1], mh.levels_[s]);
  }
  return mh;
}

TimePartition build_time_partition(double t_end, int n_slabs) {
  if (n_slabs < 1) throw InvalidPartition("need at least one time slab");
  if (!(t_end > 0.0)) throw InvalidPartition("end time must be positive");
  TimePartition tp{t_end, n_slabs, {}};
  tp.endpoints.resize(n_slabs + 1);
  for (int n = 0; n <= n_slabs; ++n) tp.endpoints[n] = n * t_end / n_slabs;
  tp.endpoints.back() = t_end;
  return tp;
}

} // namespace stns
