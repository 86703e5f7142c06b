#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stns/common.hpp"

namespace stns {

using Point2 = std::array<double, 2>;

enum class BoundaryTag : std::uint8_t { dirichlet, neumann };

// Local face numbering on the reference square: 0 = x-, 1 = x+, 2 = y-, 3 = y+.
enum class FaceSide : std::uint8_t { west = 0, east = 1, south = 2, north = 3 };

struct Rectangle {
  Point2 lower{0.0, 0.0};
  Point2 upper{1.0, 1.0};
  double width() const { return upper[0] - lower[0]; }
  double height() const { return upper[1] - lower[1]; }
};

// Affine map from [0,1]^2 onto an axis-aligned cell.
struct CellMap {
  Point2 origin;
  Point2 size;

  Point2 to_physical(Point2 ref) const {
    return {origin[0] + size[0] * ref[0], origin[1] + size[1] * ref[1]};
  }
  Point2 to_reference(Point2 x) const {
    return {(x[0] - origin[0]) / size[0], (x[1] - origin[1]) / size[1]};
  }
  double jacobian_det() const { return size[0] * size[1]; }
  // Diagonal of the inverse-transpose Jacobian.
  Point2 inverse_scale() const { return {1.0 / size[0], 1.0 / size[1]}; }
};

struct Cell {
  int ix = 0, iy = 0;
  Point2 lower;
  Point2 upper;
  int parent = -1;
  std::array<int, 4> children{-1, -1, -1, -1};
};

struct BoundaryFace {
  int cell;
  FaceSide side;
  BoundaryTag tag;
  Point2 normal;
  double length;
};

class MeshLevel {
public:
  using FaceTagger = std::function<BoundaryTag(int ix, int iy, FaceSide side, Point2 midpoint)>;
  MeshLevel(const Rectangle& domain, int cells_per_dim, const FaceTagger& tagger);

  int cells_per_dim() const { return n_; }
  int n_cells() const { return n_ * n_; }
  double hx() const { return hx_; }
  double hy() const { return hy_; }
  double h() const { return hx_ > hy_ ? hx_ : hy_; }
  int cell_index(int ix, int iy) const { return iy * n_ + ix; }
  const Cell& cell(int id) const;
  const std::vector<Cell>& cells() const { return cells_; }
  CellMap map(int id) const;
  const std::vector<Point2>& vertices() const { return vertices_; }
  const std::vector<BoundaryFace>& boundary_faces() const { return faces_; }
  // Indices into boundary_faces() for each cell (empty for interior cells).
  std::span<const int> faces_of(int id) const;
  bool has_dirichlet() const;
  bool all_dirichlet() const;

  // Four-color partition: cells of one color share no vertex.
  int color(int id) const { return (cells_[id].ix & 1) + 2 * (cells_[id].iy & 1); }

private:
  friend class MeshHierarchy;
  int n_;
  double hx_, hy_;
  std::vector<Cell> cells_;
  std::vector<Point2> vertices_;
  std::vector<BoundaryFace> faces_;
  std::vector<int> face_offsets_;
  std::vector<int> face_ids_;
};

using BoundaryRule = std::function<BoundaryTag(Point2 face_midpoint)>;

class MeshHierarchy {
public:
  const Rectangle& domain() const { return domain_; }
  int n_levels() const { return static_cast<int>(levels_.size()); }
  const MeshLevel& level(int s) const;
  const MeshLevel& finest() const { return levels_.back(); }
  int coarse_parent(int s, int cell) const;
  // Quadrant (qx, qy) of a child cell inside its parent.
  std::array<int, 2> quadrant(int s, int cell) const;

private:
  friend MeshHierarchy build_hierarchy(std::span<const double>, std::span<const double>, int,
                                       int, const BoundaryRule&);
  static void link(MeshLevel& coarse, MeshLevel& fine);
  Rectangle domain_;
  std::vector<MeshLevel> levels_;
};

MeshHierarchy build_hierarchy(std::span<const double> lower, std::span<const double> upper,
                              int base_cells_per_dim, int levels, const BoundaryRule& rule);

inline BoundaryRule all_dirichlet() {
  return [](Point2) { return BoundaryTag::dirichlet; };
}

struct TimePartition {
  double t_end;
  int n_slabs;
  std::vector<double> endpoints;
  double tau(int n) const { return endpoints.at(n) - endpoints.at(n - 1); }
};

TimePartition build_time_partition(double t_end, int n_slabs);

} // namespace stns
