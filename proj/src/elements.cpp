#include "stns/elements.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stns {

namespace {

// Legendre polynomial P_n and its derivative at x.
void legendre(int n, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  if (n == 0) {
    p = 1.0;
    dp = 0.0;
    return;
  }
  for (int j = 2; j <= n; ++j) {
    const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
    p0 = p1;
    p1 = p2;
  }
  p = p1;
  // P_n' from the three-term relation; at |x| = 1 use the closed form.
  if (std::abs(1.0 - x * x) < 1e-300) {
    dp = (x > 0 ? 1.0 : (n % 2 == 0 ? -1.0 : 1.0)) * 0.5 * n * (n + 1.0);
  } else {
    dp = n * (x * p1 - p0) / (x * x - 1.0);
  }
}

double legendre_value(int n, double x) {
  double p, dp;
  legendre(n, x, p, dp);
  return p;
}

} // namespace

QuadratureRule gauss_legendre_symmetric(int n) {
  if (n < 1) throw Error("Gauss-Legendre needs at least one point");
  QuadratureRule q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p, dp;
      legendre(n, x, p, dp);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p, dp;
    legendre(n, x, p, dp);
    q.nodes[n - 1 - i] = x;
    q.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  q.exactness_degree = 2 * n - 1;
  return q;
}

QuadratureRule gauss_legendre(int n) {
  QuadratureRule q = gauss_legendre_symmetric(n);
  for (int i = 0; i < n; ++i) {
    q.nodes[i] = 0.5 * (q.nodes[i] + 1.0);
    q.weights[i] *= 0.5;
  }
  return q;
}

QuadratureRule gauss_radau(int k) {
  if (k < 0) throw Error("Gauss-Radau degree must be non-negative");
  const int n = k + 1;
  // Left-sided rule first: x = -1 plus the roots of (P_k + P_{k+1}) / (1 + x).
  Vector left{-1.0};
  if (k > 0) {
    auto f = [k](double x) { return legendre_value(k, x) + legendre_value(k + 1, x); };
    const int samples = 20000;
    double xa = -1.0 + 1e-10, fa = f(xa);
    for (int s = 1; s <= samples && static_cast<int>(left.size()) < n; ++s) {
      const double xb = -1.0 + 2.0 * s / samples;
      const double fb = f(xb);
      if (fb == 0.0) {
        left.push_back(xb);
      } else if ((fa < 0) != (fb < 0)) {
        double lo = xa, hi = xb, flo = fa;
        for (int it = 0; it < 200 && hi - lo > 1e-17; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double fm = f(mid);
          if ((fm < 0) == (flo < 0)) {
            lo = mid;
            flo = fm;
          } else {
            hi = mid;
          }
        }
        left.push_back(0.5 * (lo + hi));
      }
      xa = xb;
      fa = fb;
    }
    if (static_cast<int>(left.size()) != n) throw Error("Gauss-Radau root search failed");
  }
  QuadratureRule q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const double kk = (k + 1.0) * (k + 1.0);
  for (int i = 0; i < n; ++i) {
    const double x = left[i];
    double w;
    if (i == 0) {
      w = 2.0 / kk;
    } else {
      const double pk = legendre_value(k, x);
      w = (1.0 - x) / (kk * pk * pk);
    }
    q.nodes[n - 1 - i] = -x;
    q.weights[n - 1 - i] = w;
  }
  q.nodes[n - 1] = 1.0;
  q.exactness_degree = 2 * k;
  return q;
}

Vector gauss_lobatto_nodes(int n) {
  if (n < 2) throw Error("Gauss-Lobatto needs at least two points");
  Vector x(n);
  const int m = n - 1;  // interior nodes are the roots of P_m'
  x[0] = -1.0;
  x[m] = 1.0;
  for (int i = 1; i < m; ++i) {
    double t = -std::cos(std::numbers::pi * i / m);
    for (int it = 0; it < 100; ++it) {
      double p, dp;
      legendre(m, t, p, dp);
      const double d2p = (2.0 * t * dp - m * (m + 1.0) * p) / (1.0 - t * t);
      const double dt = dp / d2p;
      t -= dt;
      if (std::abs(dt) < 1e-16) break;
    }
    x[i] = t;
  }
  // Symmetrize and map to [0,1].
  Vector out(n);
  for (int i = 0; i < n; ++i) out[i] = 0.5 * (1.0 + 0.5 * (x[i] - x[m - i]));
  out[0] = 0.0;
  out[m] = 1.0;
  return out;
}

TensorRule tensorize(const QuadratureRule& rule) {
  TensorRule t;
  const int n = rule.size();
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      t.points.push_back({rule.nodes[i], rule.nodes[j]});
      t.weights.push_back(rule.weights[i] * rule.weights[j]);
    }
  t.exactness_degree = rule.exactness_degree;
  return t;
}

LagrangeBasis1D::LagrangeBasis1D(Vector nodes) : nodes_(std::move(nodes)) {
  const int n = size();
  denom_.assign(n, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i) denom_[i] *= nodes_[i] - nodes_[j];
}

double LagrangeBasis1D::value(int i, double x) const {
  double v = 1.0;
  for (int j = 0; j < size(); ++j)
    if (j != i) v *= x - nodes_[j];
  return v / denom_[i];
}

double LagrangeBasis1D::derivative(int i, double x) const {
  double s = 0.0;
  for (int m = 0; m < size(); ++m) {
    if (m == i) continue;
    double v = 1.0;
    for (int j = 0; j < size(); ++j)
      if (j != i && j != m) v *= x - nodes_[j];
    s += v;
  }
  return s / denom_[i];
}

void LagrangeBasis1D::values(double x, std::span<double> out) const {
  for (int i = 0; i < size(); ++i) out[i] = value(i, x);
}

void LagrangeBasis1D::derivatives(double x, std::span<double> out) const {
  for (int i = 0; i < size(); ++i) out[i] = derivative(i, x);
}

TemporalBasis::TemporalBasis(int k) : k_(k), radau_(gauss_radau(k)), lagrange_(radau_.nodes) {}

VelocitySpace::VelocitySpace(const MeshLevel& mesh, int r)
    : mesh_(&mesh), r_(r), basis_(gauss_lobatto_nodes(r + 2)) {
  if (r < 1) throw Error("velocity space needs r >= 1");
  const int p = degree();
  const int n = mesh.cells_per_dim();
  const int grid = n * p + 1;
  std::vector<int> id_of(static_cast<std::size_t>(grid) * grid, -1);
  const int npc = nodes_per_cell();
  cell_nodes_.resize(static_cast<std::size_t>(mesh.n_cells()) * npc);
  const Vector& ref = basis_.nodes();
  for (int c = 0; c < mesh.n_cells(); ++c) {
    const Cell& cell = mesh.cell(c);
    const CellMap m = mesh.map(c);
    for (int b = 0; b < n1(); ++b)
      for (int a = 0; a < n1(); ++a) {
        const int gi = cell.ix * p + a, gj = cell.iy * p + b;
        int& id = id_of[static_cast<std::size_t>(gj) * grid + gi];
        if (id < 0) {
          id = static_cast<int>(points_.size());
          // Endpoint nodes take the exact cell corner coordinates.
          Point2 x = m.to_physical({ref[a], ref[b]});
          if (a == 0) x[0] = cell.lower[0];
          if (a == n1() - 1) x[0] = cell.upper[0];
          if (b == 0) x[1] = cell.lower[1];
          if (b == n1() - 1) x[1] = cell.upper[1];
          points_.push_back(x);
          if (gi == 0 || gj == 0 || gi == grid - 1 || gj == grid - 1) {
            boundary_dofs_.push_back(2 * id);
            boundary_dofs_.push_back(2 * id + 1);
          }
        }
        cell_nodes_[static_cast<std::size_t>(c) * npc + b * n1() + a] = id;
      }
  }
}

Vector VelocitySpace::interpolate(const VectorField& f) const {
  Vector v(n_dofs());
  for (int m = 0; m < n_nodes(); ++m) {
    const Point2 val = f(points_[m]);
    v[2 * m] = val[0];
    v[2 * m + 1] = val[1];
  }
  return v;
}

int VelocitySpace::locate(Point2 x, Point2& ref) const {
  const MeshLevel& mesh = *mesh_;
  const int n = mesh.cells_per_dim();
  const Cell& c0 = mesh.cell(0);
  int ix = static_cast<int>(std::floor((x[0] - c0.lower[0]) / mesh.hx()));
  int iy = static_cast<int>(std::floor((x[1] - c0.lower[1]) / mesh.hy()));
  ix = std::clamp(ix, 0, n - 1);
  iy = std::clamp(iy, 0, n - 1);
  const int id = mesh.cell_index(ix, iy);
  ref = mesh.map(id).to_reference(x);
  return id;
}

Point2 VelocitySpace::evaluate(std::span<const double> v, Point2 x) const {
  Point2 val;
  std::array<std::array<double, 2>, 2> g;
  evaluate_with_gradient(v, x, val, g);
  return val;
}

void VelocitySpace::evaluate_with_gradient(std::span<const double> v, Point2 x, Point2& value,
                                           std::array<std::array<double, 2>, 2>& grad) const {
  require_size(v.size(), static_cast<std::size_t>(n_dofs()), "velocity evaluate");
  Point2 ref;
  const int cell = locate(x, ref);
  const CellMap m = mesh_->map(cell);
  const Point2 inv = m.inverse_scale();
  const int n = n1();
  Vector lx(n), ly(n), dx(n), dy(n);
  basis_.values(ref[0], lx);
  basis_.values(ref[1], ly);
  basis_.derivatives(ref[0], dx);
  basis_.derivatives(ref[1], dy);
  value = {0.0, 0.0};
  grad = {};
  const auto nodes = cell_nodes(cell);
  for (int b = 0; b < n; ++b)
    for (int a = 0; a < n; ++a) {
      const int node = nodes[b * n + a];
      const double phi = lx[a] * ly[b];
      const double gx = dx[a] * ly[b] * inv[0];
      const double gy = lx[a] * dy[b] * inv[1];
      for (int c = 0; c < 2; ++c) {
        const double coef = v[2 * node + c];
        value[c] += coef * phi;
        grad[c][0] += coef * gx;
        grad[c][1] += coef * gy;
      }
    }
}

PressureSpace::PressureSpace(const MeshLevel& mesh, int r)
    : mesh_(&mesh), r_(r), dim_((r + 1) * (r + 2) / 2) {
  if (r < 0) throw Error("pressure degree must be non-negative");
  for (int d = 0; d <= r; ++d)
    for (int j = 0; j <= d; ++j) exps_.push_back({d - j, j});
}

double PressureSpace::shape(int l, Point2 ref) const {
  const auto [i, j] = exps_[l];
  return std::pow(ref[0], i) * std::pow(ref[1], j);
}

Point2 PressureSpace::shape_gradient_ref(int l, Point2 ref) const {
  const auto [i, j] = exps_[l];
  const double gx = i == 0 ? 0.0 : i * std::pow(ref[0], i - 1) * std::pow(ref[1], j);
  const double gy = j == 0 ? 0.0 : j * std::pow(ref[0], i) * std::pow(ref[1], j - 1);
  return {gx, gy};
}

Vector PressureSpace::constant() const {
  Vector p(n_dofs(), 0.0);
  for (int c = 0; c < mesh_->n_cells(); ++c) p[dof(c, 0)] = 1.0;
  return p;
}

Vector PressureSpace::interpolate(const ScalarField& f) const {
  const TensorRule q = tensorize(gauss_legendre(r_ + 3));
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(dim_, dim_);
  Vector shp(static_cast<std::size_t>(dim_) * q.points.size());
  for (std::size_t iq = 0; iq < q.points.size(); ++iq)
    for (int l = 0; l < dim_; ++l) shp[iq * dim_ + l] = shape(l, q.points[iq]);
  for (std::size_t iq = 0; iq < q.points.size(); ++iq)
    for (int l = 0; l < dim_; ++l)
      for (int m = 0; m < dim_; ++m)
        mass(l, m) += q.weights[iq] * shp[iq * dim_ + l] * shp[iq * dim_ + m];
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(mass);
  Vector p(n_dofs());
  for (int c = 0; c < mesh_->n_cells(); ++c) {
    const CellMap m = mesh_->map(c);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim_);
    for (std::size_t iq = 0; iq < q.points.size(); ++iq) {
      const double fv = f(m.to_physical(q.points[iq]));
      for (int l = 0; l < dim_; ++l) rhs(l) += q.weights[iq] * fv * shp[iq * dim_ + l];
    }
    const Eigen::VectorXd sol = ldlt.solve(rhs);
    for (int l = 0; l < dim_; ++l) p[dof(c, l)] = sol(l);
  }
  return p;
}

double PressureSpace::evaluate_in_cell(std::span<const double> p, int cell, Point2 ref) const {
  double s = 0.0;
  for (int l = 0; l < dim_; ++l) s += p[dof(cell, l)] * shape(l, ref);
  return s;
}

double PressureSpace::evaluate(std::span<const double> p, Point2 x) const {
  require_size(p.size(), static_cast<std::size_t>(n_dofs()), "pressure evaluate");
  const MeshLevel& mesh = *mesh_;
  const int n = mesh.cells_per_dim();
  const Cell& c0 = mesh.cell(0);
  const int ix = std::clamp(static_cast<int>(std::floor((x[0] - c0.lower[0]) / mesh.hx())), 0, n - 1);
  const int iy = std::clamp(static_cast<int>(std::floor((x[1] - c0.lower[1]) / mesh.hy())), 0, n - 1);
  const int id = mesh.cell_index(ix, iy);
  return evaluate_in_cell(p, id, mesh.map(id).to_reference(x));
}

ShapeTables shape_tables(const VelocitySpace& vel, const PressureSpace& pres,
                         const QuadratureRule& rule) {
  ShapeTables t;
  t.n1 = vel.n1();
  t.nq = rule.size();
  t.np = pres.local_size();
  t.rule = rule;
  const LagrangeBasis1D& b = vel.basis();
  t.value.resize(static_cast<std::size_t>(t.nq) * t.n1);
  t.grad.resize(t.value.size());
  for (int q = 0; q < t.nq; ++q)
    for (int a = 0; a < t.n1; ++a) {
      t.value[q * t.n1 + a] = b.value(a, rule.nodes[q]);
      t.grad[q * t.n1 + a] = b.derivative(a, rule.nodes[q]);
    }
  for (int e = 0; e < 2; ++e) {
    t.end_value[e].resize(t.n1);
    t.end_grad[e].resize(t.n1);
    for (int a = 0; a < t.n1; ++a) {
      t.end_value[e][a] = b.value(a, static_cast<double>(e));
      t.end_grad[e][a] = b.derivative(a, static_cast<double>(e));
    }
  }
  const int nq = t.nq;
  t.pressure.resize(static_cast<std::size_t>(t.np) * nq * nq);
  for (int l = 0; l < t.np; ++l)
    for (int qy = 0; qy < nq; ++qy)
      for (int qx = 0; qx < nq; ++qx)
        t.pressure[(static_cast<std::size_t>(l) * nq + qy) * nq + qx] =
            pres.shape(l, {rule.nodes[qx], rule.nodes[qy]});
  for (int side = 0; side < 4; ++side) {
    t.pressure_face[side].resize(static_cast<std::size_t>(t.np) * nq);
    for (int l = 0; l < t.np; ++l)
      for (int q = 0; q < nq; ++q) {
        const double s = rule.nodes[q];
        Point2 ref;
        switch (side) {
          case 0: ref = {0.0, s}; break;
          case 1: ref = {1.0, s}; break;
          case 2: ref = {s, 0.0}; break;
          default: ref = {s, 1.0}; break;
        }
        t.pressure_face[side][l * nq + q] = pres.shape(l, ref);
      }
  }
  return t;
}

} // namespace stns
