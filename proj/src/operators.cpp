#include "stns/operators.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace stns {

void NitscheConfig::validate() const {
  if (!(nu > 0.0)) throw Error("viscosity must be positive");
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0)) throw Error("Nitsche penalties must be positive");
}

namespace {

// Values of one scalar field at the tensor quadrature points, and optionally
// the two reference derivatives. u is [b][a] with n1 entries per row.
void interpolate_cell(const ShapeTables& t, const double* u, double* val, double* dx, double* dy,
                      double* w0, double* w1) {
  const int n = t.n1, Q = t.nq;
  const double* N = t.value.data();
  const double* D = t.grad.data();
  for (int b = 0; b < n; ++b)
    for (int qx = 0; qx < Q; ++qx) {
      double s0 = 0.0, s1 = 0.0;
      for (int a = 0; a < n; ++a) {
        s0 += N[qx * n + a] * u[b * n + a];
        s1 += D[qx * n + a] * u[b * n + a];
      }
      w0[b * Q + qx] = s0;
      w1[b * Q + qx] = s1;
    }
  for (int qy = 0; qy < Q; ++qy)
    for (int qx = 0; qx < Q; ++qx) {
      double v = 0.0, gx = 0.0, gy = 0.0;
      for (int b = 0; b < n; ++b) {
        v += N[qy * n + b] * w0[b * Q + qx];
        gx += N[qy * n + b] * w1[b * Q + qx];
        gy += D[qy * n + b] * w0[b * Q + qx];
      }
      val[qy * Q + qx] = v;
      if (dx) {
        dx[qy * Q + qx] = gx;
        dy[qy * Q + qx] = gy;
      }
    }
}

// Transpose of interpolate_cell: out[b][a] += sum_q (N N f0 + N D fx + D N fy).
void integrate_cell(const ShapeTables& t, const double* f0, const double* fx, const double* fy,
                    double* out, double* w0, double* w1) {
  const int n = t.n1, Q = t.nq;
  const double* N = t.value.data();
  const double* D = t.grad.data();
  for (int b = 0; b < n; ++b)
    for (int qx = 0; qx < Q; ++qx) {
      double s0 = 0.0, s1 = 0.0;
      for (int qy = 0; qy < Q; ++qy) {
        const int q = qy * Q + qx;
        s0 += N[qy * n + b] * f0[q];
        if (fx) {
          s0 += D[qy * n + b] * fy[q];
          s1 += N[qy * n + b] * fx[q];
        }
      }
      w0[b * Q + qx] = s0;
      w1[b * Q + qx] = s1;
    }
  for (int b = 0; b < n; ++b)
    for (int a = 0; a < n; ++a) {
      double s = 0.0;
      for (int qx = 0; qx < Q; ++qx) {
        s += N[qx * n + a] * w0[b * Q + qx];
        if (fx) s += D[qx * n + a] * w1[b * Q + qx];
      }
      out[b * n + a] += s;
    }
}

bool vertical(FaceSide s) { return s == FaceSide::west || s == FaceSide::east; }
int end_index(FaceSide s) { return (s == FaceSide::east || s == FaceSide::north) ? 1 : 0; }

// Trace value and reference normal-direction derivative on a face.
void face_trace(const ShapeTables& t, FaceSide side, const double* u, double* val, double* dn) {
  const int n = t.n1, Q = t.nq;
  const double* N = t.value.data();
  const double* e = t.end_value[end_index(side)].data();
  const double* d = t.end_grad[end_index(side)].data();
  double te[8], td[8];
  const bool vert = vertical(side);
  for (int i = 0; i < n; ++i) {
    double se = 0.0, sd = 0.0;
    for (int j = 0; j < n; ++j) {
      // vertical faces: contract over a (x index) with j; i is b
      const double uij = vert ? u[i * n + j] : u[j * n + i];
      se += e[j] * uij;
      sd += d[j] * uij;
    }
    te[i] = se;
    td[i] = sd;
  }
  for (int q = 0; q < Q; ++q) {
    double v = 0.0, g = 0.0;
    for (int i = 0; i < n; ++i) {
      v += N[q * n + i] * te[i];
      g += N[q * n + i] * td[i];
    }
    val[q] = v;
    if (dn) dn[q] = g;
  }
}

void face_integrate(const ShapeTables& t, FaceSide side, const double* f0, const double* fn,
                    double* out) {
  const int n = t.n1, Q = t.nq;
  const double* N = t.value.data();
  const double* e = t.end_value[end_index(side)].data();
  const double* d = t.end_grad[end_index(side)].data();
  const bool vert = vertical(side);
  for (int i = 0; i < n; ++i) {
    double s0 = 0.0, s1 = 0.0;
    for (int q = 0; q < Q; ++q) {
      s0 += N[q * n + i] * f0[q];
      if (fn) s1 += N[q * n + i] * fn[q];
    }
    for (int j = 0; j < n; ++j) {
      const double c = e[j] * s0 + (fn ? d[j] * s1 : 0.0);
      if (vert)
        out[i * n + j] += c;
      else
        out[j * n + i] += c;
    }
  }
}

constexpr int max_q = 16;

} // namespace

SpatialState::SpatialState(const SpatialOperator& op) : op_(&op) {}

void SpatialState::update_data(double t) {
  const ShapeTables& tb = op_->tables_;
  const MeshLevel& mesh = op_->mesh();
  const int Q = tb.nq;
  const auto& faces = mesh.boundary_faces();
  face_data_.assign(faces.size() * 2 * Q, 0.0);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const CellMap m = mesh.map(faces[f].cell);
    for (int q = 0; q < Q; ++q) {
      const double s = tb.rule.nodes[q];
      Point2 ref;
      switch (faces[f].side) {
        case FaceSide::west: ref = {0.0, s}; break;
        case FaceSide::east: ref = {1.0, s}; break;
        case FaceSide::south: ref = {s, 0.0}; break;
        default: ref = {s, 1.0}; break;
      }
      Point2 x = m.to_physical(ref);
      // Snap the face coordinate to the exact boundary value.
      const Cell& c = mesh.cell(faces[f].cell);
      if (faces[f].side == FaceSide::west) x[0] = c.lower[0];
      if (faces[f].side == FaceSide::east) x[0] = c.upper[0];
      if (faces[f].side == FaceSide::south) x[1] = c.lower[1];
      if (faces[f].side == FaceSide::north) x[1] = c.upper[1];
      const Point2 g = op_->dirichlet_ ? op_->dirichlet_(x, t) : Point2{0.0, 0.0};
      face_data_[(f * 2 + 0) * Q + q] = g[0];
      face_data_[(f * 2 + 1) * Q + q] = g[1];
    }
  }
  time_ = t;
  has_velocity_ = false;
  ++version_;
}

void SpatialState::update(std::span<const double> v, double t) {
  require_size(v.size(), static_cast<std::size_t>(op_->n_velocity()), "state velocity");
  update_data(t);
  velocity_.assign(v.begin(), v.end());
  const ShapeTables& tb = op_->tables_;
  const MeshLevel& mesh = op_->mesh();
  const int Q = tb.nq, n = tb.n1, nn = n * n;
  const std::size_t per_cell = 2 * static_cast<std::size_t>(Q) * Q;
  volume_.assign(per_cell * mesh.n_cells(), 0.0);
  const auto& faces = mesh.boundary_faces();
  face_velocity_.assign(faces.size() * 2 * Q, 0.0);
  Vector loc(2 * nn), w0(n * Q), w1(n * Q);
  for (int c = 0; c < mesh.n_cells(); ++c) {
    const auto nodes = op_->velocity().cell_nodes(c);
    for (int i = 0; i < nn; ++i) {
      loc[i] = v[2 * nodes[i]];
      loc[nn + i] = v[2 * nodes[i] + 1];
    }
    for (int comp = 0; comp < 2; ++comp)
      interpolate_cell(tb, loc.data() + comp * nn,
                       volume_.data() + c * per_cell + comp * Q * Q, nullptr, nullptr, w0.data(),
                       w1.data());
    for (int f : mesh.faces_of(c))
      for (int comp = 0; comp < 2; ++comp)
        face_trace(tb, faces[f].side, loc.data() + comp * nn,
                   face_velocity_.data() + (f * 2 + comp) * Q, nullptr);
  }
  has_velocity_ = true;
}

std::span<const double> SpatialState::volume(int cell) const {
  const std::size_t per = 2 * static_cast<std::size_t>(op_->tables_.nq) * op_->tables_.nq;
  return {volume_.data() + cell * per, per};
}

std::span<const double> SpatialState::face_velocity(int f) const {
  const std::size_t per = 2 * static_cast<std::size_t>(op_->tables_.nq);
  return {face_velocity_.data() + f * per, per};
}

std::span<const double> SpatialState::face_data(int f) const {
  const std::size_t per = 2 * static_cast<std::size_t>(op_->tables_.nq);
  return {face_data_.data() + f * per, per};
}

SpatialOperator::SpatialOperator(const VelocitySpace& vel, const PressureSpace& pres,
                                 NitscheConfig cfg, SpaceTimeField dirichlet, int quad_points)
    : vel_(&vel), pres_(&pres), cfg_(cfg), dirichlet_(std::move(dirichlet)) {
  cfg_.validate();
  if (&vel.mesh() != &pres.mesh()) throw Error("velocity and pressure spaces on different meshes");
  const int nq = quad_points > 0 ? quad_points : vel.r() + 2;
  if (nq > max_q || vel.n1() > 8) throw Error("degree too high for the cell kernel");
  tables_ = shape_tables(vel, pres, gauss_legendre(nq));
  for (int c = 0; c < mesh().n_cells(); ++c) color_cells_[mesh().color(c)].push_back(c);
}

void SpatialOperator::gather(int cell, std::span<const double> v, std::span<const double> p,
                             std::span<double> v_local, std::span<double> p_local) const {
  const auto nodes = vel_->cell_nodes(cell);
  const int nn = vel_->nodes_per_cell();
  if (!v.empty())
    for (int i = 0; i < nn; ++i) {
      v_local[i] = v[2 * nodes[i]];
      v_local[nn + i] = v[2 * nodes[i] + 1];
    }
  if (!p.empty()) {
    const int np = pres_->local_size();
    for (int l = 0; l < np; ++l) p_local[l] = p[static_cast<std::size_t>(cell) * np + l];
  }
}

void SpatialOperator::scatter_add(int cell, std::span<const double> local,
                                  std::span<double> global) const {
  const auto nodes = vel_->cell_nodes(cell);
  const int nn = vel_->nodes_per_cell();
  for (int i = 0; i < nn; ++i) {
    global[2 * nodes[i]] += local[i];
    global[2 * nodes[i] + 1] += local[nn + i];
  }
}

void SpatialOperator::cell_apply(unsigned terms, const SpatialState* state, int cell,
                                 std::span<const double> v_local,
                                 std::span<const double> p_local, std::span<double> mass_local,
                                 std::span<double> vel_local, std::span<double> pres_local,
                                 KernelScratch& s, double nu_override) const {
  const ShapeTables& tb = tables_;
  const int n = tb.n1, nn = n * n, Q = tb.nq, QQ = Q * Q, np = tb.np;
  const double nu = nu_override >= 0.0 ? nu_override : cfg_.nu;
  const bool lin = (terms & term::linearized) != 0;
  const bool want_mass = (terms & term::mass) && !mass_local.empty();
  const bool want_vel = !vel_local.empty();
  const bool want_pres = !pres_local.empty();
  if ((terms & (term::convection | term::inflow)) && lin && !(state && state->has_velocity()))
    throw Error("linearized convection requires a velocity state");
  if ((terms & term::inflow) && !state) throw Error("inflow term requires Dirichlet data state");

  const CellMap map = mesh().map(cell);
  const double hx = map.size[0], hy = map.size[1];
  const double ihx = 1.0 / hx, ihy = 1.0 / hy;

  s.work.resize(static_cast<std::size_t>(20) * QQ + 4 * n * Q + 8 * Q);
  double* val = s.work.data();      // [2][QQ]
  double* gx = val + 2 * QQ;        // [2][QQ]
  double* gy = gx + 2 * QQ;         // [2][QQ]
  double* f0 = gy + 2 * QQ;         // [2][QQ]
  double* fx = f0 + 2 * QQ;         // [2][QQ]
  double* fy = fx + 2 * QQ;         // [2][QQ]
  double* m0 = fy + 2 * QQ;         // [2][QQ]
  double* pq = m0 + 2 * QQ;         // [QQ]
  double* gp = pq + QQ;             // [QQ]
  double* w0 = gp + QQ;             // [n*Q]
  double* w1 = w0 + n * Q;

  if (want_mass) std::fill(mass_local.begin(), mass_local.end(), 0.0);
  if (want_vel) std::fill(vel_local.begin(), vel_local.end(), 0.0);
  if (want_pres) std::fill(pres_local.begin(), pres_local.end(), 0.0);

  const bool need_grad = (terms & (term::viscous | term::div)) != 0;
  const bool need_p = (terms & (term::grad_p | term::p_mass | term::boundary_p)) != 0;
  const bool vol_vel_terms =
      want_vel && (terms & (term::viscous | term::grad_p | term::convection));
  const bool vol_pres_terms = want_pres && (terms & (term::div | term::p_mass));

  if (want_mass || vol_vel_terms || vol_pres_terms) {
    for (int c = 0; c < 2; ++c)
      interpolate_cell(tb, v_local.data() + c * nn, val + c * QQ,
                       need_grad ? gx + c * QQ : nullptr, need_grad ? gy + c * QQ : nullptr, w0, w1);
    if (need_p)
      for (int q = 0; q < QQ; ++q) {
        double sum = 0.0;
        for (int l = 0; l < np; ++l) sum += p_local[l] * tb.pressure[static_cast<std::size_t>(l) * QQ + q];
        pq[q] = sum;
      }
    const double* wstate = lin && (terms & term::convection) ? state->volume(cell).data() : nullptr;
    for (int qy = 0; qy < Q; ++qy)
      for (int qx = 0; qx < Q; ++qx) {
        const int q = qy * Q + qx;
        const double jxw = tb.rule.weights[qx] * tb.rule.weights[qy] * hx * hy;
        const double v0 = val[q], v1 = val[QQ + q];
        double a00 = 0, a01 = 0, a10 = 0, a11 = 0;  // flux on d_d z_c, [c][d]
        double pf = 0.0;
        if (need_grad) {
          const double g00 = gx[q] * ihx, g01 = gy[q] * ihy;
          const double g10 = gx[QQ + q] * ihx, g11 = gy[QQ + q] * ihy;
          if (terms & term::viscous) {
            a00 += nu * g00;
            a01 += nu * g01;
            a10 += nu * g10;
            a11 += nu * g11;
          }
          if (terms & term::div) pf -= g00 + g11;
        }
        if (terms & term::grad_p) {
          a00 -= pq[q];
          a11 -= pq[q];
        }
        if (terms & term::p_mass) pf += pq[q];
        if (terms & term::convection) {
          if (lin) {
            const double w0s = wstate[q], w1s = wstate[QQ + q];
            a00 -= 2.0 * v0 * w0s;
            a01 -= v0 * w1s + w0s * v1;
            a10 -= v1 * w0s + w1s * v0;
            a11 -= 2.0 * v1 * w1s;
          } else {
            a00 -= v0 * v0;
            a01 -= v0 * v1;
            a10 -= v1 * v0;
            a11 -= v1 * v1;
          }
        }
        f0[q] = 0.0;
        f0[QQ + q] = 0.0;
        fx[q] = a00 * jxw * ihx;
        fy[q] = a01 * jxw * ihy;
        fx[QQ + q] = a10 * jxw * ihx;
        fy[QQ + q] = a11 * jxw * ihy;
        gp[q] = pf * jxw;
        m0[q] = v0 * jxw;
        m0[QQ + q] = v1 * jxw;
      }
    if (want_mass)
      for (int c = 0; c < 2; ++c)
        integrate_cell(tb, m0 + c * QQ, nullptr, nullptr, mass_local.data() + c * nn, w0, w1);
    if (vol_vel_terms)
      for (int c = 0; c < 2; ++c)
        integrate_cell(tb, f0 + c * QQ, fx + c * QQ, fy + c * QQ, vel_local.data() + c * nn, w0, w1);
    if (vol_pres_terms)
      for (int l = 0; l < np; ++l) {
        double sum = 0.0;
        const double* psi = tb.pressure.data() + static_cast<std::size_t>(l) * QQ;
        for (int q = 0; q < QQ; ++q) sum += psi[q] * gp[q];
        pres_local[l] += sum;
      }
  }

  const unsigned face_vel = term::nitsche | term::boundary_p | term::convection | term::inflow;
  const unsigned face_pres = term::boundary_div;
  const bool do_face_vel = want_vel && (terms & face_vel);
  const bool do_face_pres = want_pres && (terms & face_pres);
  if (!(do_face_vel || do_face_pres)) return;

  const auto& faces = mesh().boundary_faces();
  double fv[2][max_q], fdn[2][max_q], fp[max_q], r0[2][max_q], rn[2][max_q], rp[max_q];
  for (int f : mesh().faces_of(cell)) {
    const BoundaryFace& face = faces[f];
    const bool dir = face.tag == BoundaryTag::dirichlet;
    const unsigned active = dir ? terms : (terms & term::convection);
    if (!(active & (face_vel | face_pres))) continue;
    const int side = static_cast<int>(face.side);
    const double nx = face.normal[0], ny = face.normal[1];
    const double L = face.length;
    // Physical normal derivative = n_dir * reference derivative / h_dir.
    const double dscale = vertical(face.side) ? nx * ihx : ny * ihy;
    const bool need_dn = (active & term::nitsche) != 0;
    for (int c = 0; c < 2; ++c) face_trace(tb, face.side, v_local.data() + c * nn, fv[c], fdn[c]);
    if (active & term::boundary_p)
      for (int q = 0; q < Q; ++q) {
        double sum = 0.0;
        for (int l = 0; l < np; ++l) sum += p_local[l] * tb.pressure_face[side][l * Q + q];
        fp[q] = sum;
      }
    const double* ws = (lin && (active & (term::convection | term::inflow)))
                           ? state->face_velocity(f).data() : nullptr;
    const double* gs = (active & term::inflow) ? state->face_data(f).data() : nullptr;
    for (int q = 0; q < Q; ++q) {
      const double ds = tb.rule.weights[q] * L;
      const double v0 = fv[0][q], v1 = fv[1][q];
      const double vn = v0 * nx + v1 * ny;
      double b0 = 0, b1 = 0, bn0 = 0, bn1 = 0, bp = 0;
      if (active & term::nitsche) {
        const double dn0 = fdn[0][q] * dscale, dn1 = fdn[1][q] * dscale;
        const double hf = cfg_.h_face(L, vel_->degree());
        const double pen = nu * cfg_.gamma1 / hf, pen_n = cfg_.gamma2 / hf;
        b0 += -nu * dn0 + pen * v0 + pen_n * vn * nx;
        b1 += -nu * dn1 + pen * v1 + pen_n * vn * ny;
        bn0 += -nu * v0;
        bn1 += -nu * v1;
      }
      if (active & term::boundary_p) {
        b0 += fp[q] * nx;
        b1 += fp[q] * ny;
      }
      if (active & term::boundary_div) bp += vn;
      if (active & term::convection) {
        if (lin) {
          const double w0s = ws[q], w1s = ws[Q + q];
          const double wn = w0s * nx + w1s * ny;
          b0 += vn * w0s + wn * v0;
          b1 += vn * w1s + wn * v1;
        } else {
          b0 += vn * v0;
          b1 += vn * v1;
        }
      }
      if (active & term::inflow) {
        const double g0 = gs[q], g1 = gs[Q + q];
        if (lin) {
          const double w0s = ws[q], w1s = ws[Q + q];
          const double wn = w0s * nx + w1s * ny;
          const double neg = 0.5 * (std::abs(wn) - wn);
          b0 -= neg * v0;
          b1 -= neg * v1;
          if (wn < 0.0) {
            b0 += vn * (w0s - g0);
            b1 += vn * (w1s - g1);
          }
        } else {
          const double neg = 0.5 * (std::abs(vn) - vn);
          b0 -= neg * (v0 - g0);
          b1 -= neg * (v1 - g1);
        }
      }
      r0[0][q] = b0 * ds;
      r0[1][q] = b1 * ds;
      rn[0][q] = bn0 * ds * dscale;
      rn[1][q] = bn1 * ds * dscale;
      rp[q] = bp * ds;
    }
    if (do_face_vel && (active & face_vel))
      for (int c = 0; c < 2; ++c)
        face_integrate(tb, face.side, r0[c], need_dn ? rn[c] : nullptr, vel_local.data() + c * nn);
    if (do_face_pres && (active & face_pres))
      for (int l = 0; l < np; ++l) {
        double sum = 0.0;
        for (int q = 0; q < Q; ++q) sum += tb.pressure_face[side][l * Q + q] * rp[q];
        pres_local[l] += sum;
      }
  }
}

namespace {
struct Outputs {
  std::span<double> mass, vel, pres;
};
} // namespace

void SpatialOperator::apply(unsigned terms, const SpatialState* state, std::span<const double> v,
                            std::span<const double> p, std::span<double> mass_out,
                            std::span<double> vel_out, std::span<double> pres_out,
                            double nu) const {
  if (parallel::serial()) {
    apply_serial(terms, state, v, p, mass_out, vel_out, pres_out, nu);
    return;
  }
  const std::size_t nv = n_velocity(), npg = n_pressure();
  if (!v.empty()) require_size(v.size(), nv, "velocity input");
  if (!p.empty()) require_size(p.size(), npg, "pressure input");
  if (!mass_out.empty()) require_size(mass_out.size(), nv, "mass output");
  if (!vel_out.empty()) require_size(vel_out.size(), nv, "velocity output");
  if (!pres_out.empty()) require_size(pres_out.size(), npg, "pressure output");
  fill(mass_out, 0.0);
  fill(vel_out, 0.0);
  fill(pres_out, 0.0);
  const int nl = vel_->local_size(), np = pres_->local_size();
  const Vector zero_v(nl, 0.0), zero_p(np, 0.0);
  // Cells of one color share no velocity node, so scatters within a color
  // never collide and the summation order is fixed.
  for (int color = 0; color < 4; ++color) {
    const auto& cells = color_cells_[color];
    const int ncells = static_cast<int>(cells.size());
#pragma omp parallel num_threads(parallel::threads()) if (ncells > 1)
    {
      KernelScratch s;
      s.v_in.resize(nl);
      s.p_in.resize(np);
      s.mass_out.resize(nl);
      s.vel_out.resize(nl);
      s.pres_out.resize(np);
#pragma omp for schedule(static)
      for (int i = 0; i < ncells; ++i) {
        const int cell = cells[i];
        if (v.empty())
          std::fill(s.v_in.begin(), s.v_in.end(), 0.0);
        if (p.empty())
          std::fill(s.p_in.begin(), s.p_in.end(), 0.0);
        gather(cell, v, p, s.v_in, s.p_in);
        cell_apply(terms, state, cell, s.v_in, s.p_in,
                   mass_out.empty() ? std::span<double>{} : std::span<double>(s.mass_out),
                   vel_out.empty() ? std::span<double>{} : std::span<double>(s.vel_out),
                   pres_out.empty() ? std::span<double>{} : std::span<double>(s.pres_out), s, nu);
        if (!mass_out.empty()) scatter_add(cell, s.mass_out, mass_out);
        if (!vel_out.empty()) scatter_add(cell, s.vel_out, vel_out);
        if (!pres_out.empty())
          std::copy(s.pres_out.begin(), s.pres_out.end(),
                    pres_out.begin() + static_cast<std::ptrdiff_t>(cell) * np);
      }
    }
  }
}

void SpatialOperator::apply_serial(unsigned terms, const SpatialState* state,
                                   std::span<const double> v, std::span<const double> p,
                                   std::span<double> mass_out, std::span<double> vel_out,
                                   std::span<double> pres_out, double nu) const {
  const std::size_t nv = n_velocity(), npg = n_pressure();
  if (!v.empty()) require_size(v.size(), nv, "velocity input");
  if (!p.empty()) require_size(p.size(), npg, "pressure input");
  if (!mass_out.empty()) require_size(mass_out.size(), nv, "mass output");
  if (!vel_out.empty()) require_size(vel_out.size(), nv, "velocity output");
  if (!pres_out.empty()) require_size(pres_out.size(), npg, "pressure output");
  fill(mass_out, 0.0);
  fill(vel_out, 0.0);
  fill(pres_out, 0.0);
  const int nl = vel_->local_size(), np = pres_->local_size();
  KernelScratch s;
  s.v_in.assign(nl, 0.0);
  s.p_in.assign(np, 0.0);
  s.mass_out.resize(nl);
  s.vel_out.resize(nl);
  s.pres_out.resize(np);
  for (int cell = 0; cell < mesh().n_cells(); ++cell) {
    gather(cell, v, p, s.v_in, s.p_in);
    cell_apply(terms, state, cell, s.v_in, s.p_in,
               mass_out.empty() ? std::span<double>{} : std::span<double>(s.mass_out),
               vel_out.empty() ? std::span<double>{} : std::span<double>(s.vel_out),
               pres_out.empty() ? std::span<double>{} : std::span<double>(s.pres_out), s, nu);
    if (!mass_out.empty()) scatter_add(cell, s.mass_out, mass_out);
    if (!vel_out.empty()) scatter_add(cell, s.vel_out, vel_out);
    if (!pres_out.empty())
      std::copy(s.pres_out.begin(), s.pres_out.end(),
                pres_out.begin() + static_cast<std::ptrdiff_t>(cell) * np);
  }
}

Vector SpatialOperator::apply_mass(std::span<const double> v) const {
  Vector out(n_velocity());
  apply(term::mass, nullptr, v, {}, out, {}, {});
  return out;
}

Vector SpatialOperator::apply_stiffness(std::span<const double> v) const {
  Vector out(n_velocity());
  apply(term::viscous, nullptr, v, {}, {}, out, {}, 1.0);
  return out;
}

Vector SpatialOperator::apply_div(std::span<const double> v) const {
  Vector out(n_pressure());
  apply(term::div, nullptr, v, {}, {}, {}, out);
  return out;
}

Vector SpatialOperator::apply_div_transpose(std::span<const double> p) const {
  Vector out(n_velocity());
  apply(term::grad_p, nullptr, {}, p, {}, out, {});
  return out;
}

Vector SpatialOperator::apply_pressure_mass(std::span<const double> p) const {
  Vector out(n_pressure());
  apply(term::p_mass, nullptr, {}, p, {}, {}, out);
  return out;
}

Vector SpatialOperator::apply_nitsche_velocity(std::span<const double> v) const {
  Vector out(n_velocity());
  apply(term::nitsche, nullptr, v, {}, {}, out, {});
  return out;
}

Vector SpatialOperator::apply_pressure_boundary(std::span<const double> p) const {
  Vector out(n_velocity());
  apply(term::boundary_p, nullptr, {}, p, {}, out, {});
  return out;
}

Vector SpatialOperator::apply_pressure_boundary_transpose(std::span<const double> v) const {
  Vector out(n_pressure());
  apply(term::boundary_div, nullptr, v, {}, {}, {}, out);
  return out;
}

Vector SpatialOperator::convection(const SpatialState& state) const {
  Vector out(n_velocity());
  apply(term::convection, &state, state.velocity(), {}, {}, out, {});
  return out;
}

Vector SpatialOperator::convection_boundary_nitsche(const SpatialState& state) const {
  Vector out(n_velocity());
  apply(term::inflow, &state, state.velocity(), {}, {}, out, {});
  return out;
}

Vector SpatialOperator::convection_jacobian_action(const SpatialState& state,
                                                   std::span<const double> vhat) const {
  Vector out(n_velocity());
  apply(term::convection | term::linearized, &state, vhat, {}, {}, out, {});
  return out;
}

void SpatialOperator::assemble_rhs(const SpaceTimeField* forcing, double t,
                                   std::span<double> vel_rhs, std::span<double> pres_rhs,
                                   unsigned terms) const {
  require_size(vel_rhs.size(), static_cast<std::size_t>(n_velocity()), "velocity rhs");
  require_size(pres_rhs.size(), static_cast<std::size_t>(n_pressure()), "pressure rhs");
  fill(vel_rhs, 0.0);
  fill(pres_rhs, 0.0);
  const ShapeTables& tb = tables_;
  const int n = tb.n1, nn = n * n, Q = tb.nq, QQ = Q * Q, np = tb.np;
  Vector local(2 * nn), w0(n * Q), w1(n * Q), f0(2 * QQ);
  if (forcing && *forcing) {
    for (int cell = 0; cell < mesh().n_cells(); ++cell) {
      const CellMap m = mesh().map(cell);
      for (int qy = 0; qy < Q; ++qy)
        for (int qx = 0; qx < Q; ++qx) {
          const int q = qy * Q + qx;
          const double jxw = tb.rule.weights[qx] * tb.rule.weights[qy] * m.jacobian_det();
          const Point2 f = (*forcing)(m.to_physical({tb.rule.nodes[qx], tb.rule.nodes[qy]}), t);
          f0[q] = f[0] * jxw;
          f0[QQ + q] = f[1] * jxw;
        }
      std::fill(local.begin(), local.end(), 0.0);
      for (int c = 0; c < 2; ++c)
        integrate_cell(tb, f0.data() + c * QQ, nullptr, nullptr, local.data() + c * nn, w0.data(),
                       w1.data());
      scatter_add(cell, local, vel_rhs);
    }
  }
  if (!dirichlet_ || !(terms & (term::nitsche | term::boundary_div))) return;
  const bool nit = (terms & term::nitsche) != 0, bdiv = (terms & term::boundary_div) != 0;
  SpatialState data(*this);
  data.update_data(t);
  const auto& faces = mesh().boundary_faces();
  const double nu = cfg_.nu;
  double r0[2][max_q], rn[2][max_q];
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const BoundaryFace& face = faces[f];
    if (face.tag != BoundaryTag::dirichlet) continue;
    const CellMap m = mesh().map(face.cell);
    const double nx = face.normal[0], ny = face.normal[1], L = face.length;
    const double dscale = vertical(face.side) ? nx / m.size[0] : ny / m.size[1];
    const auto g = data.face_data(static_cast<int>(f));
    const int side = static_cast<int>(face.side);
    for (int q = 0; q < Q; ++q) {
      const double ds = tb.rule.weights[q] * L;
      const double g0 = g[q], g1 = g[Q + q];
      const double gn = g0 * nx + g1 * ny;
      const double hf = cfg_.h_face(L, vel_->degree());
        const double pen = nu * cfg_.gamma1 / hf, pen_n = cfg_.gamma2 / hf;
      const double on = nit ? 1.0 : 0.0;
      r0[0][q] = on * (pen * g0 + pen_n * gn * nx) * ds;
      r0[1][q] = on * (pen * g1 + pen_n * gn * ny) * ds;
      rn[0][q] = -on * nu * g0 * ds * dscale;
      rn[1][q] = -on * nu * g1 * ds * dscale;
      if (bdiv)
        for (int l = 0; l < np; ++l)
        pres_rhs[static_cast<std::size_t>(face.cell) * np + l] +=
            tb.pressure_face[side][l * Q + q] * gn * ds;
    }
    std::fill(local.begin(), local.end(), 0.0);
    for (int c = 0; c < 2; ++c) face_integrate(tb, face.side, r0[c], rn[c], local.data() + c * nn);
    scatter_add(face.cell, local, vel_rhs);
  }
}

} // namespace stns
