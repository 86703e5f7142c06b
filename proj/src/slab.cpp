#include "stns/slab.hpp"

#include <cmath>

namespace stns {

SlabProblem::SlabProblem(const SpatialOperator& op, int k, double t_start, double tau,
                         int slab_index, const SpaceTimeField* forcing,
                         std::span<const double> v_prev, unsigned terms)
    : op_(&op), tm_(assemble_temporal(k, tau, slab_index)), basis_(k), t_start_(t_start),
      forcing_(forcing), terms_(terms), has_rhs_(!v_prev.empty()) {
  const int n = k + 1;
  data_states_.reserve(n);
  for (int a = 0; a < n; ++a) {
    data_states_.emplace_back(op);
    data_states_.back().update_data(node_time(a));
  }
  if (!has_rhs_) return;
  require_size(v_prev.size(), static_cast<std::size_t>(op.n_velocity()), "previous trace");
  v_prev_.assign(v_prev.begin(), v_prev.end());
  mv_prev_ = op.apply_mass(v_prev_);
  rhs_v_.assign(n, Vector(op.n_velocity()));
  rhs_p_.assign(n, Vector(op.n_pressure()));
  for (int a = 0; a < n; ++a) op.assemble_rhs(forcing, node_time(a), rhs_v_[a], rhs_p_[a], terms);
}

double SlabProblem::node_time(int a) const {
  if (a == tm_.k) return t_start_ + tm_.tau;
  return t_start_ + 0.5 * tm_.tau * (1.0 + basis_.radau().nodes[a]);
}

SlabVector residual(const SlabProblem& problem, const SlabVector& u) {
  const SpatialOperator& op = problem.op();
  const TemporalMatrices& tm = problem.temporal();
  const int n = tm.size();
  SlabVector out = problem.zeros();
  if (!out.same_shape(u)) throw ShapeError("residual: slab vector shape mismatch");
  const std::size_t nv = op.n_velocity();
  std::vector<Vector> mv(n, Vector(nv));
  Vector vel(nv);
  const unsigned terms = problem.terms() | term::mass;
  for (int a = 0; a < n; ++a) {
    auto pres = out.pressure(a);
    op.apply(terms, &problem.data_state(a), u.velocity(a), u.pressure(a), mv[a], vel, pres);
    const double w = tm.mass[a];
    auto dst = out.velocity(a);
    for (std::size_t i = 0; i < nv; ++i) dst[i] = w * vel[i];
    scale(w, pres);
    if (problem.has_rhs()) {
      axpy(-w, problem.rhs_velocity(a), dst);
      axpy(-w, problem.rhs_pressure(a), pres);
    }
  }
  for (int a = 0; a < n; ++a) {
    auto dst = out.velocity(a);
    for (int b = 0; b < n; ++b)
      if (tm.K(a, b) != 0.0) axpy(tm.K(a, b), mv[b], dst);
    if (problem.has_rhs()) axpy(-tm.C(a, tm.k), problem.mass_previous(), dst);
  }
  return out;
}

SlabJacobian::SlabJacobian(const SlabProblem& problem, const SlabVector& u) : problem_(&problem) {
  const int n = problem.k() + 1;
  states_.reserve(n);
  for (int a = 0; a < n; ++a) {
    states_.emplace_back(problem.op());
    states_.back().update(u.velocity(a), problem.node_time(a));
  }
}

void SlabJacobian::apply(const SlabVector& du, SlabVector& out) const {
  const SlabProblem& problem = *problem_;
  const SpatialOperator& op = problem.op();
  const TemporalMatrices& tm = problem.temporal();
  const int n = tm.size();
  if (!out.same_shape(du)) out = problem.zeros();
  const std::size_t nv = op.n_velocity();
  std::vector<Vector> mv(n, Vector(nv));
  Vector vel(nv);
  const unsigned terms = problem.terms() | term::mass | term::linearized;
  for (int a = 0; a < n; ++a) {
    auto pres = out.pressure(a);
    op.apply(terms, &states_[a], du.velocity(a), du.pressure(a), mv[a], vel, pres);
    const double w = tm.mass[a];
    auto dst = out.velocity(a);
    for (std::size_t i = 0; i < nv; ++i) dst[i] = w * vel[i];
    scale(w, pres);
  }
  for (int a = 0; a < n; ++a) {
    auto dst = out.velocity(a);
    for (int b = 0; b < n; ++b)
      if (tm.K(a, b) != 0.0) axpy(tm.K(a, b), mv[b], dst);
  }
}

SlabVector jacobian_action(const SlabProblem& problem, const SlabVector& u, const SlabVector& du) {
  SlabJacobian jac(problem, u);
  SlabVector out = problem.zeros();
  jac.apply(du, out);
  return out;
}

void apply_slab_mass(const SpatialOperator& op, const TemporalMatrices& tm, const SlabVector& z,
                     SlabVector& out) {
  if (!out.same_shape(z)) out = SlabVector(z.k(), z.n_velocity(), z.n_pressure());
  for (int a = 0; a < z.blocks(); ++a) {
    auto v = out.velocity(a);
    auto p = out.pressure(a);
    op.apply(term::mass | term::p_mass, nullptr, z.velocity(a), z.pressure(a), v, {}, p);
    scale(tm.mass[a], v);
    scale(tm.mass[a], p);
  }
}

double mass_inner(const SpatialOperator& op, const TemporalMatrices& tm, const SlabVector& x,
                  const SlabVector& y) {
  SlabVector my;
  apply_slab_mass(op, tm, y, my);
  return dot(x.all(), my.all());
}

double mass_norm(const SlabProblem& problem, const SlabVector& z) {
  return std::sqrt(std::max(0.0, mass_inner(problem.op(), problem.temporal(), z, z)));
}

namespace {

// Explicit spatial matrices and nonlinear terms on a small mesh.
struct DenseSpatial {
  const SpatialOperator& op;
  int nv, np, nq;
  QuadratureRule rule;
  Eigen::MatrixXd mass, visc, nitsche, div, bnd;  // div, bnd: np x nv

  explicit DenseSpatial(const SpatialOperator& o)
      : op(o), nv(o.n_velocity()), np(o.n_pressure()), nq(o.tables().nq), rule(gauss_legendre(nq)) {
    mass = Eigen::MatrixXd::Zero(nv, nv);
    visc = Eigen::MatrixXd::Zero(nv, nv);
    nitsche = Eigen::MatrixXd::Zero(nv, nv);
    div = Eigen::MatrixXd::Zero(np, nv);
    bnd = Eigen::MatrixXd::Zero(np, nv);
    const VelocitySpace& V = op.velocity();
    const PressureSpace& P = op.pressure();
    const NitscheConfig& cfg = op.config();
    const int nn = V.nodes_per_cell();
    for (int cell = 0; cell < op.mesh().n_cells(); ++cell) {
      const CellMap m = op.mesh().map(cell);
      for (int qy = 0; qy < nq; ++qy)
        for (int qx = 0; qx < nq; ++qx) {
          const Point2 ref{rule.nodes[qx], rule.nodes[qy]};
          const double jxw = rule.weights[qx] * rule.weights[qy] * m.jacobian_det();
          Vector phi, gx, gy;
          shapes(m, ref, phi, gx, gy);
          for (int i = 0; i < nn; ++i)
            for (int j = 0; j < nn; ++j)
              for (int c = 0; c < 2; ++c) {
                const int I = V.dof(cell, c * nn + i), J = V.dof(cell, c * nn + j);
                mass(I, J) += phi[i] * phi[j] * jxw;
                visc(I, J) += cfg.nu * (gx[i] * gx[j] + gy[i] * gy[j]) * jxw;
              }
          for (int l = 0; l < P.local_size(); ++l) {
            const double psi = P.shape(l, ref);
            for (int j = 0; j < nn; ++j) {
              div(P.dof(cell, l), V.dof(cell, j)) -= psi * gx[j] * jxw;
              div(P.dof(cell, l), V.dof(cell, nn + j)) -= psi * gy[j] * jxw;
            }
          }
        }
      for (int f : op.mesh().faces_of(cell)) {
        const BoundaryFace& face = op.mesh().boundary_faces()[f];
        if (face.tag != BoundaryTag::dirichlet) continue;
        const double L = face.length;
        for (int q = 0; q < nq; ++q) {
          const Point2 ref = face_ref(face.side, rule.nodes[q]);
          const double ds = rule.weights[q] * L;
          Vector phi, gx, gy;
          shapes(m, ref, phi, gx, gy);
          for (int i = 0; i < nn; ++i) {
            const double dni = gx[i] * face.normal[0] + gy[i] * face.normal[1];
            for (int j = 0; j < nn; ++j) {
              const double dnj = gx[j] * face.normal[0] + gy[j] * face.normal[1];
              for (int c = 0; c < 2; ++c)
                for (int e = 0; e < 2; ++e) {
                  const int I = V.dof(cell, c * nn + i), J = V.dof(cell, e * nn + j);
                  double val = cfg.gamma2 / cfg.h_face(L, V.degree()) * face.normal[c] * face.normal[e] * phi[i] * phi[j];
                  if (c == e)
                    val += -cfg.nu * dnj * phi[i] - cfg.nu * phi[j] * dni +
                           cfg.nu * cfg.gamma1 / cfg.h_face(L, V.degree()) * phi[i] * phi[j];
                  nitsche(I, J) += val * ds;
                }
            }
          }
          for (int l = 0; l < P.local_size(); ++l) {
            const double psi = P.shape(l, ref);
            for (int j = 0; j < nn; ++j)
              for (int e = 0; e < 2; ++e)
                bnd(P.dof(cell, l), V.dof(cell, e * nn + j)) += psi * phi[j] * face.normal[e] * ds;
          }
        }
      }
    }
  }

  static Point2 face_ref(FaceSide side, double s) {
    switch (side) {
      case FaceSide::west: return {0.0, s};
      case FaceSide::east: return {1.0, s};
      case FaceSide::south: return {s, 0.0};
      default: return {s, 1.0};
    }
  }

  static Point2 face_point(const Cell& c, const CellMap& m, FaceSide side, double s) {
    Point2 x = m.to_physical(face_ref(side, s));
    if (side == FaceSide::west) x[0] = c.lower[0];
    if (side == FaceSide::east) x[0] = c.upper[0];
    if (side == FaceSide::south) x[1] = c.lower[1];
    if (side == FaceSide::north) x[1] = c.upper[1];
    return x;
  }

  void shapes(const CellMap& m, Point2 ref, Vector& phi, Vector& gx, Vector& gy) const {
    const LagrangeBasis1D& b = op.velocity().basis();
    const int n = b.size();
    phi.resize(n * n);
    gx.resize(n * n);
    gy.resize(n * n);
    for (int bb = 0; bb < n; ++bb)
      for (int a = 0; a < n; ++a) {
        const double lx = b.value(a, ref[0]), ly = b.value(bb, ref[1]);
        phi[bb * n + a] = lx * ly;
        gx[bb * n + a] = b.derivative(a, ref[0]) * ly / m.size[0];
        gy[bb * n + a] = lx * b.derivative(bb, ref[1]) / m.size[1];
      }
  }

  // Convection H(v) and inflow term, and their derivatives.
  void nonlinear(const Eigen::VectorXd& v, double t, bool conv, bool inflow, Eigen::VectorXd& h,
                 Eigen::MatrixXd& dh) const {
    h = Eigen::VectorXd::Zero(nv);
    dh = Eigen::MatrixXd::Zero(nv, nv);
    const VelocitySpace& V = op.velocity();
    const int nn = V.nodes_per_cell();
    for (int cell = 0; cell < op.mesh().n_cells(); ++cell) {
      const CellMap m = op.mesh().map(cell);
      const Cell& cl = op.mesh().cell(cell);
      auto local = [&](const Vector& phi, int c) {
        double s = 0.0;
        for (int j = 0; j < nn; ++j) s += v(V.dof(cell, c * nn + j)) * phi[j];
        return s;
      };
      if (conv)
        for (int qy = 0; qy < nq; ++qy)
          for (int qx = 0; qx < nq; ++qx) {
            const Point2 ref{rule.nodes[qx], rule.nodes[qy]};
            const double jxw = rule.weights[qx] * rule.weights[qy] * m.jacobian_det();
            Vector phi, gx, gy;
            shapes(m, ref, phi, gx, gy);
            const double w[2] = {local(phi, 0), local(phi, 1)};
            for (int i = 0; i < nn; ++i) {
              const double gi[2] = {gx[i], gy[i]};
              const double wgi = w[0] * gi[0] + w[1] * gi[1];
              for (int c = 0; c < 2; ++c) {
                const int I = V.dof(cell, c * nn + i);
                h(I) -= w[c] * wgi * jxw;
                for (int j = 0; j < nn; ++j)
                  for (int e = 0; e < 2; ++e) {
                    const int J = V.dof(cell, e * nn + j);
                    double d = w[c] * gi[e];
                    if (c == e) d += wgi;
                    dh(I, J) -= phi[j] * d * jxw;
                  }
              }
            }
          }
      for (int f : op.mesh().faces_of(cell)) {
        const BoundaryFace& face = op.mesh().boundary_faces()[f];
        const bool dir = face.tag == BoundaryTag::dirichlet;
        if (!conv && !(inflow && dir)) continue;
        const double* n = face.normal.data();
        for (int q = 0; q < nq; ++q) {
          const Point2 ref = face_ref(face.side, rule.nodes[q]);
          const double ds = rule.weights[q] * face.length;
          Vector phi, gx, gy;
          shapes(m, ref, phi, gx, gy);
          const double w[2] = {local(phi, 0), local(phi, 1)};
          const double wn = w[0] * n[0] + w[1] * n[1];
          Point2 g{0.0, 0.0};
          if (op.dirichlet()) g = op.dirichlet()(face_point(cl, m, face.side, rule.nodes[q]), t);
          const double neg = 0.5 * (std::abs(wn) - wn);
          for (int i = 0; i < nn; ++i)
            for (int c = 0; c < 2; ++c) {
              const int I = V.dof(cell, c * nn + i);
              if (conv) h(I) += wn * w[c] * phi[i] * ds;
              if (inflow && dir) h(I) -= neg * (w[c] - g[c]) * phi[i] * ds;
              for (int j = 0; j < nn; ++j)
                for (int e = 0; e < 2; ++e) {
                  const int J = V.dof(cell, e * nn + j);
                  double d = 0.0;
                  if (conv) d += phi[j] * n[e] * w[c] + (c == e ? wn * phi[j] : 0.0);
                  if (inflow && dir) {
                    if (c == e) d -= neg * phi[j];
                    if (wn < 0.0) d += phi[j] * n[e] * (w[c] - g[c]);
                  }
                  dh(I, J) += d * phi[i] * ds;
                }
            }
        }
      }
    }
  }

  void rhs(const SpaceTimeField* forcing, double t, bool nitsche_on, bool bdiv_on,
           Eigen::VectorXd& fv, Eigen::VectorXd& fp) const {
    fv = Eigen::VectorXd::Zero(nv);
    fp = Eigen::VectorXd::Zero(np);
    const VelocitySpace& V = op.velocity();
    const PressureSpace& P = op.pressure();
    const NitscheConfig& cfg = op.config();
    const int nn = V.nodes_per_cell();
    for (int cell = 0; cell < op.mesh().n_cells(); ++cell) {
      const CellMap m = op.mesh().map(cell);
      const Cell& cl = op.mesh().cell(cell);
      if (forcing && *forcing)
        for (int qy = 0; qy < nq; ++qy)
          for (int qx = 0; qx < nq; ++qx) {
            const Point2 ref{rule.nodes[qx], rule.nodes[qy]};
            const double jxw = rule.weights[qx] * rule.weights[qy] * m.jacobian_det();
            Vector phi, gx, gy;
            shapes(m, ref, phi, gx, gy);
            const Point2 f = (*forcing)(m.to_physical(ref), t);
            for (int i = 0; i < nn; ++i)
              for (int c = 0; c < 2; ++c) fv(V.dof(cell, c * nn + i)) += f[c] * phi[i] * jxw;
          }
      if (!op.dirichlet()) continue;
      for (int f : op.mesh().faces_of(cell)) {
        const BoundaryFace& face = op.mesh().boundary_faces()[f];
        if (face.tag != BoundaryTag::dirichlet) continue;
        const double* n = face.normal.data();
        const double L = face.length;
        for (int q = 0; q < nq; ++q) {
          const Point2 ref = face_ref(face.side, rule.nodes[q]);
          const double ds = rule.weights[q] * L;
          Vector phi, gx, gy;
          shapes(m, ref, phi, gx, gy);
          const Point2 g = op.dirichlet()(face_point(cl, m, face.side, rule.nodes[q]), t);
          const double gn = g[0] * n[0] + g[1] * n[1];
          if (nitsche_on)
            for (int i = 0; i < nn; ++i) {
              const double dni = gx[i] * n[0] + gy[i] * n[1];
              for (int c = 0; c < 2; ++c)
                fv(V.dof(cell, c * nn + i)) += (cfg.nu * cfg.gamma1 / cfg.h_face(L, V.degree()) * g[c] * phi[i] +
                                                cfg.gamma2 / cfg.h_face(L, V.degree()) * gn * n[c] * phi[i] -
                                                cfg.nu * g[c] * dni) * ds;
            }
          if (bdiv_on)
            for (int l = 0; l < P.local_size(); ++l) fp(P.dof(cell, l)) += P.shape(l, ref) * gn * ds;
        }
      }
    }
  }
};

} // namespace

DenseSystem dense_oracle(const SlabProblem& problem, const SlabVector& u) {
  if (u.size() > dense_oracle_limit) throw SizeGuard("dense oracle limited to 5000 unknowns");
  const SpatialOperator& op = problem.op();
  const DenseSpatial ds(op);
  const TemporalMatrices& tm = problem.temporal();
  const int n = tm.size(), nv = ds.nv, np = ds.np;
  const unsigned t = problem.terms();
  const int N = n * (nv + np);
  DenseSystem out{Eigen::VectorXd::Zero(N), Eigen::MatrixXd::Zero(N, N)};

  Eigen::MatrixXd lin = Eigen::MatrixXd::Zero(nv, nv);
  if (t & term::viscous) lin += ds.visc;
  if (t & term::nitsche) lin += ds.nitsche;
  Eigen::MatrixXd coup = Eigen::MatrixXd::Zero(np, nv);
  if (t & term::div) coup += ds.div;
  if (t & term::boundary_div) coup += ds.bnd;
  Eigen::MatrixXd coupT = Eigen::MatrixXd::Zero(nv, np);
  if (t & term::grad_p) coupT += ds.div.transpose();
  if (t & term::boundary_p) coupT += ds.bnd.transpose();

  auto vblock = [&](int a) { return a * nv; };
  auto pblock = [&](int a) { return n * nv + a * np; };
  for (int a = 0; a < n; ++a) {
    const Eigen::VectorXd va = Eigen::Map<const Eigen::VectorXd>(u.velocity(a).data(), nv);
    const Eigen::VectorXd pa = Eigen::Map<const Eigen::VectorXd>(u.pressure(a).data(), np);
    Eigen::VectorXd h;
    Eigen::MatrixXd dh;
    ds.nonlinear(va, problem.node_time(a), (t & term::convection) != 0, (t & term::inflow) != 0, h, dh);
    const double w = tm.mass[a];
    Eigen::VectorXd rv = lin * va + coupT * pa + h;
    Eigen::VectorXd rp = coup * va;
    if (problem.has_rhs()) {
      Eigen::VectorXd fv, fp;
      ds.rhs(problem.forcing(), problem.node_time(a), (t & term::nitsche) != 0,
             (t & term::boundary_div) != 0, fv, fp);
      rv -= fv;
      rp -= fp;
    }
    out.residual.segment(vblock(a), nv) += w * rv;
    out.residual.segment(pblock(a), np) = w * rp;
    for (int b = 0; b < n; ++b) {
      const Eigen::VectorXd vb = Eigen::Map<const Eigen::VectorXd>(u.velocity(b).data(), nv);
      out.residual.segment(vblock(a), nv) += tm.K(a, b) * (ds.mass * vb);
      out.jacobian.block(vblock(a), vblock(b), nv, nv) += tm.K(a, b) * ds.mass;
    }
    if (problem.has_rhs()) {
      const Eigen::VectorXd vp =
          Eigen::Map<const Eigen::VectorXd>(problem.previous_trace().data(), nv);
      out.residual.segment(vblock(a), nv) -= tm.C(a, tm.k) * (ds.mass * vp);
    }
    out.jacobian.block(vblock(a), vblock(a), nv, nv) += w * (lin + dh);
    out.jacobian.block(vblock(a), pblock(a), nv, np) += w * coupT;
    out.jacobian.block(pblock(a), vblock(a), np, nv) += w * coup;
  }
  return out;
}

} // namespace stns
