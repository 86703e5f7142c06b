#include "stns/stmg.hpp"

#include <algorithm>
#include <cmath>
#include <omp.h>

namespace stns {

namespace {

// Number of halvings from d down to 1.
int height(int d) {
  int h = 0;
  while (d > 1) {
    d = std::max(1, d / 2);
    ++h;
  }
  return h;
}

int halve(int d) { return std::max(1, d / 2); }

Point2 clamp_ref(Point2 x) { return {std::clamp(x[0], 0.0, 1.0), std::clamp(x[1], 0.0, 1.0)}; }

CsrMatrix compress(int rows, int cols, std::vector<std::vector<std::pair<int, double>>>& entries) {
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  for (int i = 0; i < rows; ++i) {
    auto& row = entries[i];
    std::sort(row.begin(), row.end());
    m.row_ptr[i + 1] = m.row_ptr[i] + static_cast<int>(row.size());
  }
  m.col.reserve(m.row_ptr[rows]);
  m.val.reserve(m.row_ptr[rows]);
  for (auto& row : entries)
    for (auto [c, v] : row) {
      m.col.push_back(c);
      m.val.push_back(v);
    }
  return m;
}

int level_index(const MeshHierarchy& mh, const MeshLevel& m) {
  for (int s = 0; s < mh.n_levels(); ++s)
    if (&mh.level(s) == &m) return s;
  throw InvalidId("mesh level is not part of the hierarchy");
}

} // namespace

LevelSchedule build_schedule(LevelSpec finest, bool coarsen_time) {
  if (finest.k < 1 || finest.r < 1 || finest.s < 0) throw Error("schedule needs k, r >= 1 and s >= 0");
  LevelSchedule out;
  LevelSpec cur = finest;
  out.levels.push_back(cur);
  while ((coarsen_time && cur.k > 1) || cur.r > 1) {
    const int hk = coarsen_time ? height(cur.k) : 0, hr = height(cur.r);
    if (hr > hk)
      cur.r = halve(cur.r);
    else if (hk > hr)
      cur.k = halve(cur.k);
    else {
      cur.k = halve(cur.k);
      cur.r = halve(cur.r);
    }
    out.levels.push_back(cur);
    out.transfers.push_back(TransferKind::polynomial);
  }
  while (cur.s > 0) {
    --cur.s;
    out.levels.push_back(cur);
    out.transfers.push_back(TransferKind::geometric);
  }
  return out;
}

void CsrMatrix::apply(std::span<const double> x, std::span<double> y) const {
  require_size(x.size(), static_cast<std::size_t>(cols), "csr input");
  require_size(y.size(), static_cast<std::size_t>(rows), "csr output");
#pragma omp parallel for schedule(static) if (!parallel::serial())
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int j = row_ptr[i]; j < row_ptr[i + 1]; ++j) s += val[j] * x[col[j]];
    y[i] = s;
  }
}

void CsrMatrix::apply_transpose(std::span<const double> x, std::span<double> y) const {
  require_size(x.size(), static_cast<std::size_t>(rows), "csr input");
  require_size(y.size(), static_cast<std::size_t>(cols), "csr output");
  std::fill(y.begin(), y.end(), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = row_ptr[i]; j < row_ptr[i + 1]; ++j) y[col[j]] += val[j] * x[i];
}

CsrMatrix velocity_interpolation(const VelocitySpace& from, const VelocitySpace& to, const CellLocator& locate) {
  const int n1t = to.n1(), n1f = from.n1();
  std::vector<std::vector<std::pair<int, double>>> rows(to.n_dofs());
  std::vector<char> done(to.n_nodes(), 0);
  Vector lx(n1f), ly(n1f);
  for (int tc = 0; tc < to.mesh().n_cells(); ++tc) {
    const CellMap tmap = to.mesh().map(tc);
    const auto tnodes = to.cell_nodes(tc);
    for (int b = 0; b < n1t; ++b)
      for (int a = 0; a < n1t; ++a) {
        const int node = tnodes[b * n1t + a];
        if (done[node]) continue;
        done[node] = 1;
        const Point2 tref{to.basis().nodes()[a], to.basis().nodes()[b]};
        const int fc = locate(tc, tref);
        const Point2 fref = clamp_ref(from.mesh().map(fc).to_reference(tmap.to_physical(tref)));
        from.basis().values(fref[0], lx);
        from.basis().values(fref[1], ly);
        const auto fnodes = from.cell_nodes(fc);
        for (int j = 0; j < n1f; ++j)
          for (int i = 0; i < n1f; ++i) {
            const double w = lx[i] * ly[j];
            if (std::abs(w) < 1e-15) continue;
            for (int c = 0; c < 2; ++c) rows[2 * node + c].emplace_back(2 * fnodes[j * n1f + i] + c, w);
          }
      }
  }
  return compress(to.n_dofs(), from.n_dofs(), rows);
}

CsrMatrix pressure_projection(const PressureSpace& from, const PressureSpace& to, const CellLocator& locate) {
  const int nt = to.local_size(), nf = from.local_size();
  const auto rule = tensorize(gauss_legendre(std::max(to.r(), from.r()) + 2));
  std::vector<std::vector<std::pair<int, double>>> rows(to.n_dofs());
  Eigen::MatrixXd mass = Eigen::MatrixXd::Zero(nt, nt);
  for (std::size_t q = 0; q < rule.points.size(); ++q)
    for (int i = 0; i < nt; ++i)
      for (int j = 0; j < nt; ++j)
        mass(i, j) += rule.weights[q] * to.shape(i, rule.points[q]) * to.shape(j, rule.points[q]);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(mass);
  for (int tc = 0; tc < to.mesh().n_cells(); ++tc) {
    const CellMap tmap = to.mesh().map(tc);
    const int fc = locate(tc, {0.5, 0.5});
    const CellMap fmap = from.mesh().map(fc);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nt, nf);
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const Point2 fref = fmap.to_reference(tmap.to_physical(rule.points[q]));
      for (int i = 0; i < nt; ++i)
        for (int j = 0; j < nf; ++j)
          rhs(i, j) += rule.weights[q] * to.shape(i, rule.points[q]) * from.shape(j, fref);
    }
    const Eigen::MatrixXd local = ldlt.solve(rhs);
    for (int i = 0; i < nt; ++i)
      for (int j = 0; j < nf; ++j)
        if (std::abs(local(i, j)) > 1e-15) rows[to.dof(tc, i)].emplace_back(from.dof(fc, j), local(i, j));
  }
  return compress(to.n_dofs(), from.n_dofs(), rows);
}

SlabTransfer::SlabTransfer(const MeshHierarchy& mesh, const VelocitySpace& fine_v, const PressureSpace& fine_p,
                           int fine_k, const VelocitySpace& coarse_v, const PressureSpace& coarse_p,
                           int coarse_k)
    : kf_(fine_k), kc_(coarse_k) {
  const bool same_mesh = &fine_v.mesh() == &coarse_v.mesh();
  CellLocator parent, child;
  if (same_mesh) {
    parent = [](int c, Point2) { return c; };
    child = parent;
  } else {
    const int sf = level_index(mesh, fine_v.mesh());
    if (sf == 0 || &mesh.level(sf - 1) != &coarse_v.mesh()) throw InvalidId("transfer levels are not consecutive");
    parent = [&mesh, sf](int c, Point2) { return mesh.coarse_parent(sf, c); };
    child = [&mesh, sf](int c, Point2 ref) {
      const int qx = ref[0] >= 0.5 ? 1 : 0, qy = ref[1] >= 0.5 ? 1 : 0;
      for (int ch : mesh.level(sf - 1).cell(c).children) {
        const auto q = mesh.quadrant(sf, ch);
        if (q[0] == qx && q[1] == qy) return ch;
      }
      throw InvalidId("child quadrant not found");
    };
  }
  pv_ = velocity_interpolation(coarse_v, fine_v, parent);
  pp_ = pressure_projection(coarse_p, fine_p, parent);
  state_v_ = velocity_interpolation(fine_v, coarse_v, child);

  const TemporalBasis bf(kf_), bc(kc_);
  time_prolong_.resize(static_cast<std::size_t>(kf_ + 1) * (kc_ + 1));
  time_state_.resize(time_prolong_.size());
  for (int a = 0; a <= kf_; ++a)
    for (int b = 0; b <= kc_; ++b) time_prolong_[a * (kc_ + 1) + b] = kf_ == kc_ ? (a == b) : bc.value(b, bf.radau().nodes[a]);
  for (int a = 0; a <= kc_; ++a)
    for (int b = 0; b <= kf_; ++b) time_state_[a * (kf_ + 1) + b] = kf_ == kc_ ? (a == b) : bf.value(b, bc.radau().nodes[a]);
}

void SlabTransfer::prolong(const SlabVector& coarse, SlabVector& fine) const {
  if (coarse.k() != kc_ || coarse.n_velocity() != pv_.cols || coarse.n_pressure() != pp_.cols)
    throw ShapeError("prolong: coarse vector does not match the level");
  if (fine.k() != kf_ || fine.n_velocity() != pv_.rows || fine.n_pressure() != pp_.rows)
    fine = SlabVector(kf_, pv_.rows, pp_.rows);
  std::vector<Vector> v(kc_ + 1, Vector(pv_.rows)), p(kc_ + 1, Vector(pp_.rows));
  for (int b = 0; b <= kc_; ++b) {
    pv_.apply(coarse.velocity(b), v[b]);
    pp_.apply(coarse.pressure(b), p[b]);
  }
  for (int a = 0; a <= kf_; ++a) {
    fill(fine.velocity(a), 0.0);
    fill(fine.pressure(a), 0.0);
    for (int b = 0; b <= kc_; ++b) {
      const double t = time_prolong_[a * (kc_ + 1) + b];
      if (t == 0.0) continue;
      axpy(t, v[b], fine.velocity(a));
      axpy(t, p[b], fine.pressure(a));
    }
  }
}

void SlabTransfer::restrict(const SlabVector& fine, SlabVector& coarse) const {
  if (fine.k() != kf_ || fine.n_velocity() != pv_.rows || fine.n_pressure() != pp_.rows)
    throw ShapeError("restrict: fine vector does not match the level");
  if (coarse.k() != kc_ || coarse.n_velocity() != pv_.cols || coarse.n_pressure() != pp_.cols)
    coarse = SlabVector(kc_, pv_.cols, pp_.cols);
  Vector v(pv_.rows), p(pp_.rows);
  for (int b = 0; b <= kc_; ++b) {
    fill(v, 0.0);
    fill(p, 0.0);
    for (int a = 0; a <= kf_; ++a) {
      const double t = time_prolong_[a * (kc_ + 1) + b];
      if (t == 0.0) continue;
      axpy(t, fine.velocity(a), v);
      axpy(t, fine.pressure(a), p);
    }
    pv_.apply_transpose(v, coarse.velocity(b));
    pp_.apply_transpose(p, coarse.pressure(b));
  }
}

void SlabTransfer::interpolate_state(const SlabVector& fine, SlabVector& coarse) const {
  if (fine.k() != kf_ || fine.n_velocity() != pv_.rows) throw ShapeError("state: fine vector does not match the level");
  if (coarse.k() != kc_ || coarse.n_velocity() != pv_.cols || coarse.n_pressure() != pp_.cols)
    coarse = SlabVector(kc_, pv_.cols, pp_.cols);
  Vector v(pv_.rows);
  for (int a = 0; a <= kc_; ++a) {
    fill(v, 0.0);
    for (int b = 0; b <= kf_; ++b) {
      const double t = time_state_[a * (kf_ + 1) + b];
      if (t != 0.0) axpy(t, fine.velocity(b), v);
    }
    state_v_.apply(v, coarse.velocity(a));
    fill(coarse.pressure(a), 0.0);
  }
}

CellMatrices cell_matrices(const SpatialOperator& op, unsigned terms, const SpatialState& state, int cell) {
  const int nvl = op.velocity().local_size(), np = op.pressure().local_size(), nl = nvl + np;
  CellMatrices out{Eigen::MatrixXd::Zero(nvl, nvl), Eigen::MatrixXd::Zero(nl, nl)};
  KernelScratch scratch;
  Vector vin(nvl, 0.0), pin(np, 0.0), mout(nvl), vout(nvl), pout(np);
  for (int j = 0; j < nl; ++j) {
    if (j < nvl)
      vin[j] = 1.0;
    else
      pin[j - nvl] = 1.0;
    const bool vel_col = j < nvl;
    op.cell_apply(terms | (vel_col ? term::mass : 0u), &state, cell, vin, pin, vel_col ? std::span<double>(mout) : std::span<double>(),
                  vout, pout, scratch);
    for (int i = 0; i < nvl; ++i) out.op(i, j) = vout[i];
    for (int i = 0; i < np; ++i) out.op(nvl + i, j) = pout[i];
    if (vel_col)
      for (int i = 0; i < nvl; ++i) out.mass(i, j) = mout[i];
    if (j < nvl)
      vin[j] = 0.0;
    else
      pin[j - nvl] = 0.0;
  }
  return out;
}

int patch_size(int k, int r) { return (k + 1) * (2 * (r + 2) * (r + 2) + (r + 1) * (r + 2) / 2); }

namespace {

// Element matrices for every cell, one group per distinct linearization state.
struct ElementCache {
  std::vector<std::vector<CellMatrices>> groups;  // [group][cell]
  std::vector<int> group_of_node;                 // temporal node -> group
};

SpatialState midpoint_state(const SlabJacobian& jac) {
  const SlabProblem& p = jac.problem();
  const SpatialOperator& op = p.op();
  Vector vmid(op.n_velocity(), 0.0);
  for (int a = 0; a <= p.k(); ++a) axpy(p.basis().value(a, 0.0), jac.state(a).velocity(), vmid);
  SpatialState st(op);
  st.update(vmid, p.midpoint_time());
  return st;
}

ElementCache element_cache(const SlabJacobian& jac, VankaMode mode, const std::vector<int>& cells) {
  const SlabProblem& p = jac.problem();
  const SpatialOperator& op = p.op();
  const unsigned terms = p.terms() | term::linearized;
  ElementCache ec;
  const int n_cells = op.mesh().n_cells();
  std::vector<const SpatialState*> states;
  std::unique_ptr<SpatialState> mid;
  if (mode == VankaMode::surrogate) {
    mid = std::make_unique<SpatialState>(midpoint_state(jac));
    states.push_back(mid.get());
    ec.group_of_node.assign(p.k() + 1, 0);
  } else {
    for (int a = 0; a <= p.k(); ++a) {
      states.push_back(&jac.state(a));
      ec.group_of_node.push_back(a);
    }
  }
  ec.groups.assign(states.size(), std::vector<CellMatrices>(n_cells));
  const int nc = static_cast<int>(cells.size());
  for (std::size_t g = 0; g < states.size(); ++g) {
#pragma omp parallel for schedule(dynamic) if (!parallel::serial())
    for (int i = 0; i < nc; ++i) ec.groups[g][cells[i]] = cell_matrices(op, terms, *states[g], cells[i]);
  }
  return ec;
}

std::vector<int> neighbours(const MeshLevel& mesh, int cell) {
  const Cell& c = mesh.cell(cell);
  const int n = mesh.cells_per_dim();
  std::vector<int> out;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int ix = c.ix + dx, iy = c.iy + dy;
      if (ix >= 0 && iy >= 0 && ix < n && iy < n) out.push_back(mesh.cell_index(ix, iy));
    }
  return out;
}

Eigen::MatrixXd patch_from_cache(const SlabProblem& p, const ElementCache& ec, int cell) {
  const SpatialOperator& op = p.op();
  const VelocitySpace& vel = op.velocity();
  const TemporalMatrices& tm = p.temporal();
  const int nvl = vel.local_size(), np = op.pressure().local_size(), nl = nvl + np;
  const int n = tm.size();
  std::vector<std::pair<int, int>> own(nvl);
  for (int l = 0; l < nvl; ++l) own[l] = {vel.dof(cell, l), l};
  std::sort(own.begin(), own.end());
  auto local_of = [&](int g) {
    auto it = std::lower_bound(own.begin(), own.end(), std::pair<int, int>{g, -1});
    return (it != own.end() && it->first == g) ? it->second : -1;
  };
  const int groups = static_cast<int>(ec.groups.size());
  Eigen::MatrixXd msub = Eigen::MatrixXd::Zero(nvl, nvl);
  std::vector<Eigen::MatrixXd> ysub(groups, Eigen::MatrixXd::Zero(nl, nl));
  std::vector<int> map(nvl);
  for (int c : neighbours(op.mesh(), cell)) {
    for (int l = 0; l < nvl; ++l) map[l] = c == cell ? l : local_of(vel.dof(c, l));
    for (int j = 0; j < nvl; ++j) {
      if (map[j] < 0) continue;
      for (int i = 0; i < nvl; ++i) {
        if (map[i] < 0) continue;
        msub(map[i], map[j]) += ec.groups[0][c].mass(i, j);
        for (int g = 0; g < groups; ++g) ysub[g](map[i], map[j]) += ec.groups[g][c].op(i, j);
      }
    }
    if (c == cell)
      for (int g = 0; g < groups; ++g) {
        const Eigen::MatrixXd& y = ec.groups[g][c].op;
        ysub[g].bottomRows(np) += y.bottomRows(np);
        ysub[g].block(0, nvl, nvl, np) += y.block(0, nvl, nvl, np);
      }
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n * nl, n * nl);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b)
      if (tm.K(a, b) != 0.0) out.block(a * nl, b * nl, nvl, nvl) += tm.K(a, b) * msub;
    out.block(a * nl, a * nl, nl, nl) += tm.mass[a] * ysub[ec.group_of_node[a]];
  }
  return out;
}

std::vector<int> patch_dofs(const SlabProblem& p, int cell) {
  const SpatialOperator& op = p.op();
  const int nvl = op.velocity().local_size(), np = op.pressure().local_size();
  const int nv = op.n_velocity(), npg = op.n_pressure(), n = p.k() + 1;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n) * (nvl + np));
  for (int a = 0; a < n; ++a) {
    for (int l = 0; l < nvl; ++l) out.push_back(a * nv + op.velocity().dof(cell, l));
    for (int l = 0; l < np; ++l) out.push_back(n * nv + a * npg + op.pressure().dof(cell, l));
  }
  return out;
}

} // namespace

Eigen::MatrixXd assemble_patch(const SlabJacobian& jac, int cell, VankaMode mode) {
  const SlabProblem& p = jac.problem();
  const ElementCache ec = element_cache(jac, mode, neighbours(p.op().mesh(), cell));
  return patch_from_cache(p, ec, cell);
}

VankaSmoother::VankaSmoother(const SlabJacobian& jac, VankaConfig cfg)
    : problem_(&jac.problem()), slab_(jac.problem().temporal().slab), tau_(jac.problem().tau()), cfg_(cfg) {
  const SlabProblem& p = *problem_;
  const SpatialOperator& op = p.op();
  const int n_cells = op.mesh().n_cells();
  m_ = stns::patch_size(p.k(), op.velocity().r());
  std::vector<int> all(n_cells);
  for (int c = 0; c < n_cells; ++c) all[c] = c;
  const ElementCache ec = element_cache(jac, cfg_.mode, all);
  dofs_.resize(n_cells);
  matrices_.resize(n_cells);
  lu_.resize(n_cells);
  int fallbacks = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : fallbacks) if (!parallel::serial())
  for (int c = 0; c < n_cells; ++c) {
    dofs_[c] = patch_dofs(p, c);
    matrices_[c] = patch_from_cache(p, ec, c);
    lu_[c].compute(matrices_[c]);
    if (!(lu_[c].rcond() > 1e-14)) {
      // Nearly singular patch: retry with a small diagonal shift.
      const double scale = matrices_[c].cwiseAbs().rowwise().sum().maxCoeff();
      Eigen::MatrixXd shifted = matrices_[c];
      shifted.diagonal().array() += 1e-12 * scale;
      lu_[c].compute(shifted);
      ++fallbacks;
    }
  }
  fallbacks_ = fallbacks;
  const std::size_t total = static_cast<std::size_t>(p.k() + 1) * (op.n_velocity() + op.n_pressure());
  weight_.assign(total, cfg_.weighted ? 0.0 : 1.0);
  if (cfg_.weighted) {
    for (const auto& d : dofs_)
      for (int g : d) weight_[g] += 1.0;
    for (double& w : weight_) w = w > 0.0 ? 1.0 / w : 0.0;
  }
}

void VankaSmoother::smooth(const SlabJacobian& jac, std::span<const double> b, std::span<double> x, int sweeps) const {
  if (&jac.problem() != problem_ || jac.problem().temporal().slab != slab_ || jac.problem().tau() != tau_)
    throw StalePatch("Vanka patches were built for another slab; rebuild required");
  const SlabProblem& p = *problem_;
  SlabVector xs = p.zeros(), jx = p.zeros();
  require_size(b.size(), xs.size(), "smoother rhs");
  require_size(x.size(), xs.size(), "smoother solution");
  Vector d(xs.size());
  auto defect = [&] {
    std::copy(x.begin(), x.end(), xs.data().begin());
    jac.apply(xs, jx);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = b[i] - jx[i];
  };
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    if (!cfg_.multiplicative) defect();
    for (int color = 0; color < 4; ++color) {
      if (cfg_.multiplicative) defect();
      const std::vector<int>& cells = p.op().cells_of_color(color);
      const int nc = static_cast<int>(cells.size());
#pragma omp parallel for schedule(static) if (!parallel::serial())
      for (int i = 0; i < nc; ++i) {
        const int c = cells[i];
        const std::vector<int>& idx = dofs_[c];
        Eigen::VectorXd local(m_);
        for (int l = 0; l < m_; ++l) local[l] = d[idx[l]];
        const Eigen::VectorXd corr = lu_[c].solve(local);
        for (int l = 0; l < m_; ++l) x[idx[l]] += cfg_.omega * weight_[idx[l]] * corr[l];
      }
    }
  }
}

struct StmgPreconditioner::Level {
  LevelSpec spec;
  std::unique_ptr<VelocitySpace> vel;
  std::unique_ptr<PressureSpace> pres;
  std::unique_ptr<SpatialOperator> op;
  std::unique_ptr<SlabProblem> owned_problem;
  const SlabProblem* problem = nullptr;
  std::unique_ptr<SlabJacobian> jac;
  SlabVector state;
  std::unique_ptr<VankaSmoother> smoother;
  std::unique_ptr<PressureProjector> projector;
};

StmgPreconditioner::StmgPreconditioner(const MeshHierarchy& mesh, LevelSpec finest, NitscheConfig nitsche,
                                       SpaceTimeField dirichlet, unsigned terms, StmgConfig cfg)
    : mesh_(&mesh), schedule_(build_schedule(finest, cfg.coarsen_time)), nitsche_(nitsche), dirichlet_(std::move(dirichlet)),
      terms_(terms), cfg_(cfg) {
  if (finest.s >= mesh.n_levels()) throw InvalidId("finest level exceeds the mesh hierarchy");
  for (const LevelSpec& spec : schedule_.levels) {
    auto lvl = std::make_unique<Level>();
    lvl->spec = spec;
    lvl->vel = std::make_unique<VelocitySpace>(mesh.level(spec.s), spec.r);
    lvl->pres = std::make_unique<PressureSpace>(mesh.level(spec.s), spec.r);
    levels_.push_back(std::move(lvl));
  }
  for (std::size_t l = 1; l < levels_.size(); ++l)
    levels_[l]->op = std::make_unique<SpatialOperator>(*levels_[l]->vel, *levels_[l]->pres, nitsche_, dirichlet_);
  for (std::size_t l = 0; l + 1 < levels_.size(); ++l) {
    const Level& f = *levels_[l];
    const Level& c = *levels_[l + 1];
    transfers_.push_back(std::make_unique<SlabTransfer>(mesh, *f.vel, *f.pres, f.spec.k, *c.vel, *c.pres, c.spec.k));
  }
}

StmgPreconditioner::~StmgPreconditioner() = default;

int StmgPreconditioner::patch_fallbacks() const {
  int n = 0;
  for (const auto& l : levels_)
    if (l->smoother) n += l->smoother->fallbacks();
  return n;
}

const SlabProblem& StmgPreconditioner::level_problem(int l) const {
  if (!levels_.at(l)->problem) throw Error("no slab has been set");
  return *levels_[l]->problem;
}

const SlabJacobian& StmgPreconditioner::level_jacobian(int l) const {
  if (!levels_.at(l)->jac) throw Error("no linearization has been set");
  return *levels_[l]->jac;
}

void StmgPreconditioner::set_slab(const SlabProblem& problem) {
  Level& top = *levels_[0];
  if (problem.k() != top.spec.k || problem.op().n_velocity() != top.vel->n_dofs() ||
      problem.op().n_pressure() != top.pres->n_dofs())
    throw ShapeError("slab problem does not match the finest multigrid level");
  fine_problem_ = &problem;
  top.problem = &problem;
  for (std::size_t l = 1; l < levels_.size(); ++l) {
    Level& lvl = *levels_[l];
    lvl.smoother.reset();
    lvl.jac.reset();
    lvl.owned_problem = std::make_unique<SlabProblem>(*lvl.op, lvl.spec.k, problem.t_start(), problem.tau(),
                                                      problem.temporal().slab, nullptr, std::span<const double>(),
                                                      terms_);
    lvl.problem = lvl.owned_problem.get();
  }
  top.smoother.reset();
  top.jac.reset();
  for (auto& l : levels_)
    if (l->problem->pure_dirichlet() && !l->projector) l->projector = std::make_unique<PressureProjector>(l->problem->op());
}

void StmgPreconditioner::linearize(const SlabProblem& problem, const SlabVector& state) {
  if (&problem != fine_problem_) set_slab(problem);
  levels_[0]->state = state;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    Level& lvl = *levels_[l];
    if (l > 0) transfers_[l - 1]->interpolate_state(levels_[l - 1]->state, lvl.state);
    lvl.jac = std::make_unique<SlabJacobian>(*lvl.problem, lvl.state);
  }
  if (levels_.size() < 2) return;
  // Dense coarse Jacobian by column probing.
  Level& c = *levels_.back();
  const std::size_t n = c.state.size();
  Eigen::MatrixXd J(n, n);
  SlabVector e = c.problem->zeros(), col = c.problem->zeros();
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    c.jac->apply(e, col);
    e[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  coarse_pins_.clear();
  if (c.projector) {
    const int nv = c.op->n_velocity(), np = c.op->n_pressure(), nb = c.spec.k + 1;
    for (int a = 0; a < nb; ++a) {
      const int pin = nb * nv + a * np;
      J.row(pin).setZero();
      J.col(pin).setZero();
      J(pin, pin) = 1.0;
      coarse_pins_.push_back(pin);
    }
  }
  coarse_lu_.compute(J);
}

void StmgPreconditioner::rebuild(const SlabProblem& problem, const SlabVector& state) {
  linearize(problem, state);
  const std::size_t smoothed = levels_.size() == 1 ? 1 : levels_.size() - 1;
  for (std::size_t l = 0; l < smoothed; ++l)
    levels_[l]->smoother = std::make_unique<VankaSmoother>(*levels_[l]->jac, cfg_.vanka);
  ++rebuilds_;
}

void StmgPreconditioner::coarse_solve(std::span<const double> b, std::span<double> x) const {
  const Level& c = *levels_.back();
  SlabVector rhs = c.problem->zeros();
  std::copy(b.begin(), b.end(), rhs.data().begin());
  if (c.projector) c.projector->project_dual(rhs);
  Eigen::VectorXd bb = Eigen::Map<const Eigen::VectorXd>(rhs.data().data(), static_cast<Eigen::Index>(rhs.size()));
  for (int pin : coarse_pins_) bb[pin] = 0.0;
  const Eigen::VectorXd sol = coarse_lu_.solve(bb);
  SlabVector xs = c.problem->zeros();
  std::copy(sol.data(), sol.data() + sol.size(), xs.data().begin());
  if (c.projector) c.projector->project(xs);
  std::copy(xs.data().begin(), xs.data().end(), x.begin());
}

void StmgPreconditioner::vcycle(int l, std::span<const double> b, std::span<double> x) const {
  const Level& lvl = *levels_.at(l);
  if (!lvl.jac) throw Error("vcycle before linearize");
  const int last = static_cast<int>(levels_.size()) - 1;
  if (last == 0) {
    if (!lvl.smoother) throw StalePatch("smoother not built");
    lvl.smoother->smooth(*lvl.jac, b, x, cfg_.pre_smooth + cfg_.post_smooth);
    return;
  }
  if (l == last) {
    coarse_solve(b, x);
    return;
  }
  if (!lvl.smoother) throw StalePatch("smoother not built");
  lvl.smoother->smooth(*lvl.jac, b, x, cfg_.pre_smooth);
  SlabVector xs = lvl.problem->zeros(), d = lvl.problem->zeros();
  std::copy(x.begin(), x.end(), xs.data().begin());
  lvl.jac->apply(xs, d);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = b[i] - d[i];
  const Level& next = *levels_[l + 1];
  SlabVector dc = next.problem->zeros(), xc = next.problem->zeros(), corr = lvl.problem->zeros();
  transfers_[l]->restrict(d, dc);
  vcycle(l + 1, dc.all(), xc.all());
  transfers_[l]->prolong(xc, corr);
  axpy(1.0, corr.all(), xs.all());
  if (lvl.projector) lvl.projector->project(xs);
  std::copy(xs.data().begin(), xs.data().end(), x.begin());
  lvl.smoother->smooth(*lvl.jac, b, x, cfg_.post_smooth);
  if (lvl.projector) {
    std::copy(x.begin(), x.end(), xs.data().begin());
    lvl.projector->project(xs);
    std::copy(xs.data().begin(), xs.data().end(), x.begin());
  }
}

void StmgPreconditioner::apply(std::span<const double> r, std::span<double> z) {
  std::fill(z.begin(), z.end(), 0.0);
  vcycle(0, r, z);
}

} // namespace stns
