#include "stns/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace stns {

namespace {
constexpr double pi = std::numbers::pi;
}

Point2 ManufacturedCase::velocity(Point2 x, double t) const {
  const double sx = std::sin(pi * x[0]), cx = std::cos(pi * x[0]);
  const double sy = std::sin(pi * x[1]), cy = std::cos(pi * x[1]);
  const double st = std::sin(t);
  return {st * sx * sx * sy * cy, -st * sx * cx * sy * sy};
}

std::array<double, 4> ManufacturedCase::velocity_gradient(Point2 x, double t) const {
  const double sx = std::sin(pi * x[0]), cx = std::cos(pi * x[0]);
  const double sy = std::sin(pi * x[1]), cy = std::cos(pi * x[1]);
  const double st = std::sin(t);
  return {st * 2 * pi * sx * cx * sy * cy, st * pi * sx * sx * std::cos(2 * pi * x[1]),
          -st * pi * std::cos(2 * pi * x[0]) * sy * sy, -st * 2 * pi * sx * cx * sy * cy};
}

double ManufacturedCase::pressure(Point2 x, double t) const {
  return std::sin(t) * std::sin(pi * x[0]) * std::cos(pi * x[0]) * std::sin(pi * x[1]) *
         std::cos(pi * x[1]);
}

Point2 ManufacturedCase::forcing(Point2 x, double t) const {
  const double s2x = std::sin(2 * pi * x[0]), c2x = std::cos(2 * pi * x[0]);
  const double s2y = std::sin(2 * pi * x[1]), c2y = std::cos(2 * pi * x[1]);
  // spatial profiles: v = sin(t) (a, b), p = sin(t) ps
  const double a = 0.25 * (1 - c2x) * s2y;
  const double b = -0.25 * s2x * (1 - c2y);
  const double sx = std::sin(pi * x[0]), sy = std::sin(pi * x[1]);
  const double ax = 0.5 * pi * s2x * s2y;
  const double ay = pi * sx * sx * c2y;
  const double bx = -pi * c2x * sy * sy;
  const double by = -ax;
  const double lap_a = pi * pi * s2y * (2 * c2x - 1);
  const double lap_b = -pi * pi * s2x * (2 * c2y - 1);
  const double px = 0.5 * pi * c2x * s2y;
  const double py = 0.5 * pi * s2x * c2y;
  const double st = std::sin(t), ct = std::cos(t);
  return {ct * a + st * st * (a * ax + b * ay) - nu * st * lap_a + st * px,
          ct * b + st * st * (a * bx + b * by) - nu * st * lap_b + st * py};
}

SpaceTimeField ManufacturedCase::forcing_field() const {
  return [c = *this](Point2 x, double t) { return c.forcing(x, t); };
}

SpaceTimeField ManufacturedCase::dirichlet_field() const {
  return [c = *this](Point2 x, double t) { return c.velocity(x, t); };
}

Point2 CavityCase::lid(Point2 x, double t) const {
  if (x[1] >= 1.0 - 1e-12) return {std::sin(pi * t / 4.0), 0.0};
  return {0.0, 0.0};
}

SpaceTimeField CavityCase::dirichlet_field() const {
  return [c = *this](Point2 x, double t) { return c.lid(x, t); };
}

ErrorAccumulator::ErrorAccumulator(const SpatialOperator& op, const ManufacturedCase& exact)
    : op_(&op), exact_(&exact), nq_(op.velocity().r() + 3) {
  const QuadratureRule q = gauss_legendre(nq_);
  rule_ = tensorize(q);
  xq_ = q.nodes;
  const VelocitySpace& vel = op.velocity();
  const int n1 = vel.n1();
  vb_.assign(n1, Vector(nq_));
  vd_.assign(n1, Vector(nq_));
  for (int i = 0; i < n1; ++i)
    for (int q1 = 0; q1 < nq_; ++q1) {
      vb_[i][q1] = vel.basis().value(i, xq_[q1]);
      vd_[i][q1] = vel.basis().derivative(i, xq_[q1]);
    }
  const PressureSpace& pres = op.pressure();
  pb_.assign(pres.local_size(), Vector(nq_ * nq_));
  for (int l = 0; l < pres.local_size(); ++l)
    for (int qy = 0; qy < nq_; ++qy)
      for (int qx = 0; qx < nq_; ++qx) pb_[l][qy * nq_ + qx] = pres.shape(l, {xq_[qx], xq_[qy]});
}

void ErrorAccumulator::add_slab(const SlabProblem& problem, const SlabVector& u) {
  const VelocitySpace& vel = op_->velocity();
  const PressureSpace& pres = op_->pressure();
  const MeshLevel& mesh = op_->mesh();
  const int n1 = vel.n1(), npc = vel.nodes_per_cell(), npl = pres.local_size();
  const int nv = op_->n_velocity(), np = op_->n_pressure();
  const int k = problem.k();
  const QuadratureRule tq = gauss_legendre(k + 2);
  const double area = mesh.n_cells() * mesh.hx() * mesh.hy();

  Vector v(nv), p(np), vloc(2 * npc), ploc(npl);
  for (int iq = 0; iq < tq.size(); ++iq) {
    const double s = tq.nodes[iq];
    const double t = problem.t_start() + s * problem.tau();
    const double wt = tq.weights[iq] * problem.tau();
    std::fill(v.begin(), v.end(), 0.0);
    std::fill(p.begin(), p.end(), 0.0);
    for (int a = 0; a <= k; ++a) {
      const double phi = problem.basis().value(a, 2.0 * s - 1.0);
      axpy(phi, u.velocity(a), v);
      axpy(phi, u.pressure(a), p);
    }
    double sv = 0, sh1 = 0, sdiv = 0, ep1 = 0, ep2 = 0;
    for (int cell = 0; cell < mesh.n_cells(); ++cell) {
      const CellMap map = mesh.map(cell);
      const double det = map.jacobian_det();
      const Point2 isc = map.inverse_scale();
      for (int l = 0; l < 2 * npc; ++l) vloc[l] = v[vel.dof(cell, l)];
      for (int l = 0; l < npl; ++l) ploc[l] = p[pres.dof(cell, l)];
      for (int qy = 0; qy < nq_; ++qy)
        for (int qx = 0; qx < nq_; ++qx) {
          const int q2 = qy * nq_ + qx;
          const Point2 x = map.to_physical({xq_[qx], xq_[qy]});
          std::array<double, 2> vh{};
          std::array<double, 4> gh{};
          for (int c = 0; c < 2; ++c)
            for (int b = 0; b < n1; ++b)
              for (int a = 0; a < n1; ++a) {
                const double coef = vloc[c * npc + b * n1 + a];
                vh[c] += coef * vb_[a][qx] * vb_[b][qy];
                gh[2 * c] += coef * vd_[a][qx] * vb_[b][qy] * isc[0];
                gh[2 * c + 1] += coef * vb_[a][qx] * vd_[b][qy] * isc[1];
              }
          double ph = 0;
          for (int l = 0; l < npl; ++l) ph += ploc[l] * pb_[l][q2];
          const Point2 ve = exact_->velocity(x, t);
          const auto ge = exact_->velocity_gradient(x, t);
          const double w = rule_.weights[q2] * det;
          const double e0 = vh[0] - ve[0], e1 = vh[1] - ve[1];
          sv += w * (e0 * e0 + e1 * e1);
          double g2 = 0;
          for (int i = 0; i < 4; ++i) g2 += (gh[i] - ge[i]) * (gh[i] - ge[i]);
          sh1 += w * g2;
          const double dv = gh[0] + gh[3];
          sdiv += w * dv * dv;
          const double ep = ph - exact_->pressure(x, t);
          ep1 += w * ep;
          ep2 += w * ep * ep;
          linf_ = std::max(linf_, std::hypot(e0, e1));
        }
    }
    sv_ += wt * sv;
    sh1_ += wt * (sv + sh1);
    sdiv_ += wt * sdiv;
    sp_ += wt * std::max(0.0, ep2 - ep1 * ep1 / area);
  }
}

ErrorReport ErrorAccumulator::report() const {
  return {std::sqrt(sv_), std::sqrt(sh1_), linf_, std::sqrt(sp_), std::sqrt(sdiv_)};
}

ErrorReport compute_errors(const SpatialOperator& op, const std::vector<SlabRecord>& trajectory,
                           const ManufacturedCase& exact) {
  ErrorAccumulator acc(op, exact);
  for (const SlabRecord& rec : trajectory) acc.add_slab(rec.problem, rec.u);
  return acc.report();
}

std::vector<double> eoc(std::span<const double> errors) {
  std::vector<double> out(errors.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double a = errors[i - 1], b = errors[i];
    if (a > 0 && b > 0 && std::isfinite(a) && std::isfinite(b)) out[i] = std::log2(a / b);
  }
  return out;
}

namespace {

struct Problem {
  MeshHierarchy mesh;
  VelocitySpace vel;
  PressureSpace pres;
  SpatialOperator op;
};

RunStats summarize(const SolveStats& st, int rebuilds, double wall) {
  RunStats rs;
  rs.slabs = static_cast<int>(st.slabs.size());
  rs.mean_newton = st.mean_newton();
  rs.mean_krylov = st.mean_krylov();
  rs.converged = st.all_converged();
  rs.rebuilds = rebuilds;
  rs.wall_time = wall;
  for (const SlabStats& s : st.slabs) {
    rs.newton_per_slab.push_back(s.newton_iterations);
    for (const NewtonStep& step : s.steps) {
      rs.max_krylov = std::max(rs.max_krylov, step.krylov_iterations);
      if (!step.krylov_converged) rs.krylov_cap_hit = true;
    }
  }
  return rs;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

std::vector<ConvergenceRow> run_convergence(int r, int k, double nu, std::span<const int> levels,
                                            const RunOptions& opts) {
  if (opts.slabs_per_cell < 1) throw Error("slabs_per_cell must be positive");
  const ManufacturedCase mc{nu, 1.0};
  const SpaceTimeField g = mc.dirichlet_field();
  const SpaceTimeField f = mc.forcing_field();
  const NitscheConfig nc{nu, opts.gamma1, opts.gamma2, opts.penalty_scale};
  const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
  std::vector<ConvergenceRow> rows;
  for (const int c : levels) {
    if (c < 0) throw Error("refinement level must be non-negative");
    const auto t0 = std::chrono::steady_clock::now();
    const MeshHierarchy mesh = build_hierarchy(lo, hi, 1, c + 1, all_dirichlet());
    const VelocitySpace vel(mesh.finest(), r);
    const PressureSpace pres(mesh.finest(), r);
    const SpatialOperator op(vel, pres, nc, g, opts.quad_points);
    StmgPreconditioner mg(mesh, {c, k, r}, nc, g, term::navier_stokes, opts.stmg);
    const int n_slabs = opts.slabs_per_cell << c;
    ErrorAccumulator acc(op, mc);
    const Vector v0(op.n_velocity(), 0.0);
    const SolveStats st = march(op, build_time_partition(1.0, n_slabs), k, &f, v0, mg, opts.solver,
                                [&](const SlabProblem& p, const SlabVector& u, const SlabStats&) {
                                  acc.add_slab(p, u);
                                });
    ConvergenceRow row;
    row.c = c;
    row.h = mesh.finest().h();
    row.r = r;
    row.k = k;
    row.nu = nu;
    row.dofs = static_cast<long long>(k + 1) * (op.n_velocity() + op.n_pressure());
    row.errors = acc.report();
    row.stats = summarize(st, mg.rebuilds(), seconds_since(t0));
    rows.push_back(row);
  }
  for (int j = 0; j < 5; ++j) {
    std::vector<double> e;
    for (const auto& row : rows) e.push_back(row.errors.values()[j]);
    const std::vector<double> rates = eoc(e);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].eoc[j] = rates[i];
  }
  return rows;
}

CavityRow run_cavity(int c, int r, int k, double nu, int n_slabs, const RunOptions& opts) {
  const CavityCase cc{nu, 8.0};
  const SpaceTimeField g = cc.dirichlet_field();
  const NitscheConfig nc{nu, opts.gamma1, opts.gamma2, opts.penalty_scale};
  const double lo[2] = {0.0, 0.0}, hi[2] = {1.0, 1.0};
  const auto t0 = std::chrono::steady_clock::now();
  const MeshHierarchy mesh = build_hierarchy(lo, hi, 1, c + 1, all_dirichlet());
  const VelocitySpace vel(mesh.finest(), r);
  const PressureSpace pres(mesh.finest(), r);
  const SpatialOperator op(vel, pres, nc, g, opts.quad_points);
  StmgPreconditioner mg(mesh, {c, k, r}, nc, g, term::navier_stokes, opts.stmg);
  const Vector v0(op.n_velocity(), 0.0);
  const SolveStats st = march(op, build_time_partition(cc.t_end, n_slabs), k, nullptr, v0, mg, opts.solver);
  CavityRow row;
  row.c = c;
  row.h = mesh.finest().h();
  row.r = r;
  row.k = k;
  row.nu = nu;
  row.nsm = opts.stmg.pre_smooth;
  row.dofs = static_cast<long long>(k + 1) * (op.n_velocity() + op.n_pressure());
  row.stats = summarize(st, mg.rebuilds(), seconds_since(t0));
  return row;
}

std::string format_sci(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5e", v);
  return buf;
}

namespace {
const char* error_names[5] = {"e_v_l2l2", "e_v_l2h1", "e_v_linf", "e_p_l2l2", "e_div_l2l2"};

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string wall(double t, bool deterministic) { return deterministic ? "" : format_sci(t); }
} // namespace

CsvTable convergence_table(std::span<const ConvergenceRow> rows, bool deterministic) {
  CsvTable t;
  t.columns = {"case", "c", "h", "r", "k", "dofs"};
  for (const char* n : error_names) t.columns.emplace_back(n);
  for (const char* n : error_names) t.columns.push_back(std::string("eoc_") + n);
  for (const char* n : {"n_nl", "n_l", "rebuilds", "wall_time"}) t.columns.emplace_back(n);
  for (const ConvergenceRow& row : rows) {
    std::vector<std::string> line = {"manufactured",          std::to_string(row.c),
                                     format_sci(row.h),       std::to_string(row.r),
                                     std::to_string(row.k),   std::to_string(row.dofs)};
    for (double e : row.errors.values()) line.push_back(format_sci(e));
    for (double e : row.eoc) line.push_back(std::isnan(e) ? "" : fixed2(e));
    line.push_back(fixed2(row.stats.mean_newton));
    line.push_back(fixed2(row.stats.mean_krylov));
    line.push_back(std::to_string(row.stats.rebuilds));
    line.push_back(wall(row.stats.wall_time, deterministic));
    t.rows.push_back(std::move(line));
  }
  return t;
}

CsvTable cavity_table(std::span<const CavityRow> rows, bool deterministic) {
  CsvTable t;
  t.columns = {"case", "c", "h", "r", "k", "dofs", "nu", "nsm", "n_nl", "n_l", "rebuilds", "wall_time"};
  for (const CavityRow& row : rows) {
    t.rows.push_back({"cavity", std::to_string(row.c), format_sci(row.h), std::to_string(row.r),
                      std::to_string(row.k), std::to_string(row.dofs), format_sci(row.nu),
                      std::to_string(row.nsm), fixed2(row.stats.mean_newton),
                      fixed2(row.stats.mean_krylov), std::to_string(row.stats.rebuilds),
                      wall(row.stats.wall_time, deterministic)});
  }
  return t;
}

namespace {
void write_line(const std::vector<std::string>& cells, std::ostream& out) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}
} // namespace

void write_csv(const CsvTable& table, std::ostream& out) {
  write_line(table.columns, out);
  for (const auto& row : table.rows) write_line(row, out);
}

void write_csv(const CsvTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_csv(table, out);
  if (!out) throw IoError("failed writing " + path);
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty table");
  t.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.columns.size())
      throw IoError("row has " + std::to_string(cells.size()) + " fields, expected " +
                    std::to_string(t.columns.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

void write_text(const CsvTable& table, std::ostream& out) {
  std::vector<std::size_t> width(table.columns.size());
  for (std::size_t j = 0; j < width.size(); ++j) {
    width[j] = table.columns[j].size();
    for (const auto& row : table.rows) width[j] = std::max(width[j], row[j].size());
  }
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t j = 0; j < cells.size(); ++j)
      out << (j ? "  " : "") << std::setw(static_cast<int>(width[j])) << cells[j];
    out << '\n';
  };
  line(table.columns);
  for (const auto& row : table.rows) line(row);
}

} // namespace stns
