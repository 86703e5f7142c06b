#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "stns/bench.hpp"
#include "stns/verify.hpp"

namespace {

using namespace stns;

struct Options {
  int r = 3;
  int k = -1;  // -1: same as r
  int levels = 4;
  int min_level = 1;
  double nu = 1e-2;
  int nsm = 1;
  double omega = 0.8;
  double gamma1 = 10.0, gamma2 = 10.0;
  std::string out;
  std::string format = "text";
  int threads = 0;
  bool deterministic = false;
  double theta_n = 2.0, theta_l = 1.5, kappa_abs = 40.0;
  std::string ew_variant = "alg-b1";
  std::string penalty = "degree-squared";
  std::string vanka = "surrogate";
  int quad_points = 0;
  int slabs_per_cell = 1;
  bool coarsen_time = false;
  int slabs = 0;  // cavity: 0 gives tau = h
  int oracle_states = 20;
};

RunOptions run_options(const Options& o) {
  RunOptions ro;
  ro.gamma1 = o.gamma1;
  ro.gamma2 = o.gamma2;
  ro.penalty_scale = o.penalty == "face-length" ? PenaltyScale::face_length : PenaltyScale::degree_squared;
  ro.quad_points = o.quad_points;
  ro.slabs_per_cell = o.slabs_per_cell;
  ro.deterministic = o.deterministic;
  ro.stmg.pre_smooth = ro.stmg.post_smooth = o.nsm;
  ro.stmg.coarsen_time = o.coarsen_time;
  ro.stmg.vanka.omega = o.omega;
  ro.stmg.vanka.mode = o.vanka == "exact" ? VankaMode::exact : VankaMode::surrogate;
  ro.solver.rebuild.theta_n = o.theta_n;
  ro.solver.rebuild.theta_l = o.theta_l;
  ro.solver.rebuild.kappa_abs = o.kappa_abs;
  ro.solver.newton.forcing_rule = o.ew_variant == "eq-4-3" ? ForcingRule::direct : ForcingRule::recursive;
  return ro;
}

void emit(const CsvTable& table, const Options& o) {
  if (!o.out.empty()) write_csv(table, o.out);
  if (o.format == "csv")
    write_csv(table, std::cout);
  else
    write_text(table, std::cout);
}

std::vector<int> level_list(const Options& o) {
  if (o.min_level < 0 || o.levels < o.min_level) throw Error("need 0 <= --min-level <= --levels");
  std::vector<int> lv(o.levels - o.min_level + 1);
  std::iota(lv.begin(), lv.end(), o.min_level);
  return lv;
}

int run_convergence_cmd(const Options& o) {
  const int k = o.k < 0 ? o.r : o.k;
  const std::vector<int> lv = level_list(o);
  const auto rows = run_convergence(o.r, k, o.nu, lv, run_options(o));
  emit(convergence_table(rows, o.deterministic), o);
  bool ok = true;
  for (const auto& row : rows) {
    if (!row.stats.converged) {
      std::cerr << "warning: level " << row.c << " did not converge on every slab\n";
      ok = false;
    }
  }
  return ok ? 0 : 2;
}

int run_cavity_cmd(const Options& o) {
  const int k = o.k < 0 ? o.r : o.k;
  const RunOptions ro = run_options(o);
  std::vector<CavityRow> rows;
  bool ok = true;
  for (int c : level_list(o)) {
    const int n = o.slabs > 0 ? o.slabs : static_cast<int>(CavityCase{}.t_end) << c;
    rows.push_back(run_cavity(c, o.r, k, o.nu, n, ro));
    ok = ok && rows.back().stats.converged;
  }
  emit(cavity_table(rows, o.deterministic), o);
  return ok ? 0 : 2;
}

int run_verify_cmd(const Options& o) {
  bool ok = true;
  for (const CheckResult& c : property_checks(o.oracle_states)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

// Appends "--key=value" arguments from a file of key = value lines. Later
// occurrences win, so these override the command line.
void append_config(const std::string& path, std::vector<std::string>& args) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw IoError(path + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    args.push_back("--" + key + "=" + value);
  }
}

void add_common(CLI::App& app, Options& o) {
  app.add_option("--r", o.r, "spatial pressure degree (velocity r+1)")->check(CLI::Range(1, 8));
  app.add_option("--k", o.k, "temporal degree, defaults to r")->check(CLI::Range(0, 8));
  app.add_option("--levels", o.levels, "finest refinement c (h = 2^-c)")->check(CLI::Range(0, 8));
  app.add_option("--min-level", o.min_level, "coarsest refinement");
  app.add_option("--nu", o.nu, "kinematic viscosity")->check(CLI::PositiveNumber);
  app.add_option("--nsm", o.nsm, "pre- and post-smoothing steps")->check(CLI::Range(1, 10));
  app.add_option("--omega", o.omega, "Vanka damping")->check(CLI::Range(0.0, 2.0));
  app.add_option("--gamma1", o.gamma1, "Nitsche penalty (viscous)");
  app.add_option("--gamma2", o.gamma2, "Nitsche penalty (normal)");
  app.add_option("--out", o.out, "CSV output path");
  app.add_option("--format", o.format, "stdout format")->check(CLI::IsMember({"text", "csv"}));
  app.add_option("--threads", o.threads, "OpenMP threads")->envname("STNS_THREADS");
  app.add_flag("--deterministic", o.deterministic, "reproducible output (no timings)");
  app.add_option("--rebuild-thetaN", o.theta_n, "rebuild on Newton deterioration");
  app.add_option("--rebuild-thetaL", o.theta_l, "rebuild on Krylov growth");
  app.add_option("--rebuild-kappaabs", o.kappa_abs, "absolute Krylov rebuild threshold");
  app.add_option("--ew-variant", o.ew_variant, "forcing term update")
      ->check(CLI::IsMember({"alg-b1", "eq-4-3"}));
  app.add_option("--penalty", o.penalty, "Nitsche face size")
      ->check(CLI::IsMember({"degree-squared", "face-length"}));
  app.add_option("--vanka", o.vanka, "patch linearization")->check(CLI::IsMember({"surrogate", "exact"}));
  app.add_option("--quad-points", o.quad_points, "spatial Gauss points per direction, 0 for r+2");
  app.add_option("--slabs-per-cell", o.slabs_per_cell, "slabs per cell width (convergence)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--coarsen-time", o.coarsen_time, "lower k on coarse multigrid levels");
  app.add_option("--slabs", o.slabs, "number of slabs (cavity), 0 for tau = h");
  app.add_option("--oracle-states", o.oracle_states, "random states per oracle case (verify)");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Space-time finite element solver for the incompressible Navier-Stokes equations"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  Options oc, oa, ov;
  oa.r = 2;
  oa.levels = 3;
  oa.nu = 4e-4;
  auto* conv = app.add_subcommand("convergence", "manufactured-solution error and iteration table");
  auto* cav = app.add_subcommand("cavity", "lid-driven cavity iteration table");
  auto* ver = app.add_subcommand("verify", "oracle and invariant suites");
  std::string unused;
  for (auto [sub, o] : {std::pair{conv, &oc}, {cav, &oa}, {ver, &ov}}) {
    add_common(*sub, *o);
    sub->add_option("--config", unused, "file of key = value lines overriding flags");
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
      if (args[i] == "--config") {
        const std::string path = args[i + 1];
        append_config(path, args);
      }
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    const Options& o = *conv ? oc : *cav ? oa : ov;
    if (o.threads > 0) parallel::set_threads(o.threads);
    if (*conv) return run_convergence_cmd(o);
    if (*cav) return run_cavity_cmd(o);
    return run_verify_cmd(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
