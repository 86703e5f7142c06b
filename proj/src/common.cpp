#include "stns/common.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace stns {

namespace {
int g_threads = 0;
bool g_serial = false;
constexpr std::size_t chunk = 4096;
} // namespace

namespace parallel {
void set_threads(int n) {
  g_threads = std::max(1, n);
  omp_set_num_threads(g_threads);
}
int threads() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }
void set_serial(bool on) { g_serial = on; }
bool serial() { return g_serial; }
} // namespace parallel

double dot(std::span<const double> a, std::span<const double> b) {
  require_size(b.size(), a.size(), "dot");
  const std::size_t n = a.size();
  const std::size_t nchunks = (n + chunk - 1) / chunk;
  std::vector<double> partial(nchunks, 0.0);
#pragma omp parallel for schedule(static) num_threads(parallel::threads()) if (nchunks > 1)
  for (std::size_t c = 0; c < nchunks; ++c) {
    const std::size_t lo = c * chunk, hi = std::min(n, lo + chunk);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += a[i] * b[i];
    partial[c] = s;
  }
  double s = 0.0;
  for (double p : partial) s += p;
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_size(y.size(), x.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, std::span<double> x) {
  for (double& v : x) v *= alpha;
}

void fill(std::span<double> x, double v) { std::fill(x.begin(), x.end(), v); }

} // namespace stns
