#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stns {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidDomain : public Error {
public:
  using Error::Error;
};
class InvalidPartition : public Error {
public:
  using Error::Error;
};
class InvalidId : public Error {
public:
  using Error::Error;
};
class ShapeError : public Error {
public:
  using Error::Error;
};
class SizeGuard : public Error {
public:
  using Error::Error;
};
class StalePatch : public Error {
public:
  using Error::Error;
};
class IoError : public Error {
public:
  using Error::Error;
};

using Vector = std::vector<double>;

inline void require_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw ShapeError(std::string(what) + ": length " + std::to_string(got) + ", expected " +
                     std::to_string(want));
}

// Threading knobs shared by every kernel. All reductions use fixed chunking so
// results do not depend on the thread count.
namespace parallel {
void set_threads(int n);
int threads();
// Serial mode routes cell loops through the lexicographic reference path.
void set_serial(bool on);
bool serial();
} // namespace parallel

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);
void fill(std::span<double> x, double v);

} // namespace stns
