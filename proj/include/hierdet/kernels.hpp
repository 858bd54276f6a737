#pragma once

#include <cstddef>

// Low-level numeric kernels used by the hot loops (projection, losses,
// linear heads). A scalar reference implementation always exists; on x86
// an AVX2 variant is selected at runtime when the CPU supports it. The
// two variants are equivalence-tested against each other: elementwise
// kernels must match bitwise, reductions within a tight relative bound
// (vector lanes reorder the additions).

namespace hierdet::kernels {

struct Ops {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*max_value)(const double* x, std::size_t n);  // requires n >= 1
  void (*shifted_relu)(const double* x, double shift, double* out,
                       std::size_t n);  // out_i = max(x_i - shift, 0)
  double (*l1_distance)(const double* a, const double* b, std::size_t n);
};

const Ops& scalar_ops();

// AVX2 table, or nullptr when not compiled in or not supported by the CPU.
const Ops* avx2_ops();

// Dispatch target, chosen once per process.
const Ops& active();
const char* active_name();

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline double sum(const double* x, std::size_t n) {
  return active().sum(x, n);
}
inline double max_value(const double* x, std::size_t n) {
  return active().max_value(x, n);
}
inline void shifted_relu(const double* x, double shift, double* out,
                         std::size_t n) {
  active().shifted_relu(x, shift, out, n);
}
inline double l1_distance(const double* a, const double* b, std::size_t n) {
  return active().l1_distance(a, b, n);
}

}  // namespace hierdet::kernels
