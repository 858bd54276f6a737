#include "hierdet/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace hierdet::kernels {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double max_value_scalar(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void shifted_relu_scalar(const double* x, double shift, double* out,
                         std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(x[i] - shift, 0.0);
}

double l1_distance_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(a[i] - b[i]);
  return acc;
}

constexpr Ops kScalarOps = {
    dot_scalar,       axpy_scalar,         sum_scalar,
    max_value_scalar, shifted_relu_scalar, l1_distance_scalar,
};

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

#if !defined(HIERDET_HAVE_AVX2)
const Ops* avx2_ops() { return nullptr; }
#endif

const Ops& active() {
  static const Ops* chosen = [] {
    if (const Ops* v = avx2_ops()) return v;
    return &kScalarOps;
  }();
  return *chosen;
}

const char* active_name() {
  return &active() == &kScalarOps ? "scalar" : "avx2";
}

}  // namespace hierdet::kernels
