#include "omniair/kernels.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omniair::kernels {

namespace {

int g_workers = 0;

int workers_from_env() {
  if (const char* env = std::getenv("OMNIAIR_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

using Index = std::ptrdiff_t;

// Row kernels shared by both variants so the per-output summation order is
// identical by construction.

inline void spmm_row(const SpmmArgs& a, std::span<const double> w, std::span<const double> x,
                     std::span<double> y, std::size_t s, std::size_t i) {
  const std::size_t width = a.width;
  const std::size_t rows = a.csr.rows();
  const std::size_t nnz = a.csr.nnz();
  const double* wg = w.data() + (s / a.slices_per_weight) * nnz;
  double* out = y.data() + (s * rows + i) * width;
  for (std::size_t d = 0; d < width; ++d) out[d] = 0.0;
  for (std::size_t e = a.csr.offsets[i]; e < a.csr.offsets[i + 1]; ++e) {
    const double we = wg[e];
    const double* src = x.data() + (s * rows + a.csr.cols[e]) * width;
    for (std::size_t d = 0; d < width; ++d) out[d] += we * src[d];
  }
}

inline void spmm_transpose_row(const SpmmArgs& a, const CsrView& t,
                               std::span<const std::size_t> entry_row, std::span<const double> w,
                               std::span<const double> dy, std::span<double> dx, std::size_t s,
                               std::size_t j) {
  const std::size_t width = a.width;
  const std::size_t rows = a.csr.rows();
  const std::size_t nnz = a.csr.nnz();
  const double* wg = w.data() + (s / a.slices_per_weight) * nnz;
  double* out = dx.data() + (s * rows + j) * width;
  for (std::size_t k = t.offsets[j]; k < t.offsets[j + 1]; ++k) {
    const std::size_t e = t.cols[k];
    const double we = wg[e];
    const double* src = dy.data() + (s * rows + entry_row[e]) * width;
    for (std::size_t d = 0; d < width; ++d) out[d] += we * src[d];
  }
}

inline double edge_dot_one(const SpmmArgs& a, std::span<const std::size_t> entry_row,
                           std::span<const double> dy, std::span<const double> x, std::size_t g,
                           std::size_t e) {
  const std::size_t width = a.width;
  const std::size_t rows = a.csr.rows();
  double acc = 0.0;
  const std::size_t s_end = (g + 1) * a.slices_per_weight;
  for (std::size_t s = g * a.slices_per_weight; s < s_end && s < a.slices; ++s) {
    const double* gy = dy.data() + (s * rows + entry_row[e]) * width;
    const double* xs = x.data() + (s * rows + a.csr.cols[e]) * width;
    for (std::size_t d = 0; d < width; ++d) acc += gy[d] * xs[d];
  }
  return acc;
}

inline void gemm_row(std::size_t i, std::size_t k, std::size_t n, const double* a, const double* b,
                     double* c) {
  double* ci = c + i * n;
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void gemm_nt_row(std::size_t i, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c) {
  const double* ai = a + i * n;
  double* ci = c + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
    ci[p] += acc;
  }
}

std::size_t weight_groups(const SpmmArgs& a) {
  return (a.slices + a.slices_per_weight - 1) / a.slices_per_weight;
}

}  // namespace

int workers() {
  if (g_workers <= 0) g_workers = workers_from_env();
  return g_workers;
}

void set_workers(int n) { g_workers = n > 0 ? n : workers_from_env(); }

namespace serial {

void spmm(const SpmmArgs& args, std::span<const double> w, std::span<const double> x,
          std::span<double> y) {
  const std::size_t rows = args.csr.rows();
  for (std::size_t s = 0; s < args.slices; ++s)
    for (std::size_t i = 0; i < rows; ++i) spmm_row(args, w, x, y, s, i);
}

void spmm_transpose_acc(const SpmmArgs& args, const CsrView& transpose,
                        std::span<const std::size_t> entry_row, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx) {
  const std::size_t rows = args.csr.rows();
  for (std::size_t s = 0; s < args.slices; ++s)
    for (std::size_t j = 0; j < rows; ++j)
      spmm_transpose_row(args, transpose, entry_row, w, dy, dx, s, j);
}

void edge_dot_acc(const SpmmArgs& args, std::span<const std::size_t> entry_row,
                  std::span<const double> dy, std::span<const double> x, std::span<double> dw) {
  const std::size_t nnz = args.csr.nnz();
  for (std::size_t g = 0; g < weight_groups(args); ++g)
    for (std::size_t e = 0; e < nnz; ++e)
      dw[g * nnz + e] += edge_dot_one(args, entry_row, dy, x, g, e);
}

void gemm_acc(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
              std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(i, k, n, a.data(), b.data(), c.data());
}

void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, n, k, a.data(), b.data(), c.data());
}

}  // namespace serial

namespace parallel {

void spmm(const SpmmArgs& args, std::span<const double> w, std::span<const double> x,
          std::span<double> y) {
  const Index rows = static_cast<Index>(args.csr.rows());
  const Index total = static_cast<Index>(args.slices) * rows;
#pragma omp parallel for schedule(static) num_threads(workers())
  for (Index r = 0; r < total; ++r)
    spmm_row(args, w, x, y, static_cast<std::size_t>(r / rows), static_cast<std::size_t>(r % rows));
}

void spmm_transpose_acc(const SpmmArgs& args, const CsrView& transpose,
                        std::span<const std::size_t> entry_row, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx) {
  const Index rows = static_cast<Index>(args.csr.rows());
  const Index total = static_cast<Index>(args.slices) * rows;
#pragma omp parallel for schedule(static) num_threads(workers())
  for (Index r = 0; r < total; ++r)
    spmm_transpose_row(args, transpose, entry_row, w, dy, dx, static_cast<std::size_t>(r / rows),
                       static_cast<std::size_t>(r % rows));
}

void edge_dot_acc(const SpmmArgs& args, std::span<const std::size_t> entry_row,
                  std::span<const double> dy, std::span<const double> x, std::span<double> dw) {
  const Index nnz = static_cast<Index>(args.csr.nnz());
  const Index total = static_cast<Index>(weight_groups(args)) * nnz;
#pragma omp parallel for schedule(static) num_threads(workers())
  for (Index r = 0; r < total; ++r)
    dw[static_cast<std::size_t>(r)] += edge_dot_one(args, entry_row, dy, x,
                                                    static_cast<std::size_t>(r / nnz),
                                                    static_cast<std::size_t>(r % nnz));
}

void gemm_acc(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
              std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) num_threads(workers())
  for (Index i = 0; i < static_cast<Index>(m); ++i)
    gemm_row(static_cast<std::size_t>(i), k, n, a.data(), b.data(), c.data());
}

void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) num_threads(workers())
  for (Index i = 0; i < static_cast<Index>(m); ++i)
    gemm_nt_row(static_cast<std::size_t>(i), n, k, a.data(), b.data(), c.data());
}

}  // namespace parallel

}  // namespace omniair::kernels
