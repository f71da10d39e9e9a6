#pragma once

// Data-parallel numeric kernels.
//
// Every kernel has a `serial` reference and a `parallel` (OpenMP) variant.
// Both use the same per-output summation order, so their results are
// bit-identical for any worker count. The engine calls the parallel
// variants; the serial ones are kept for tests and the kernel benchmark.

#include <cstddef>
#include <span>

namespace omniair::kernels {

/// Sparse row structure shared by the graph kernels. Row `i` owns entries
/// offsets[i]..offsets[i+1]-1; `cols[e]` is the column of entry `e`.
struct CsrView {
  std::span<const std::size_t> offsets;
  std::span<const std::size_t> cols;
  std::size_t rows() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t nnz() const { return cols.size(); }
};

/// y[s, i, :] = sum_e w[s / slices_per_weight, e] * x[s, cols[e], :] for every
/// slice s. x and y are (slices, rows, width); w holds one weight set per
/// group of `slices_per_weight` consecutive slices. y is overwritten.
struct SpmmArgs {
  CsrView csr;
  std::size_t slices = 0;
  std::size_t slices_per_weight = 1;
  std::size_t width = 0;
};

namespace serial {
void spmm(const SpmmArgs& args, std::span<const double> w, std::span<const double> x,
          std::span<double> y);
/// dx[s, j, :] += sum over entries e with cols[e] == j of w * dy[s, row(e), :].
/// `transpose` is the CSR of the transposed pattern holding entry ids.
void spmm_transpose_acc(const SpmmArgs& args, const CsrView& transpose,
                        std::span<const std::size_t> entry_row, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx);
/// dw[g, e] += sum over slices s of group g of <dy[s, row(e), :], x[s, cols[e], :]>.
void edge_dot_acc(const SpmmArgs& args, std::span<const std::size_t> entry_row,
                  std::span<const double> dy, std::span<const double> x, std::span<double> dw);

/// C (m,n) += A (m,k) * B (k,n), all row-major.
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
              std::span<const double> b, std::span<double> c);
/// C (m,k) += A (m,n) * B^T where B is (k,n).
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);
}  // namespace serial

namespace parallel {
void spmm(const SpmmArgs& args, std::span<const double> w, std::span<const double> x,
          std::span<double> y);
void spmm_transpose_acc(const SpmmArgs& args, const CsrView& transpose,
                        std::span<const std::size_t> entry_row, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx);
void edge_dot_acc(const SpmmArgs& args, std::span<const std::size_t> entry_row,
                  std::span<const double> dy, std::span<const double> x, std::span<double> dw);
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
              std::span<const double> b, std::span<double> c);
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
                 std::span<const double> b, std::span<double> c);
}  // namespace parallel

/// Worker count used by the parallel kernels. Reads OMNIAIR_WORKERS once;
/// `set_workers` overrides it.
int workers();
void set_workers(int n);

}  // namespace omniair::kernels
