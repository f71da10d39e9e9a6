// Serial reference vs OpenMP kernels: wall time and bit-equality.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "omniair/kernels.hpp"

namespace k = omniair::kernels;

namespace {

double median_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm-up
  std::vector<double> t;
  for (int r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

struct Graph {
  std::vector<std::size_t> offsets, cols, row, t_offsets, t_entries;
};

Graph random_graph(std::size_t n, std::size_t deg, std::mt19937_64& rng) {
  Graph g;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  g.offsets.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < deg; ++d) {
      g.cols.push_back(pick(rng));
      g.row.push_back(i);
    }
    g.offsets.push_back(g.cols.size());
  }
  std::vector<std::size_t> count(n + 1, 0);
  for (std::size_t c : g.cols) ++count[c + 1];
  for (std::size_t i = 0; i < n; ++i) count[i + 1] += count[i];
  g.t_offsets = count;
  g.t_entries.resize(g.cols.size());
  for (std::size_t e = 0; e < g.cols.size(); ++e) g.t_entries[count[g.cols[e]]++] = e;
  return g;
}

void fill(std::vector<double>& v, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  for (double& x : v) x = d(rng);
}

void report(const char* name, double serial_ms, double parallel_ms, bool same) {
  std::printf("%-20s serial %9.3f ms  parallel %9.3f ms  speedup %5.2f  %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs parallel kernel benchmark"};
  std::size_t n = 20000, deg = 15, width = 64, slices = 4, dim = 256;
  int repeats = 5, workers = 0;
  app.add_option("--nodes", n);
  app.add_option("--degree", deg);
  app.add_option("--width", width);
  app.add_option("--slices", slices);
  app.add_option("--dim", dim, "square gemm size");
  app.add_option("--repeats", repeats);
  app.add_option("--workers", workers, "0 = OMNIAIR_WORKERS or the OpenMP default");
  CLI11_PARSE(app, argc, argv);
  k::set_workers(workers);
  std::printf("workers %d, nodes %zu, degree %zu, width %zu, slices %zu\n", k::workers(), n, deg, width, slices);

  std::mt19937_64 rng(42);
  const Graph g = random_graph(n, deg, rng);
  const k::SpmmArgs args{{g.offsets, g.cols}, slices, 1, width};
  const k::CsrView tr{g.t_offsets, g.t_entries};
  std::vector<double> w(slices * g.cols.size()), x(slices * n * width), y1(x.size()), y2(x.size());
  fill(w, rng);
  fill(x, rng);

  const double s0 = median_ms([&] { k::serial::spmm(args, w, x, y1); }, repeats);
  const double p0 = median_ms([&] { k::parallel::spmm(args, w, x, y2); }, repeats);
  report("spmm", s0, p0, y1 == y2);

  std::fill(y1.begin(), y1.end(), 0.0);
  std::fill(y2.begin(), y2.end(), 0.0);
  const double s1 = median_ms([&] { k::serial::spmm_transpose_acc(args, tr, g.row, w, x, y1); }, repeats);
  const double p1 = median_ms([&] { k::parallel::spmm_transpose_acc(args, tr, g.row, w, x, y2); }, repeats);
  report("spmm_transpose_acc", s1, p1, y1 == y2);

  std::vector<double> dw1(w.size(), 0.0), dw2(w.size(), 0.0);
  const double s2 = median_ms([&] { k::serial::edge_dot_acc(args, g.row, x, x, dw1); }, repeats);
  const double p2 = median_ms([&] { k::parallel::edge_dot_acc(args, g.row, x, x, dw2); }, repeats);
  report("edge_dot_acc", s2, p2, dw1 == dw2);

  std::vector<double> a(dim * dim), b(dim * dim), c1(dim * dim, 0.0), c2(dim * dim, 0.0);
  fill(a, rng);
  fill(b, rng);
  const double s3 = median_ms([&] { k::serial::gemm_acc(dim, dim, dim, a, b, c1); }, repeats);
  const double p3 = median_ms([&] { k::parallel::gemm_acc(dim, dim, dim, a, b, c2); }, repeats);
  report("gemm_acc", s3, p3, c1 == c2);

  std::fill(c1.begin(), c1.end(), 0.0);
  std::fill(c2.begin(), c2.end(), 0.0);
  const double s4 = median_ms([&] { k::serial::gemm_nt_acc(dim, dim, dim, a, b, c1); }, repeats);
  const double p4 = median_ms([&] { k::parallel::gemm_nt_acc(dim, dim, dim, a, b, c2); }, repeats);
  report("gemm_nt_acc", s4, p4, c1 == c2);
  return 0;
}
