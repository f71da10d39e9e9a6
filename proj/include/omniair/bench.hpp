#pragma once

// Forward-pass scaling benchmark over synthetic station sets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace omniair {

struct BenchOptions {
  std::vector<std::size_t> sizes = {1024, 2048, 4096, 8192};
  std::size_t k_geo = 10;
  std::size_t k_sem = 5;
  std::size_t input_steps = 8;
  std::size_t horizon = 2;
  std::size_t d_model = 16;
  std::size_t heads = 4;
  std::size_t repeats = 5;
  std::uint64_t seed = 42;
  int workers = 1;
};

struct BenchRow {
  std::size_t stations = 0;
  std::size_t k = 0;
  std::size_t edges = 0;
  double forward_ms = 0.0;  // median over repeats, warm-up excluded
  double build_ms = 0.0;
  std::optional<std::size_t> peak_rss_kb;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double slope = 0.0;
};

/// Least-squares slope of log(ms) against log(N). Needs at least 3 sizes.
double loglog_slope(std::span<const double> sizes, std::span<const double> ms);

BenchReport run_scaling(const BenchOptions& options);

/// Peak resident set size of this process (VmHWM), when available.
std::optional<std::size_t> peak_rss_kb();

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report);
/// Two columns: log N, log ms.
void write_bench_plot(const std::filesystem::path& path, const BenchReport& report);

}  // namespace omniair
