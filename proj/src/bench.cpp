#include "omniair/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "csv.hpp"
#include "omniair/kernels.hpp"
#include "omniair/model.hpp"

namespace omniair {

double loglog_slope(std::span<const double> sizes, std::span<const double> ms) {
  if (sizes.size() != ms.size()) throw std::invalid_argument("loglog_slope: length mismatch");
  if (sizes.size() < 3) throw std::invalid_argument("loglog_slope: need at least 3 sizes for a slope");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0) || !(ms[i] > 0)) throw std::invalid_argument("loglog_slope: values must be positive");
    const double x = std::log(sizes[i]), y = std::log(ms[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw std::invalid_argument("loglog_slope: sizes must differ");
  return (n * sxy - sx * sy) / den;
}

std::optional<std::size_t> peak_rss_kb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream is(line.substr(6));
      std::size_t kb = 0;
      if (is >> kb) return kb;
    }
  return std::nullopt;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

BenchReport run_scaling(const BenchOptions& o) {
  if (o.sizes.size() < 3) throw std::invalid_argument("bench: need at least 3 sizes for a slope");
  for (std::size_t i = 1; i < o.sizes.size(); ++i)
    if (o.sizes[i] <= o.sizes[i - 1]) throw std::invalid_argument("bench: sizes must be strictly increasing");
  if (o.repeats < 5) throw std::invalid_argument("bench: need at least 5 repeats");
  kernels::set_workers(o.workers);

  RunConfig cfg;
  cfg.d_model = cfg.id_dim = o.d_model;
  cfg.id_hidden = o.d_model;
  cfg.heads = o.heads;
  cfg.edge_hidden = o.d_model;
  cfg.head_hidden = 2 * o.d_model;
  cfg.k_geo = o.k_geo;
  cfg.k_sem = o.k_sem;
  cfg.k_max = static_cast<double>(o.k_geo + o.k_sem);
  cfg.input_steps = o.input_steps;
  cfg.horizon = o.horizon;
  cfg.validate();

  constexpr std::size_t kFeat = 8;
  BenchReport report;
  for (std::size_t N : o.sizes) {
    std::mt19937_64 rng(o.seed + N);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    // Constant station density: the patch grows with N.
    const double half = 0.05 * std::sqrt(static_cast<double>(N));
    std::vector<GeoPoint> points;
    std::vector<std::vector<double>> feats(N, std::vector<double>(kFeat));
    for (std::size_t i = 0; i < N; ++i) {
      points.push_back(GeoPoint::make(std::clamp(20.0 + half * u(rng), -89.0, 89.0),
                                      std::clamp(100.0 + half * u(rng), -179.0, 179.0)));
      for (double& f : feats[i]) f = u(rng);
    }
    StationInputs st;
    const auto build_start = Clock::now();
    st.graph = build_hybrid_graph(points, feats, o.k_geo, o.k_sem, cfg.kappa_km);
    const double build_ms = ms_since(build_start);
    const std::size_t static_dim = cfg.fourier_dim() + kContextDim + kGeoFeatures;
    st.id_static = Tensor({N, static_dim});
    for (double& v : st.id_static.data) v = u(rng);
    st.grades.resize(N);
    for (std::size_t i = 0; i < N; ++i) st.grades[i] = static_cast<int>(i % kGrades);

    const ModelParams params = init_model_params(cfg, static_dim, kChannels, o.seed);
    Tensor inputs({1, cfg.input_steps, N, kChannels});
    for (double& v : inputs.data) v = u(rng);

    std::vector<double> times;
    for (std::size_t r = 0; r <= o.repeats; ++r) {
      const auto start = Clock::now();
      Tape tape;
      const BoundParams p(tape, params, false);
      const Var y = forward(p, cfg, st, inputs).yhat;
      const double ms = ms_since(start);
      if (!std::isfinite(y.value()[0])) throw std::runtime_error("bench: non-finite forecast");
      if (r > 0) times.push_back(ms);  // r == 0 is the warm-up
    }
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size();
    const double median = m % 2 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
    report.rows.push_back({N, o.k_geo + o.k_sem, st.graph.edges(), median, build_ms, peak_rss_kb()});
  }
  std::vector<double> xs, ys;
  for (const auto& r : report.rows) {
    xs.push_back(static_cast<double>(r.stations));
    ys.push_back(r.forward_ms);
  }
  report.slope = loglog_slope(xs, ys);
  return report;
}

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "stations,k,edges,forward_ms,build_ms,peak_rss_kb\n";
  for (const auto& r : report.rows)
    out << r.stations << ',' << r.k << ',' << r.edges << ',' << csv::format_double(r.forward_ms) << ','
        << csv::format_double(r.build_ms) << ','
        << (r.peak_rss_kb ? std::to_string(*r.peak_rss_kb) : "") << '\n';
  out << "# slope," << csv::format_double(report.slope) << '\n';
}

void write_bench_plot(const std::filesystem::path& path, const BenchReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : report.rows)
    out << csv::format_double(std::log(static_cast<double>(r.stations))) << ' '
        << csv::format_double(std::log(r.forward_ms)) << '\n';
}

}  // namespace omniair
