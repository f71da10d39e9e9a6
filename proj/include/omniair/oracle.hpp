#pragma once

// Ground truth for tests: a graph reaction-diffusion simulator, a dense
// O(N^2) reference forward pass, and empirical checks of the Fourier
// kernel limit and the encoder Lipschitz bound.

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "omniair/config.hpp"
#include "omniair/data.hpp"
#include "omniair/model.hpp"

namespace omniair {

struct RDSource {
  std::size_t node = 0;
  double amplitude = 0.0;
  /// Emits during the first `on_steps` of every `period` steps, shifted by
  /// `phase`. period 0 means always on.
  std::size_t period = 0;
  std::size_t on_steps = 0;
  std::size_t phase = 0;

  double at(std::size_t t) const;
};

struct RDScenario {
  std::size_t stations = 20;
  double center_lat = 30.0, center_lon = 110.0, span_deg = 4.0;
  /// Neighbors per node in the symmetric k-NN graph behind the Laplacian;
  /// 0 isolates every node.
  std::size_t graph_k = 6;
  double kappa_km = 100.0;
  double diffusion = 0.05;
  double decay = 0.05;
  double dt = 1.0;
  double background = 1.0;  // constant source at every node
  std::vector<RDSource> sources;
  std::size_t steps = 400;
  double initial = 20.0;  // mean initial concentration
  double noise_std = 0.5;
  double missing_rate = 0.02;
  std::uint64_t seed = 7;
  std::int64_t start_day = 18262;  // 2020-01-01
};

/// Random periodic sources at distinct nodes, seeded.
std::vector<RDSource> random_sources(std::size_t stations, std::size_t count, std::uint64_t seed);

/// Explicit-Euler system C <- C + dt (-D L C + S - gamma C) on a fixed graph.
class RDSystem {
 public:
  /// Throws std::invalid_argument when dt (D * 2 max_rowsum + gamma) >= 1.
  RDSystem(std::vector<GeoPoint> points, std::size_t graph_k, double kappa_km, double diffusion,
           double decay, double dt);

  std::size_t size() const { return points_.size(); }
  const std::vector<GeoPoint>& points() const { return points_; }
  /// Symmetric Gaussian adjacency as (row, col, weight) triples.
  const std::vector<std::array<double, 3>>& adjacency() const { return adj_; }
  double max_row_sum() const { return max_row_sum_; }
  /// Left side of the stability condition.
  double stability_bound() const;

  std::vector<double> laplacian_apply(const std::vector<double>& c) const;
  std::vector<double> step(const std::vector<double>& c, const std::vector<double>& s) const;

 private:
  std::vector<GeoPoint> points_;
  std::vector<std::array<double, 3>> adj_;
  std::vector<double> degree_;
  double max_row_sum_ = 0.0;
  double diffusion_, decay_, dt_;
};

struct RDResult {
  std::vector<StationMeta> stations;
  SeriesFrame frame;
  /// Noise-free first-channel trajectory, (steps x stations).
  std::vector<std::vector<double>> clean;
};

std::vector<GeoPoint> random_points(const RDScenario& sc);
RDResult simulate_rd(const RDScenario& sc);

/// Pollution grade from mean PM2.5 (breakpoints 12, 35.4, 55.4, 150.4, 250.4).
int grade_from_pm25(double mean_pm25);

struct DenseResult {
  std::vector<Tensor> adjacency;  // per batch element, (N, N)
  std::vector<std::vector<Tensor>> states;  // [l][b*T + t] (N, D)
  Tensor yhat;                    // (B,tau,N,C) normalized units
};

/// Reference forward pass with dense N x N matrices (N <= 64).
DenseResult dense_forward(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                          const Tensor& inputs,
                          const std::optional<std::vector<double>>& forced_coeffs = std::nullopt);

struct KernelRow {
  std::size_t levels = 0;
  double mean_abs_dev = 0.0;
};

/// Pairs of normalized 2-d coordinates, seeded; each coordinate in
/// [-extent, extent].
std::vector<std::pair<std::array<double, 2>, std::array<double, 2>>> kernel_pairs(
    std::size_t count, double extent, std::uint64_t seed);

/// Mean |<γ(x),γ(y)> - exp(-2π² σ² |x-y|²)| per M, gaussian-mode maps.
std::vector<KernelRow> check_kernel(
    double bandwidth, std::span<const std::pair<std::array<double, 2>, std::array<double, 2>>> pairs,
    std::span<const std::size_t> levels, std::uint64_t seed);

/// Largest singular value by power iteration on WᵀW.
double spectral_norm(const Tensor& w, std::size_t iterations = 100, std::uint64_t seed = 0);

struct LipschitzReport {
  double max_ratio = 0.0;
  double bound = 0.0;
  std::size_t violations = 0;
  std::size_t pairs = 0;
};

/// Plain MLP x -> W_k^T ... tanh(W_1^T x + b_1) ... + b_k with row-vector
/// convention (weights stored (in, out)).
struct MlpLayers {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

std::vector<double> mlp_apply(const MlpLayers& mlp, const std::vector<double>& x);

/// Ratio |Φ(x)-Φ(y)| / |x-y| against prod |W_l|_2 (1 + slack) for each pair.
LipschitzReport check_lipschitz(const MlpLayers& mlp,
                                std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs,
                                double slack = 1e-6, std::size_t iterations = 100);

/// Same check on the engine's identity encoder.
LipschitzReport check_identity_lipschitz(
    const ModelParams& params,
    std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs,
    double slack = 1e-6, std::size_t iterations = 100);

}  // namespace omniair
