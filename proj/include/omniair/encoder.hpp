#pragma once

// Inductive station identity: Fourier coordinate features, neighborhood
// context statistics, grade embedding and the identity MLP.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "omniair/data.hpp"
#include "omniair/geo.hpp"
#include "omniair/params.hpp"
#include "omniair/tensor.hpp"

namespace omniair {

enum class FourierMode { Deterministic, Gaussian };

struct FourierConfig {
  std::size_t levels = 8;
  FourierMode mode = FourierMode::Deterministic;
  double bandwidth = 1.0;  // gaussian mode
  double base = 1.0;       // deterministic mode
  std::uint64_t seed = 0;  // gaussian mode
};

/// Unit-norm multi-scale features of a point. Coordinates are first scaled
/// to (lat/90, lon/180).
class FourierMap {
 public:
  explicit FourierMap(const FourierConfig& cfg);

  std::size_t dim() const;
  std::vector<double> operator()(const GeoPoint& p) const;
  /// Same mapping on already-normalized coordinates.
  std::vector<double> map_normalized(double x, double y) const;

  const FourierConfig& config() const { return cfg_; }

 private:
  FourierConfig cfg_;
  std::vector<std::array<double, 2>> freqs_;  // gaussian mode
};

std::vector<double> fourier_map(const GeoPoint& p, const FourierConfig& cfg);

inline constexpr std::size_t kContextDim = 10;

struct NeighborContext {
  double mu = 0.0;
  double sigma = 0.0;
  double delta_c = 0.0;
  double delta_self = 0.0;
  std::array<double, kGrades> level_dist{};
  /// Pollution-weighted centroid the offset was measured to.
  GeoPoint centroid;
  /// True when no neighbor had usable history and global means were used.
  bool fallback = false;

  std::array<double, kContextDim> as_array() const;
};

/// Historical mean of `channel` per station over valid entries; nullopt for
/// stations with no valid entry.
std::vector<std::optional<double>> station_means(const SeriesFrame& train, std::size_t channel = 0);

/// Context of station `i` from its geographic neighbors. `means` comes from
/// the training split only.
NeighborContext neighbor_context(std::size_t i, std::span<const GeoPoint> points,
                                 std::span<const std::optional<double>> means,
                                 std::span<const int> grades,
                                 std::span<const Neighbor> neighbors);

/// Contexts for every station of a training frame using geo k-NN lists.
std::vector<NeighborContext> neighbor_contexts(std::span<const StationMeta> stations,
                                               const SeriesFrame& train, std::size_t k);

/// Context for a new point borrowed from the nearest anchor (ties to the
/// lower index), with delta_self = 0 and delta_c measured from `p_new`.
NeighborContext anchor_context(const GeoPoint& p_new, std::span<const GeoPoint> anchors,
                               std::span<const NeighborContext> anchor_contexts);

/// Grade used for a station of unknown grade: argmax of the context's
/// level distribution (lowest grade on ties).
int grade_from_context(const NeighborContext& ctx);

/// z-scoring statistics for geo features and the four scalar context fields,
/// fitted on the training stations.
struct EncoderStats {
  std::array<double, kGeoFeatures> geo_mean{}, geo_std{};
  std::array<double, 4> ctx_mean{}, ctx_std{};

  static EncoderStats fit(std::span<const StationMeta> stations,
                          std::span<const NeighborContext> contexts);
};

/// Static (non-trainable) identity inputs: fourier ⊕ context ⊕ z-scored geo.
/// Returns (N, fourier_dim + 16).
Tensor identity_static_inputs(std::span<const StationMeta> stations,
                              std::span<const NeighborContext> contexts, const EncoderStats& stats,
                              const FourierMap& fourier);

/// Static inputs with a one-hot grade appended; the fixed features used for
/// semantic neighbor search.
std::vector<std::vector<double>> semantic_features(const Tensor& static_inputs,
                                                   std::span<const int> grades);

struct IdentityShape {
  std::size_t static_dim = 0;  // fourier_dim + 16
  std::size_t grade_embed = 16;
  std::size_t hidden = 64;
  std::size_t out = 64;
  std::size_t input() const { return static_dim + grade_embed; }
};

/// Adds id.W1, id.b1, id.W2, id.b2 and id.grade_table.
void init_identity_params(ModelParams& params, const IdentityShape& shape, std::mt19937_64& rng);

/// Full MLP input: static inputs ⊕ grade embedding rows.
Var identity_input(Var static_inputs, Var grade_table, std::span<const int> grades);

/// e_ID = W2ᵀ tanh(W1ᵀ x + b1) + b2 per row of `input` (N, input) -> (N, out).
Var encode_identity(Var input, const BoundParams& p);

}  // namespace omniair
