#pragma once

// Hybrid candidate graph (geographic + semantic neighbors) and the learned,
// input-conditioned edge weights: signed attention, static/dynamic gate,
// rank-based soft pruning and normalization.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "omniair/config.hpp"
#include "omniair/geo.hpp"
#include "omniair/kernels.hpp"
#include "omniair/params.hpp"
#include "omniair/tensor.hpp"

namespace omniair {

enum class EdgeKind : std::uint8_t { Geo = 0, Semantic = 1 };

/// Fixed candidate structure. Node i owns edges offsets[i]..offsets[i+1]-1
/// and receives messages from their targets. Geo edges come first, in
/// ascending distance; semantic edges follow in ascending embedding distance.
struct HybridGraph {
  std::size_t nodes = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> targets;
  std::vector<EdgeKind> kinds;
  std::vector<double> w_static;
  std::vector<double> km;
  /// Owning node of each edge.
  std::vector<std::size_t> owner;
  /// Edge ids grouped by target node (ascending edge id within a group).
  std::vector<std::size_t> in_offsets{0};
  std::vector<std::size_t> in_edges;

  static HybridGraph empty(std::size_t nodes);

  std::size_t edges() const { return targets.size(); }
  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }

  kernels::CsrView csr() const { return {offsets, targets}; }
  kernels::CsrView transpose() const { return {in_offsets, in_edges}; }

  /// Rebuilds owner and the transpose index from offsets/targets.
  void finalize();
  /// Throws std::invalid_argument on self edges, duplicates or bad indices.
  void check() const;

  bool same_structure(const HybridGraph& other) const {
    return nodes == other.nodes && offsets == other.offsets && targets == other.targets &&
           kinds == other.kinds;
  }
};

/// Geo edges from exact k-NN, semantic edges by smallest Euclidean distance
/// between `features` rows (self and geo neighbors excluded, ties to the
/// lower index). Static weights exp(-d^2 / 2 kappa^2).
HybridGraph build_hybrid_graph(std::span<const GeoPoint> points,
                               std::span<const std::vector<double>> features, std::size_t k_geo,
                               std::size_t k_sem, double kappa_km);

/// Appends `new_points` as nodes that receive edges from base nodes only.
/// Base nodes keep their edges unchanged and gain no edges.
HybridGraph attach_nodes(const HybridGraph& base, std::span<const GeoPoint> base_points,
                         std::span<const std::vector<double>> base_features,
                         std::span<const GeoPoint> new_points,
                         std::span<const std::vector<double>> new_features, std::size_t k_geo,
                         std::size_t k_sem, double kappa_km);

/// Replaces every node's semantic edges using new features, keeping geo edges.
HybridGraph refresh_semantic(const HybridGraph& graph, std::span<const GeoPoint> points,
                             std::span<const std::vector<double>> features, std::size_t k_sem,
                             double kappa_km);

/// CSV `src,dst,kind,km,w_static`; src is the receiving node.
void write_graph_csv(const std::filesystem::path& path, const HybridGraph& g,
                     std::span<const std::string> ids);

/// Per-edge signed attention: tanh(aᵀ leaky_relu(W_e [h_i ‖ h_j])). Inputs are
/// edge-aligned (rows, D); returns (rows, 1). W_e is stored (2D, D').
Var dynamic_attention(Var h_i, Var h_j, Var w_e, Var a);

struct GateResult {
  Var gate;   // (rows, 1) in (0, 1)
  Var w_dyn;  // g * w_static + (1 - g) * alpha
};

/// Gate over [h_i ‖ h_j ‖ w_static] with weights (2D+1, 1) and bias (1, 1).
GateResult fuse_gate(Var h_i, Var h_j, Var w_static, Var alpha, Var gate_w, Var gate_b);

/// 1-based ranks per owner group, descending by |w| (or signed w), ties to
/// the lower target index. `w` has one value per edge per group copy:
/// w[b * E + e] for b in [0, copies).
std::vector<double> edge_ranks(const HybridGraph& g, std::span<const double> w, RankMode mode);

struct PruneResult {
  Var beta;     // (copies * N, 1)
  Var ranks;    // (copies * E, 1) constant
  Var mask;     // (copies * E, 1)
  Var w_tilde;  // (copies * E, 1)
};

/// Soft rank mask sigmoid(-eta (r - beta)) and normalization of w_dyn * m per
/// owner. `beta` is (copies * N, 1); `owner_rows` maps edge rows to beta rows.
PruneResult prune_and_normalize(const HybridGraph& g, std::size_t copies, Var w_dyn, Var beta,
                                double eta, NormMode norm, double eps, RankMode rank);

/// beta = k_max * sigmoid(MLP(h)) with one tanh hidden layer.
Var prune_threshold(Var h, const BoundParams& p, double k_max);

struct EdgeWeights {
  Var alpha, gate, w_dyn, beta, ranks, mask, w_tilde;
};

/// All edge quantities for `copies` independent node-state sets `h`
/// ((copies * N, D), row b*N + n).
EdgeWeights edge_weights(const HybridGraph& g, std::size_t copies, Var h, const BoundParams& p,
                         const RunConfig& cfg);

/// Adds edge.* and prune.* parameters.
void init_topology_params(ModelParams& params, std::size_t d_model, const RunConfig& cfg,
                          std::mt19937_64& rng);

}  // namespace omniair
