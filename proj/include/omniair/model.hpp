#pragma once

// The full forecasting network: identity encoder, edge weights, diffusion,
// aggregation, gate and head, wired on one tape.

#include <optional>
#include <vector>

#include "omniair/config.hpp"
#include "omniair/data.hpp"
#include "omniair/encoder.hpp"
#include "omniair/params.hpp"
#include "omniair/propagation.hpp"
#include "omniair/topology.hpp"

namespace omniair {

/// Per-station inputs that do not change between batches.
struct StationInputs {
  Tensor id_static;  // (N, fourier_dim + 16)
  std::vector<int> grades;
  HybridGraph graph;

  std::size_t stations() const { return grades.size(); }
};

struct ForwardOptions {
  /// Replace the learned aggregation coefficients (one per diffusion state).
  std::optional<std::vector<double>> forced_coeffs;
};

struct ForwardTrace {
  Var h0;     // (B,T,N,D)
  Var e_id;   // (N,D)
  EdgeWeights edges;
  std::vector<Var> stack;
  AggregateResult agg;
  Var z;      // fused state before the gate
  GateOutput gate;
  Var yhat;   // (B,tau,N,C), normalized units
};

ModelParams init_model_params(const RunConfig& cfg, std::size_t static_dim, std::size_t channels,
                              std::uint64_t seed);

/// `inputs` is (B,T,N,C) normalized and zero-imputed.
ForwardTrace forward(const BoundParams& p, const RunConfig& cfg, const StationInputs& st,
                     const Tensor& inputs, const ForwardOptions& options = {});

/// Targets z-scored with the given statistics (zero where invalid).
Tensor normalized_targets(const WindowBatch& batch, const NormStats& stats);

/// sum |yhat - y| * valid / max(sum valid, 1).
Var masked_mae(Var yhat, const Tensor& targets, const Tensor& valid);

/// Forecast in raw units for a batch, parameters as constants.
Tensor predict_raw(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                   const WindowBatch& batch, const NormStats& stats);

}  // namespace omniair
