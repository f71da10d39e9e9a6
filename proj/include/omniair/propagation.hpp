#pragma once

// Restart diffusion over the pruned graph, signed aggregation of the
// diffusion states, multi-scale fusion, the identity gate and the forecast
// head.

#include <optional>
#include <random>
#include <vector>

#include "omniair/config.hpp"
#include "omniair/params.hpp"
#include "omniair/tensor.hpp"
#include "omniair/topology.hpp"

namespace omniair {

/// y[b,t,i,:] = sum_e w[b*E + e] * x[b,t,targets[e],:] over the edges owned by
/// node i. x is (B,T,N,D); w is (B*E, 1), one weight set per batch element.
Var graph_propagate(const HybridGraph& g, Var w, Var x);

/// H^(0) = h0, H^(l) = propagate(H^(l-1)) + lambda * H^(0) for l = 1..L.
std::vector<Var> diffuse(const HybridGraph& g, Var w, Var h0, std::size_t steps, double lambda);

struct AggregateResult {
  Var z;                    // same shape as the states
  std::vector<Var> coeffs;  // per head, (rows, L+1)
};

/// Per head and row: q = mean_l H^(l) W_Q, score_l = q·(H^(l) W_K)/sqrt(d_k).
/// Signed mode: c_l = tanh(score_l) * b_l. Positive mode: c = softmax(score).
/// `forced` replaces the coefficients for every row and head.
AggregateResult signed_aggregate(const std::vector<Var>& stack, const BoundParams& p,
                                 std::size_t heads, AggregationMode mode,
                                 const std::optional<std::vector<double>>& forced = std::nullopt);

/// sum_l softmax(w)_l H^(l).
Var softmax_fusion(const std::vector<Var>& stack, Var fusion_w);

struct GateOutput {
  Var gate;  // (B*T*N, D)
  Var zhat;  // (B,T,N,D)
};

/// zhat = g * z + (1 - g) * e_ID with g = sigmoid(W_g [z ‖ e_ID] + b_g);
/// e_ID is (N, D), broadcast over batch and time.
GateOutput identity_gate(Var z, Var e_id, const BoundParams& p);

/// Per station: flatten (T*D) -> hidden (relu) -> (tau*C). Returns (B,tau,N,C).
Var forecast_head(Var zhat, const BoundParams& p, std::size_t horizon, std::size_t channels);

/// Adds agg.*, fusion.w, gate.* and head.* parameters.
void init_propagation_params(ModelParams& params, const RunConfig& cfg, std::size_t channels,
                             std::mt19937_64& rng);

}  // namespace omniair
