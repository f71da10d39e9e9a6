#include "omniair/model.hpp"

#include <stdexcept>

namespace omniair {

ModelParams init_model_params(const RunConfig& cfg, std::size_t static_dim, std::size_t channels,
                              std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.add("input.W", xavier_uniform({channels, cfg.d_model}, rng));
  p.add("input.b", Tensor({1, cfg.d_model}));
  init_identity_params(p, IdentityShape{static_dim, cfg.grade_embed, cfg.id_hidden, cfg.id_dim}, rng);
  init_topology_params(p, cfg.d_model, cfg, rng);
  init_propagation_params(p, cfg, channels, rng);
  return p;
}

ForwardTrace forward(const BoundParams& p, const RunConfig& cfg, const StationInputs& st,
                     const Tensor& inputs, const ForwardOptions& options) {
  Tape& tape = p.tape();
  if (inputs.rank() != 4 || inputs.dim(2) != st.stations() || st.graph.nodes != st.stations())
    throw std::invalid_argument("forward: inputs " + shape_str(inputs.shape) +
                                " do not match the station set (" +
                                std::to_string(st.stations()) + " stations)");
  const std::size_t B = inputs.dim(0), T = inputs.dim(1), N = inputs.dim(2), C = inputs.dim(3);
  const std::size_t D = cfg.d_model;

  ForwardTrace tr;
  const Var x = tape.constant(inputs);
  tr.h0 = reshape(add(matmul(reshape(x, {B * T * N, C}), p["input.W"]), p["input.b"]), {B, T, N, D});

  const Var id_in = identity_input(tape.constant(st.id_static), p["id.grade_table"], st.grades);
  tr.e_id = encode_identity(id_in, p);

  const Var h_edge = cfg.edge_features == EdgeFeatures::Last
                         ? reshape(slice(tr.h0, 1, T - 1, 1), {B * N, D})
                         : reshape(mean(tr.h0, 1), {B * N, D});
  tr.edges = edge_weights(st.graph, B, h_edge, p, cfg);

  tr.stack = diffuse(st.graph, tr.edges.w_tilde, tr.h0, cfg.diffusion_steps, cfg.lambda);
  switch (cfg.fusion) {
    case FusionMode::Signed:
      tr.agg = signed_aggregate(tr.stack, p, cfg.heads, cfg.aggregation, options.forced_coeffs);
      tr.z = tr.agg.z;
      break;
    case FusionMode::Softmax:
      tr.z = softmax_fusion(tr.stack, p["fusion.w"]);
      break;
    case FusionMode::Sum:
      tr.agg = signed_aggregate(tr.stack, p, cfg.heads, cfg.aggregation, options.forced_coeffs);
      tr.z = add(tr.agg.z, softmax_fusion(tr.stack, p["fusion.w"]));
      break;
  }
  tr.gate = identity_gate(tr.z, tr.e_id, p);
  tr.yhat = forecast_head(tr.gate.zhat, p, cfg.horizon, C);
  return tr;
}

Tensor normalized_targets(const WindowBatch& batch, const NormStats& stats) {
  Tensor out(batch.targets.shape);
  const std::size_t N = batch.stations, C = batch.channels;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (batch.target_valid[i] == 0.0) continue;
    const std::size_t c = i % C, n = (i / C) % N;
    out[i] = stats.normalize(batch.targets[i], n, c);
  }
  return out;
}

Var masked_mae(Var yhat, const Tensor& targets, const Tensor& valid) {
  if (yhat.shape() != targets.shape || targets.shape != valid.shape)
    throw std::invalid_argument("masked_mae: shapes differ: " + shape_str(yhat.shape()) + " vs " +
                                shape_str(targets.shape));
  Tape& tape = *yhat.tape();
  double count = 0.0;
  for (double v : valid.data) count += v;
  const Var err = mul(abs(sub(yhat, tape.constant(targets))), tape.constant(valid));
  return scale(sum_all(err), 1.0 / std::max(count, 1.0));
}

Tensor predict_raw(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                   const WindowBatch& batch, const NormStats& stats) {
  Tape tape;
  const BoundParams bound(tape, params, false);
  Tensor y = forward(bound, cfg, st, batch.inputs).yhat.value();
  const std::size_t N = batch.stations, C = batch.channels;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t c = i % C, n = (i / C) % N;
    y[i] = stats.denormalize(y[i], n, c);
  }
  return y;
}

}  // namespace omniair
