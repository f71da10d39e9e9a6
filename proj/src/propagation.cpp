#include "omniair/propagation.hpp"

#include <cmath>
#include <stdexcept>

#include "omniair/kernels.hpp"

namespace omniair {

Var graph_propagate(const HybridGraph& g, Var w, Var x) {
  Tape& tape = *x.tape();
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[2] != g.nodes)
    throw std::invalid_argument("graph_propagate: states must be (B,T,N,D) with N = " +
                                std::to_string(g.nodes) + ", got " + shape_str(xs));
  const std::size_t B = xs[0], T = xs[1], D = xs[3];
  if (w.shape() != Shape{B * g.edges(), 1})
    throw std::invalid_argument("graph_propagate: weights must be (B*E, 1), got " +
                                shape_str(w.shape()));
  const kernels::SpmmArgs args{g.csr(), B * T, T, D};
  Tensor y(xs);
  kernels::parallel::spmm(args, w.value().data, x.value().data, y.data);
  return tape.record(std::move(y), {w, x}, [&g, args, w, x](Tape& tp, const std::vector<double>& dy) {
    if (auto* dx = tp.grad_target(x))
      kernels::parallel::spmm_transpose_acc(args, g.transpose(), g.owner, w.value().data, dy, *dx);
    if (auto* dw = tp.grad_target(w))
      kernels::parallel::edge_dot_acc(args, g.owner, dy, x.value().data, *dw);
  });
}

std::vector<Var> diffuse(const HybridGraph& g, Var w, Var h0, std::size_t steps, double lambda) {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw std::invalid_argument("diffuse: lambda must lie in [0, 1)");
  std::vector<Var> stack{h0};
  const Var restart = scale(h0, lambda);
  for (std::size_t l = 1; l <= steps; ++l) stack.push_back(add(graph_propagate(g, w, stack.back()), restart));
  return stack;
}

AggregateResult signed_aggregate(const std::vector<Var>& stack, const BoundParams& p,
                                 std::size_t heads, AggregationMode mode,
                                 const std::optional<std::vector<double>>& forced) {
  if (stack.empty()) throw std::invalid_argument("signed_aggregate: empty diffusion stack");
  Tape& tape = *stack.front().tape();
  const Shape state_shape = stack.front().shape();
  const std::size_t D = state_shape.back();
  const std::size_t rows = stack.front().size() / D;
  const std::size_t steps = stack.size();
  if (heads == 0 || D % heads != 0)
    throw std::invalid_argument("signed_aggregate: head count " + std::to_string(heads) +
                                " does not divide D = " + std::to_string(D));
  if (forced && forced->size() != steps)
    throw std::invalid_argument("signed_aggregate: forced coefficients need one value per step");
  const std::size_t dh = D / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Var> flat;
  for (const Var& h : stack) flat.push_back(reshape(h, {rows, D}));

  const Var wq_all = p["agg.W_Q"];
  const Var wk_all = p["agg.W_K"];
  const Var bias = p["agg.step_bias"];
  if (wq_all.shape() != Shape{heads, dh, dh} || bias.shape() != Shape{1, steps})
    throw std::invalid_argument("signed_aggregate: parameter shapes do not match heads/steps");

  AggregateResult out;
  std::vector<Var> head_out;
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<Var> hs;
    for (const Var& f : flat) hs.push_back(slice(f, 1, h * dh, dh));
    Var c;
    if (forced) {
      c = tape.constant(Tensor({1, steps}, *forced));
    } else {
      const Var wq = reshape(slice(wq_all, 0, h, 1), {dh, dh});
      const Var wk = reshape(slice(wk_all, 0, h, 1), {dh, dh});
      Var q = matmul(hs[0], wq);
      for (std::size_t l = 1; l < steps; ++l) q = add(q, matmul(hs[l], wq));
      q = scale(q, 1.0 / static_cast<double>(steps));
      std::vector<Var> scores;
      for (std::size_t l = 0; l < steps; ++l)
        scores.push_back(scale(sum(mul(q, matmul(hs[l], wk)), 1), inv_sqrt));
      const Var s = concat(scores, 1);
      c = mode == AggregationMode::Signed ? mul(tanh(s), bias) : softmax(s, 1);
    }
    Var z = mul(slice(c, 1, 0, 1), hs[0]);
    for (std::size_t l = 1; l < steps; ++l) z = add(z, mul(slice(c, 1, l, 1), hs[l]));
    head_out.push_back(z);
    out.coeffs.push_back(c);
  }
  out.z = reshape(heads == 1 ? head_out.front() : concat(head_out, 1), state_shape);
  return out;
}

Var softmax_fusion(const std::vector<Var>& stack, Var fusion_w) {
  if (fusion_w.shape() != Shape{1, stack.size()})
    throw std::invalid_argument("softmax_fusion: fusion weights must be (1, L+1)");
  const Var a = softmax(fusion_w, 1);
  Var z = mul(reshape(slice(a, 1, 0, 1), {1}), stack[0]);
  for (std::size_t l = 1; l < stack.size(); ++l) z = add(z, mul(reshape(slice(a, 1, l, 1), {1}), stack[l]));
  return z;
}

GateOutput identity_gate(Var z, Var e_id, const BoundParams& p) {
  const Shape& zs = z.shape();
  if (zs.size() != 4) throw std::invalid_argument("identity_gate: z must be (B,T,N,D)");
  const std::size_t N = zs[2], D = zs[3], rows = z.size() / D;
  if (e_id.shape() != Shape{N, D})
    throw std::invalid_argument("identity_gate: identity embedding " + shape_str(e_id.shape()) +
                                " does not match (N, D) = (" + std::to_string(N) + ", " +
                                std::to_string(D) + ")");
  std::vector<std::size_t> station(rows);
  for (std::size_t r = 0; r < rows; ++r) station[r] = r % N;
  const Var zf = reshape(z, {rows, D});
  const Var e = gather(e_id, station);
  GateOutput out;
  out.gate = sigmoid(add(matmul(concat({zf, e}, 1), p["gate.W"]), p["gate.b"]));
  out.zhat = reshape(add(e, mul(out.gate, sub(zf, e))), zs);
  return out;
}

Var forecast_head(Var zhat, const BoundParams& p, std::size_t horizon, std::size_t channels) {
  const Shape& s = zhat.shape();
  if (s.size() != 4) throw std::invalid_argument("forecast_head: input must be (B,T,N,D)");
  const std::size_t B = s[0], T = s[1], N = s[2], D = s[3];
  const Var w1 = p["head.W1"];
  const Var w2 = p["head.W2"];
  if (w1.shape().at(0) != T * D || w2.shape().at(1) != horizon * channels)
    throw std::invalid_argument("forecast_head: parameter shapes do not match T*D = " +
                                std::to_string(T * D) + " and tau*C = " +
                                std::to_string(horizon * channels));
  // (B,T,N,D) -> rows (b,n,t) of width D -> (B*N, T*D)
  std::vector<std::size_t> in_rows(B * N * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < T; ++t) in_rows[(b * N + n) * T + t] = (b * T + t) * N + n;
  const Var x = reshape(gather(reshape(zhat, {B * T * N, D}), in_rows), {B * N, T * D});
  const Var hidden = relu(add(matmul(x, w1), p["head.b1"]));
  const Var y = reshape(add(matmul(hidden, w2), p["head.b2"]), {B * N * horizon, channels});
  // rows (b,n,k) -> (b,k,n)
  std::vector<std::size_t> out_rows(B * horizon * N);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < horizon; ++k)
      for (std::size_t n = 0; n < N; ++n) out_rows[(b * horizon + k) * N + n] = (b * N + n) * horizon + k;
  return reshape(gather(y, out_rows), {B, horizon, N, channels});
}

void init_propagation_params(ModelParams& params, const RunConfig& cfg, std::size_t channels,
                             std::mt19937_64& rng) {
  const std::size_t D = cfg.d_model, dh = D / cfg.heads, steps = cfg.diffusion_steps + 1;
  params.add("agg.W_Q", xavier_uniform({cfg.heads, dh, dh}, rng));
  params.add("agg.W_K", xavier_uniform({cfg.heads, dh, dh}, rng));
  params.add("agg.step_bias", Tensor({1, steps}, 1.0));
  params.add("fusion.w", Tensor({1, steps}));
  params.add("gate.W", xavier_uniform({2 * D, D}, rng));
  params.add("gate.b", Tensor({1, D}));
  params.add("head.W1", xavier_uniform({cfg.input_steps * D, cfg.head_hidden}, rng));
  params.add("head.b1", Tensor({1, cfg.head_hidden}));
  params.add("head.W2", xavier_uniform({cfg.head_hidden, cfg.horizon * channels}, rng));
  params.add("head.b2", Tensor({1, cfg.horizon * channels}));
}

}  // namespace omniair
