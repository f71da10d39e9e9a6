#include "omniair/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "csv.hpp"

namespace omniair {

HybridGraph HybridGraph::empty(std::size_t nodes) {
  HybridGraph g;
  g.nodes = nodes;
  g.offsets.assign(nodes + 1, 0);
  g.finalize();
  return g;
}

void HybridGraph::finalize() {
  owner.resize(edges());
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) owner[e] = i;
  in_offsets.assign(nodes + 1, 0);
  for (std::size_t t : targets) ++in_offsets[t + 1];
  std::partial_sum(in_offsets.begin(), in_offsets.end(), in_offsets.begin());
  in_edges.assign(edges(), 0);
  std::vector<std::size_t> fill(in_offsets.begin(), in_offsets.end() - 1);
  for (std::size_t e = 0; e < edges(); ++e) in_edges[fill[targets[e]]++] = e;
}

void HybridGraph::check() const {
  if (offsets.size() != nodes + 1 || offsets.back() != targets.size() ||
      kinds.size() != targets.size() || w_static.size() != targets.size() ||
      km.size() != targets.size() || owner.size() != targets.size())
    throw std::invalid_argument("hybrid graph: inconsistent array sizes");
  for (std::size_t i = 0; i < nodes; ++i) {
    std::vector<std::size_t> seen;
    for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
      if (targets[e] >= nodes) throw std::invalid_argument("hybrid graph: target out of range");
      if (targets[e] == i) throw std::invalid_argument("hybrid graph: self edge at node " + std::to_string(i));
      seen.push_back(targets[e]);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
      throw std::invalid_argument("hybrid graph: duplicate target at node " + std::to_string(i));
  }
}

namespace {

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("semantic features differ in width");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// k smallest feature distances from `query` over pool rows, skipping `exclude`.
std::vector<std::size_t> semantic_nearest(const std::vector<double>& query,
                                          std::span<const std::vector<double>> pool,
                                          std::span<const std::size_t> exclude, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(pool.size());
  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (std::find(exclude.begin(), exclude.end(), j) != exclude.end()) continue;
    cand.emplace_back(sq_distance(query, pool[j]), j);
  }
  k = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < k; ++r) out.push_back(cand[r].second);
  return out;
}

struct NodeEdges {
  std::vector<std::size_t> targets;
  std::vector<EdgeKind> kinds;
};

void append_node(HybridGraph& g, const NodeEdges& ne, const GeoPoint& self,
                 std::span<const GeoPoint> target_points, double kappa_km) {
  for (std::size_t r = 0; r < ne.targets.size(); ++r) {
    const double d = haversine_km(self, target_points[ne.targets[r]]);
    g.targets.push_back(ne.targets[r]);
    g.kinds.push_back(ne.kinds[r]);
    g.km.push_back(d);
    g.w_static.push_back(gaussian_static_weight(d, kappa_km));
  }
  g.offsets.push_back(g.targets.size());
}

}  // namespace

HybridGraph build_hybrid_graph(std::span<const GeoPoint> points,
                               std::span<const std::vector<double>> features, std::size_t k_geo,
                               std::size_t k_sem, double kappa_km) {
  const std::size_t n = points.size();
  if (features.size() != n) throw std::invalid_argument("build_hybrid_graph: feature count mismatch");
  if (n <= k_geo + k_sem)
    throw std::invalid_argument("build_hybrid_graph: need more than K_geo + K_sem = " +
                                std::to_string(k_geo + k_sem) + " stations, got " +
                                std::to_string(n));
  if (kappa_km <= 0) throw std::invalid_argument("build_hybrid_graph: kappa must be positive");
  std::vector<std::vector<Neighbor>> geo(n);
  if (k_geo > 0) geo = knn_geo(points, k_geo);
  std::vector<NodeEdges> per_node(n);
#pragma omp parallel for schedule(static) num_threads(kernels::workers())
  for (std::size_t i = 0; i < n; ++i) {
    NodeEdges& ne = per_node[i];
    for (const Neighbor& nb : geo[i]) {
      ne.targets.push_back(nb.index);
      ne.kinds.push_back(EdgeKind::Geo);
    }
    std::vector<std::size_t> exclude = ne.targets;
    exclude.push_back(i);
    for (std::size_t j : semantic_nearest(features[i], features, exclude, k_sem)) {
      ne.targets.push_back(j);
      ne.kinds.push_back(EdgeKind::Semantic);
    }
  }
  HybridGraph g;
  g.nodes = n;
  for (std::size_t i = 0; i < n; ++i) append_node(g, per_node[i], points[i], points, kappa_km);
  g.finalize();
  return g;
}

HybridGraph attach_nodes(const HybridGraph& base, std::span<const GeoPoint> base_points,
                         std::span<const std::vector<double>> base_features,
                         std::span<const GeoPoint> new_points,
                         std::span<const std::vector<double>> new_features, std::size_t k_geo,
                         std::size_t k_sem, double kappa_km) {
  if (base_points.size() != base.nodes || base_features.size() != base.nodes ||
      new_features.size() != new_points.size())
    throw std::invalid_argument("attach_nodes: inconsistent inputs");
  HybridGraph g = base;
  g.nodes = base.nodes + new_points.size();
  const std::size_t kg = std::min(k_geo, base.nodes);
  for (std::size_t m = 0; m < new_points.size(); ++m) {
    NodeEdges ne;
    if (kg > 0)
      for (const Neighbor& nb : nearest(base_points, new_points[m], kg)) {
        ne.targets.push_back(nb.index);
        ne.kinds.push_back(EdgeKind::Geo);
      }
    for (std::size_t j : semantic_nearest(new_features[m], base_features, ne.targets, k_sem)) {
      ne.targets.push_back(j);
      ne.kinds.push_back(EdgeKind::Semantic);
    }
    append_node(g, ne, new_points[m], base_points, kappa_km);
  }
  g.finalize();
  return g;
}

HybridGraph refresh_semantic(const HybridGraph& graph, std::span<const GeoPoint> points,
                             std::span<const std::vector<double>> features, std::size_t k_sem,
                             double kappa_km) {
  if (points.size() != graph.nodes || features.size() != graph.nodes)
    throw std::invalid_argument("refresh_semantic: inconsistent inputs");
  HybridGraph g;
  g.nodes = graph.nodes;
  for (std::size_t i = 0; i < graph.nodes; ++i) {
    NodeEdges ne;
    for (std::size_t e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e)
      if (graph.kinds[e] == EdgeKind::Geo) {
        ne.targets.push_back(graph.targets[e]);
        ne.kinds.push_back(EdgeKind::Geo);
      }
    std::vector<std::size_t> exclude = ne.targets;
    exclude.push_back(i);
    for (std::size_t j : semantic_nearest(features[i], features, exclude, k_sem)) {
      ne.targets.push_back(j);
      ne.kinds.push_back(EdgeKind::Semantic);
    }
    append_node(g, ne, points[i], points, kappa_km);
  }
  g.finalize();
  return g;
}

void write_graph_csv(const std::filesystem::path& path, const HybridGraph& g,
                     std::span<const std::string> ids) {
  if (ids.size() != g.nodes) throw std::invalid_argument("write_graph_csv: id count mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "src,dst,kind,km,w_static\n";
  for (std::size_t e = 0; e < g.edges(); ++e)
    out << ids[g.owner[e]] << ',' << ids[g.targets[e]] << ','
        << (g.kinds[e] == EdgeKind::Geo ? "geo" : "sem") << ',' << csv::format_double(g.km[e])
        << ',' << csv::format_double(g.w_static[e]) << '\n';
}

// ---------------------------------------------------------------- edge weights

Var dynamic_attention(Var h_i, Var h_j, Var w_e, Var a) {
  if (h_i.shape() != h_j.shape() || h_i.shape().size() != 2 ||
      w_e.shape().at(0) != 2 * h_i.shape()[1] || a.shape().at(0) != w_e.shape().at(1))
    throw std::invalid_argument("dynamic_attention: dimension mismatch");
  const Var pre = matmul(concat({h_i, h_j}, 1), w_e);
  return tanh(matmul(leaky_relu(pre, 0.1), a));
}

GateResult fuse_gate(Var h_i, Var h_j, Var w_static, Var alpha, Var gate_w, Var gate_b) {
  if (gate_w.shape().at(0) != 2 * h_i.shape().at(1) + 1)
    throw std::invalid_argument("fuse_gate: dimension mismatch");
  const Var g = sigmoid(add(matmul(concat({h_i, h_j, w_static}, 1), gate_w), gate_b));
  // g * ws + (1 - g) * alpha
  const Var w_dyn = add(alpha, mul(g, sub(w_static, alpha)));
  return {g, w_dyn};
}

std::vector<double> edge_ranks(const HybridGraph& g, std::span<const double> w, RankMode mode) {
  const std::size_t E = g.edges();
  if (E == 0 || w.size() % E != 0) {
    if (E == 0 && w.empty()) return {};
    throw std::invalid_argument("edge_ranks: weight count is not a multiple of the edge count");
  }
  const std::size_t copies = w.size() / E;
  std::vector<double> ranks(w.size());
  std::vector<std::size_t> order;
  for (std::size_t b = 0; b < copies; ++b)
    for (std::size_t i = 0; i < g.nodes; ++i) {
      order.resize(g.degree(i));
      std::iota(order.begin(), order.end(), g.offsets[i]);
      auto key = [&](std::size_t e) {
        const double v = w[b * E + e];
        return mode == RankMode::Absolute ? std::fabs(v) : v;
      };
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const double kx = key(x), ky = key(y);
        if (kx != ky) return kx > ky;
        return g.targets[x] < g.targets[y];
      });
      for (std::size_t r = 0; r < order.size(); ++r)
        ranks[b * E + order[r]] = static_cast<double>(r + 1);
    }
  return ranks;
}

namespace {

std::vector<std::size_t> edge_rows(const HybridGraph& g, std::size_t copies,
                                   const std::vector<std::size_t>& node_of_edge) {
  std::vector<std::size_t> rows(copies * g.edges());
  for (std::size_t b = 0; b < copies; ++b)
    for (std::size_t e = 0; e < g.edges(); ++e) rows[b * g.edges() + e] = b * g.nodes + node_of_edge[e];
  return rows;
}

}  // namespace

PruneResult prune_and_normalize(const HybridGraph& g, std::size_t copies, Var w_dyn, Var beta,
                                double eta, NormMode norm, double eps, RankMode rank) {
  Tape& tape = *w_dyn.tape();
  const std::size_t rows = copies * g.edges();
  if (w_dyn.shape() != Shape{rows, 1} || beta.shape() != Shape{copies * g.nodes, 1})
    throw std::invalid_argument("prune_and_normalize: expected w_dyn (" + std::to_string(rows) +
                                ",1) and beta (" + std::to_string(copies * g.nodes) + ",1)");
  const auto owner_rows = edge_rows(g, copies, g.owner);
  PruneResult out;
  out.beta = beta;
  out.ranks = tape.constant(Tensor({rows, 1}, edge_ranks(g, w_dyn.value().data, rank)));
  out.mask = sigmoid(scale(sub(out.ranks, gather(beta, owner_rows)), -eta));
  const Var wm = mul(w_dyn, out.mask);
  const Var mass = norm == NormMode::Absolute ? abs(wm) : wm;
  const Var denom = shift(segment_sum(mass, owner_rows, copies * g.nodes), eps);
  out.w_tilde = div(wm, gather(denom, owner_rows));
  return out;
}

Var prune_threshold(Var h, const BoundParams& p, double k_max) {
  const Var hidden = tanh(add(matmul(h, p["prune.W1"]), p["prune.b1"]));
  return scale(sigmoid(add(matmul(hidden, p["prune.W2"]), p["prune.b2"])), k_max);
}

EdgeWeights edge_weights(const HybridGraph& g, std::size_t copies, Var h, const BoundParams& p,
                         const RunConfig& cfg) {
  Tape& tape = *h.tape();
  if (h.shape().size() != 2 || h.shape()[0] != copies * g.nodes)
    throw std::invalid_argument("edge_weights: node states must be (copies * N, D)");
  const auto owner_rows = edge_rows(g, copies, g.owner);
  const auto target_rows = edge_rows(g, copies, g.targets);
  std::vector<double> ws(copies * g.edges());
  for (std::size_t b = 0; b < copies; ++b)
    std::copy(g.w_static.begin(), g.w_static.end(), ws.begin() + static_cast<std::ptrdiff_t>(b * g.edges()));
  const std::size_t rows = ws.size();
  const Var w_static = tape.constant(Tensor({rows, 1}, std::move(ws)));

  EdgeWeights out;
  const Var h_i = gather(h, owner_rows);
  const Var h_j = gather(h, target_rows);
  out.alpha = dynamic_attention(h_i, h_j, p["edge.W_e"], p["edge.a"]);
  const GateResult gate = fuse_gate(h_i, h_j, w_static, out.alpha, p["edge.gate_w"], p["edge.gate_b"]);
  out.gate = gate.gate;
  out.w_dyn = gate.w_dyn;
  const Var beta = prune_threshold(h, p, cfg.k_max);
  const PruneResult pr =
      prune_and_normalize(g, copies, out.w_dyn, beta, cfg.eta, cfg.norm, cfg.norm_eps, cfg.rank);
  out.beta = pr.beta;
  out.ranks = pr.ranks;
  out.mask = pr.mask;
  out.w_tilde = pr.w_tilde;
  return out;
}

void init_topology_params(ModelParams& params, std::size_t d_model, const RunConfig& cfg,
                          std::mt19937_64& rng) {
  params.add("edge.W_e", xavier_uniform({2 * d_model, cfg.edge_hidden}, rng));
  params.add("edge.a", xavier_uniform({cfg.edge_hidden, 1}, rng));
  params.add("edge.gate_w", xavier_uniform({2 * d_model + 1, 1}, rng));
  params.add("edge.gate_b", Tensor({1, 1}));
  params.add("prune.W1", xavier_uniform({d_model, cfg.beta_hidden}, rng));
  params.add("prune.b1", Tensor({1, cfg.beta_hidden}));
  params.add("prune.W2", xavier_uniform({cfg.beta_hidden, 1}, rng));
  params.add("prune.b2", Tensor({1, 1}, 1.0));
}

}  // namespace omniair
