#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "helpers.hpp"
#include "omniair/config.hpp"
#include "omniair/topology.hpp"

using namespace omniair;
using omniair::test::random_tensor;

namespace {

struct Toy {
  std::vector<GeoPoint> points;
  std::vector<std::vector<double>> feats;
};

Toy random_toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Toy t;
  for (std::size_t i = 0; i < n; ++i) {
    t.points.push_back({30 + u(rng), 110 + u(rng)});
    t.feats.push_back({u(rng), u(rng), u(rng)});
  }
  return t;
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("hybrid graph: semantic ties go to the lower index") {
  const std::vector<GeoPoint> pts = {{0, 0}, {0, 1}, {0, 3}};
  const std::vector<std::vector<double>> feats(3, std::vector<double>{1.0, 2.0});
  const HybridGraph g = build_hybrid_graph(pts, feats, 1, 1, 100);
  g.check();
  // node 2: geo neighbor 1, semantic from {0} only
  REQUIRE(g.degree(2) == 2);
  CHECK(g.targets[g.offsets[2]] == 1);
  CHECK(g.kinds[g.offsets[2]] == EdgeKind::Geo);
  CHECK(g.targets[g.offsets[2] + 1] == 0);
  CHECK(g.kinds[g.offsets[2] + 1] == EdgeKind::Semantic);
  // node 1: geo neighbor 0, semantic tie between nothing but 2
  CHECK(g.targets[g.offsets[1]] == 0);
  CHECK(g.targets[g.offsets[1] + 1] == 2);
  CHECK_THROWS_AS(build_hybrid_graph(pts, feats, 1, 2, 100), std::invalid_argument);
  CHECK(build_hybrid_graph(pts, feats, 1, 1, 100).targets == g.targets);
}

TEST_CASE("hybrid graph: coincident stations get static weight one") {
  const std::vector<GeoPoint> pts = {{10, 10}, {10, 10}, {11, 11}};
  const std::vector<std::vector<double>> feats = {{0.0}, {1.0}, {2.0}};
  const HybridGraph g = build_hybrid_graph(pts, feats, 1, 1, 100);
  CHECK(g.targets[g.offsets[0]] == 1);
  CHECK(g.km[g.offsets[0]] == 0.0);
  CHECK(g.w_static[g.offsets[0]] == 1.0);
}

TEST_CASE("hybrid graph: semantic edges are the closest non-geo candidates") {
  const Toy t = random_toy(20, 5);
  const HybridGraph g = build_hybrid_graph(t.points, t.feats, 4, 3, 100);
  g.check();
  CHECK(g.edges() == 20 * 7);
  for (std::size_t i = 0; i < 20; ++i) {
    std::set<std::size_t> chosen, sem;
    double worst_sem = 0.0;
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      CHECK(g.targets[e] != i);
      CHECK(chosen.insert(g.targets[e]).second);
      if (g.kinds[e] == EdgeKind::Semantic) {
        sem.insert(g.targets[e]);
        worst_sem = std::max(worst_sem, sqdist(t.feats[i], t.feats[g.targets[e]]));
      }
    }
    CHECK(sem.size() == 3);
    for (std::size_t j = 0; j < 20; ++j)
      if (j != i && !chosen.count(j)) CHECK(sqdist(t.feats[i], t.feats[j]) >= worst_sem);
  }
}

TEST_CASE("attached nodes only receive edges") {
  const Toy t = random_toy(12, 6);
  const HybridGraph base = build_hybrid_graph(t.points, t.feats, 3, 2, 100);
  const Toy extra = random_toy(3, 7);
  const HybridGraph g = attach_nodes(base, t.points, t.feats, extra.points, extra.feats, 3, 2, 100);
  g.check();
  CHECK(g.nodes == 15);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(g.degree(i) == base.degree(i));
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      CHECK(g.targets[e] == base.targets[e]);
      CHECK(g.w_static[e] == base.w_static[e]);
    }
  }
  for (std::size_t i = 12; i < 15; ++i) {
    CHECK(g.degree(i) == 5);
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) CHECK(g.targets[e] < 12);
  }
}

TEST_CASE("dynamic attention hand case") {
  Tape t;
  const Var hi = t.constant(Tensor({1, 2}, {0.3, -0.7}));
  const Var hj = t.constant(Tensor({1, 2}, {1.1, 0.4}));
  // rows of the (D', 2D) projection are [0.2,-0.1,0.5,0.3] and [-0.4,0.6,0.1,-0.2]
  const Var we = t.constant(Tensor({4, 2}, {0.2, -0.4, -0.1, 0.6, 0.5, 0.1, 0.3, -0.2}));
  const Var a = t.constant(Tensor({2, 1}, {0.7, -1.3}));
  const double alpha = dynamic_attention(hi, hj, we, a).value()[0];
  CHECK(std::abs(alpha - 0.5554992182168214) < 1e-12);
  CHECK(dynamic_attention(hi, hj, we, t.constant(Tensor({2, 1}))).value()[0] == 0.0);
  CHECK_THROWS_AS(dynamic_attention(hi, hj, t.constant(Tensor({3, 2})), a), std::invalid_argument);
}

TEST_CASE("fuse gate with zero parameters averages static and dynamic") {
  Tape t;
  std::mt19937_64 rng(2);
  const Var hi = t.constant(random_tensor({4, 3}, rng));
  const Var hj = t.constant(random_tensor({4, 3}, rng));
  const Var ws = t.constant(Tensor({4, 1}, {0.9, 0.1, 0.5, 0.3}));
  const Var alpha = t.constant(Tensor({4, 1}, {-0.5, 0.2, 0.7, 0.0}));
  const GateResult r = fuse_gate(hi, hj, ws, alpha, t.constant(Tensor({7, 1})), t.constant(Tensor({1, 1})));
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(r.gate.value()[e] == 0.5);
    CHECK(r.w_dyn.value()[e] == doctest::Approx((ws.value()[e] + alpha.value()[e]) / 2).epsilon(1e-15));
  }
  const GateResult hi_gate =
      fuse_gate(hi, hj, ws, alpha, t.constant(Tensor({7, 1})), t.constant(Tensor({1, 1}, 40.0)));
  const GateResult lo_gate =
      fuse_gate(hi, hj, ws, alpha, t.constant(Tensor({7, 1})), t.constant(Tensor({1, 1}, -40.0)));
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(std::abs(hi_gate.w_dyn.value()[e] - ws.value()[e]) < 1e-12);
    CHECK(std::abs(lo_gate.w_dyn.value()[e] - alpha.value()[e]) < 1e-12);
  }
}

TEST_CASE("ranks are per-node permutations by magnitude with index tie-break") {
  const Toy t = random_toy(8, 9);
  const HybridGraph g = build_hybrid_graph(t.points, t.feats, 3, 2, 100);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> w(2 * g.edges());
  for (double& v : w) v = d(rng);
  const auto r = edge_ranks(g, w, RankMode::Absolute);
  CHECK(r == edge_ranks(g, w, RankMode::Absolute));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < g.nodes; ++i) {
      std::vector<double> ranks;
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) ranks.push_back(r[b * g.edges() + e]);
      std::vector<double> sorted = ranks;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t k = 0; k < sorted.size(); ++k) CHECK(sorted[k] == static_cast<double>(k + 1));
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
        for (std::size_t f = g.offsets[i]; f < g.offsets[i + 1]; ++f)
          if (std::abs(w[b * g.edges() + e]) > std::abs(w[b * g.edges() + f]))
            CHECK(r[b * g.edges() + e] < r[b * g.edges() + f]);
    }
  // equal magnitudes: the lower target index ranks first
  const HybridGraph g3 = build_hybrid_graph(std::vector<GeoPoint>{{0, 0}, {0, 1}, {0, 2}},
                                            std::vector<std::vector<double>>(3, {0.0}), 1, 1, 100);
  const std::vector<double> tie(g3.edges(), 0.5);
  const auto rt = edge_ranks(g3, tie, RankMode::Absolute);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t e0 = g3.offsets[i], e1 = e0 + 1;
    CHECK((rt[e0] < rt[e1]) == (g3.targets[e0] < g3.targets[e1]));
  }
}

TEST_CASE("soft mask values") {
  const HybridGraph g = build_hybrid_graph(std::vector<GeoPoint>{{0, 0}, {0, 1}, {0, 2}},
                                           std::vector<std::vector<double>>(3, {0.0}), 1, 1, 100);
  Tape t;
  // node-wise w_dyn so that ranks are (1, 2) within every node
  std::vector<double> w(g.edges());
  for (std::size_t i = 0; i < 3; ++i) {
    w[g.offsets[i]] = 0.9;
    w[g.offsets[i] + 1] = 0.1;
  }
  const Var wd = t.constant(Tensor({g.edges(), 1}, w));
  const PruneResult at_rank = prune_and_normalize(g, 1, wd, t.constant(Tensor({3, 1}, 1.0)), 10, NormMode::Absolute,
                                                  1e-8, RankMode::Absolute);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(at_rank.mask.value()[g.offsets[i]] == 0.5);
    CHECK(at_rank.mask.value()[g.offsets[i] + 1] == doctest::Approx(4.5397868702434395e-05).epsilon(1e-12));
  }
  const PruneResult below = prune_and_normalize(g, 1, wd, t.constant(Tensor({3, 1}, 2.0)), 10, NormMode::Absolute,
                                                1e-8, RankMode::Absolute);
  CHECK(below.mask.value()[g.offsets[0]] == doctest::Approx(1.0 - 4.5397868702434395e-05).epsilon(1e-12));
}

TEST_CASE("large eta with half-integer beta is hard top-k") {
  const Toy t = random_toy(30, 12);
  const HybridGraph g = build_hybrid_graph(t.points, t.feats, 6, 3, 100);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d;
  std::vector<double> w(g.edges());
  for (double& v : w) v = d(rng);
  for (std::size_t k = 1; k <= 8; ++k) {
    Tape tape;
    const PruneResult r =
        prune_and_normalize(g, 1, tape.constant(Tensor({g.edges(), 1}, w)),
                            tape.constant(Tensor({g.nodes, 1}, static_cast<double>(k) + 0.5)), 100.0,
                            NormMode::Absolute, 1e-8, RankMode::Absolute);
    for (std::size_t i = 0; i < g.nodes; ++i) {
      std::vector<std::size_t> order;
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) order.push_back(e);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(w[a]) > std::abs(w[b]);
      });
      for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const double m = r.mask.value()[order[pos]];
        if (pos < k) CHECK(m > 1.0 - 1e-4);
        else CHECK(m < 1e-4);
      }
    }
  }
}

TEST_CASE("absolute normalization keeps each node's weight mass at most one") {
  const Toy t = random_toy(25, 13);
  const HybridGraph g = build_hybrid_graph(t.points, t.feats, 5, 3, 100);
  std::mt19937_64 rng(5);
  RunConfig cfg;
  cfg.d_model = 8;
  cfg.edge_hidden = 4;
  cfg.beta_hidden = 4;
  cfg.k_max = 8;
  ModelParams p;
  init_topology_params(p, 8, cfg, rng);
  Tape tape;
  const BoundParams b(tape, p, false);
  const EdgeWeights ew = edge_weights(g, 2, tape.constant(random_tensor({50, 8}, rng)), b, cfg);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < g.nodes; ++i) {
      double s = 0.0;
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) s += std::abs(ew.w_tilde.value()[c * g.edges() + e]);
      CHECK(s <= 1.0 + 1e-12);
    }
  for (double a : ew.alpha.value().data) CHECK(std::abs(a) < 1.0);
  for (double m : ew.mask.value().data) CHECK((m >= 0.0 && m <= 1.0));
}

TEST_CASE("zero features and zero attention give weights proportional to static weights") {
  const Toy t = random_toy(10, 14);
  const HybridGraph g = build_hybrid_graph(t.points, t.feats, 3, 2, 100);
  RunConfig cfg;
  cfg.d_model = 4;
  cfg.edge_hidden = 4;
  cfg.beta_hidden = 4;
  cfg.k_max = 100;  // every edge retained
  cfg.eta = 10;
  std::mt19937_64 rng(1);
  ModelParams p;
  init_topology_params(p, 4, cfg, rng);
  for (const char* name : {"edge.W_e", "edge.a", "edge.gate_w", "edge.gate_b"})
    std::fill(p.at(name).data.begin(), p.at(name).data.end(), 0.0);
  Tape tape;
  const BoundParams b(tape, p, false);
  const EdgeWeights ew = edge_weights(g, 1, tape.constant(Tensor({10, 4})), b, cfg);
  for (std::size_t e = 0; e < g.edges(); ++e)
    CHECK(ew.w_dyn.value()[e] == doctest::Approx(0.5 * g.w_static[e]).epsilon(1e-15));
  for (std::size_t i = 0; i < g.nodes; ++i) {
    const std::size_t e0 = g.offsets[i];
    for (std::size_t e = e0; e < g.offsets[i + 1]; ++e) {
      const double ratio = ew.w_tilde.value()[e] / ew.w_tilde.value()[e0];
      const double mask_ratio = ew.mask.value()[e] / ew.mask.value()[e0];
      CHECK(ratio == doctest::Approx(mask_ratio * g.w_static[e] / g.w_static[e0]).epsilon(1e-12));
    }
  }
}

TEST_CASE("threshold gradient: rank-mask formula and the full normalization term") {
  const Toy t = random_toy(5, 21);
  const HybridGraph g = build_hybrid_graph(t.points, t.feats, 2, 1, 100);
  std::mt19937_64 rng(22);
  Tensor w = random_tensor({g.edges(), 1}, rng);
  for (double& v : w.data) v = std::abs(v) + 0.1;  // plain sums stay away from zero
  const Tensor beta0({5, 1}, {1.3, 2.1, 1.7, 2.6, 0.9});
  const Tensor r = random_tensor({g.edges(), 1}, rng);
  const double eta = 3.0;

  auto run = [&](const Tensor& beta_value, bool detach_denominator, Tensor* grad, std::pair<Tensor, Tensor>* keep) {
    Tape tape;
    const Var beta = tape.leaf(beta_value);
    PruneResult pr = prune_and_normalize(g, 1, tape.constant(w), beta, eta, NormMode::Plain, 1e-8,
                                         RankMode::Absolute);
    Var wt = pr.w_tilde;
    if (detach_denominator) {
      const Var wm = mul(tape.constant(w), pr.mask);
      wt = div(wm, detach(div(wm, pr.w_tilde)));
    }
    const Var loss = sum_all(mul(wt, tape.constant(r)));
    if (grad) {
      tape.backward(loss);
      *grad = tape.grad(beta);
    }
    if (keep) *keep = {pr.w_tilde.value(), pr.mask.value()};
    return loss.value()[0];
  };

  Tensor g_detached, g_full;
  std::pair<Tensor, Tensor> kept;
  run(beta0, true, &g_detached, &kept);
  run(beta0, false, &g_full, nullptr);
  const auto& wt = kept.first.data;
  const auto& m = kept.second.data;
  for (std::size_t i = 0; i < 5; ++i) {
    double formula = 0.0, direct = 0.0, spread = 0.0;
    for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      formula += r[e] * wt[e] * (1.0 - m[e]) * eta;
      direct += r[e] * wt[e];
      spread += wt[e] * eta * (1.0 - m[e]);
    }
    CHECK(std::abs(g_detached[i] - formula) <= 1e-6 * std::max(1.0, std::abs(formula)));
    const double full = formula - direct * spread;
    CHECK(std::abs(g_full[i] - full) <= 1e-6 * std::max(1.0, std::abs(full)));
    // finite differences on beta
    Tensor up = beta0, dn = beta0;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    const double numeric = (run(up, false, nullptr, nullptr) - run(dn, false, nullptr, nullptr)) / 2e-6;
    CHECK(std::abs(g_full[i] - numeric) <= 1e-6 * std::max(1.0, std::abs(numeric)));
  }
}
