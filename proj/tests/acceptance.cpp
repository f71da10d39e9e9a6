// Acceptance gate: one PASS/FAIL line per criterion. `--criterion N` runs a
// single one; exit status is non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omniair/app.hpp"
#include "omniair/bench.hpp"
#include "omniair/kernels.hpp"
#include "omniair/oracle.hpp"

using namespace omniair;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

void perturb(ModelParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& [name, t] : params)
    if (name == "fusion.w" || name.find(".b") != std::string::npos)
      for (double& v : t.data) v += u(rng);
}

Tensor sparse_yhat(const ModelParams& params, const RunConfig& cfg, const StationInputs& st, const Tensor& x) {
  Tape tape;
  const BoundParams p(tape, params, false);
  return forward(p, cfg, st, x).yhat.value();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------- 1

Outcome gradient_check() {
  const GradCheckReport r = toy_grad_check(42);
  return {r.max_rel_error < 1e-4,
          "max rel error " + fmt(r.max_rel_error) + " (" + r.worst_param + "), " + std::to_string(r.checked) +
              " coordinates, limit 1e-4"};
}

// ---------------------------------------------------------------- 2

Outcome sparse_dense() {
  double worst = 0.0;
  std::size_t runs = 0;
  for (std::size_t n : {4, 8, 16})
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
      RunConfig cfg;
      cfg.d_model = cfg.id_dim = 8;
      cfg.id_hidden = 8;
      cfg.edge_hidden = 8;
      cfg.beta_hidden = 4;
      cfg.head_hidden = 16;
      cfg.k_geo = 3;
      cfg.k_sem = 2;
      cfg.k_max = 5;
      cfg.input_steps = 6;
      cfg.horizon = 3;
      cfg.seed = seed;
      RDScenario sc;
      sc.stations = n;
      sc.steps = 16;
      sc.seed = seed;
      sc.sources = random_sources(n, 1, seed);
      const RDResult w = simulate_rd(sc);
      const PreparedModel m = prepare_model(cfg, w.stations, w.frame);
      ModelParams params = init_model_params(cfg, m.inputs.id_static.dim(1), kChannels, seed);
      perturb(params, seed);
      const WindowSet ws(w.frame, cfg.input_steps, cfg.horizon, m.norm);
      const std::size_t ids[] = {0, 4};
      const WindowBatch b = ws.batch(ids);
      const DenseResult dense = dense_forward(params, cfg, m.inputs, b.inputs);
      worst = std::max(worst, max_abs_diff(dense.yhat, sparse_yhat(params, cfg, m.inputs, b.inputs)));
      ++runs;
    }
  return {worst <= 1e-10, "max abs diff " + fmt(worst) + " over " + std::to_string(runs) + " runs, limit 1e-10"};
}

// ---------------------------------------------------------------- 3

Outcome fourier_kernel() {
  const auto pairs = kernel_pairs(100, 0.5, 2024);
  const std::vector<std::size_t> levels = {64, 256, 1024, 4096};
  const auto rows = check_kernel(1.0, pairs, levels, 7);
  bool decreasing = true;
  std::string trace;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && !(rows[i].mean_abs_dev < rows[i - 1].mean_abs_dev)) decreasing = false;
    trace += (i ? ", M=" : "M=") + std::to_string(rows[i].levels) + ": " + fmt(rows[i].mean_abs_dev);
  }
  const double last = rows.back().mean_abs_dev;
  return {decreasing && last < 0.05, trace + "; limit 0.05 at M=4096, strictly decreasing"};
}

// ---------------------------------------------------------------- 4

Outcome lipschitz() {
  RunConfig cfg;
  const std::size_t static_dim = cfg.fourier_dim() + kContextDim + kGeoFeatures;
  ModelParams params = init_model_params(cfg, static_dim, kChannels, 11);
  perturb(params, 11);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t in = params.at("id.W1").dim(0);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs(1000);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& [x, y] = pairs[i];
    x.resize(in);
    y.resize(in);
    for (std::size_t k = 0; k < in; ++k) {
      x[k] = nd(rng);
      // odd pairs are close together
      y[k] = i % 2 ? x[k] + 1e-3 * nd(rng) : nd(rng);
    }
  }
  const LipschitzReport r = check_identity_lipschitz(params, pairs, 1e-6);
  return {r.violations == 0, std::to_string(r.violations) + " violations over " + std::to_string(r.pairs) +
                                 " pairs, max ratio " + fmt(r.max_ratio) + " vs bound " + fmt(r.bound)};
}

// ---------------------------------------------------------------- 5

Outcome signed_necessity() {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto rand_tensor = [&](Shape s, double scale) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = scale * nd(rng);
    return t;
  };

  // (a) positive-only control stays in the per-node convex hull
  std::size_t outside = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelParams p;
    p.add("agg.W_Q", rand_tensor({2, 2, 2}, 1.0));
    p.add("agg.W_K", rand_tensor({2, 2, 2}, 1.0));
    p.add("agg.step_bias", rand_tensor({1, 3}, 1.0));
    Tape t;
    const BoundParams b(t, p, false);
    std::vector<Var> stack;
    for (int l = 0; l < 3; ++l) stack.push_back(t.constant(rand_tensor({2, 3, 5, 4}, 2.0)));
    const Tensor z = signed_aggregate(stack, b, 2, AggregationMode::Positive).z.value();
    for (std::size_t k = 0; k < z.size(); ++k) {
      double lo = 1e300, hi = -1e300;
      for (const Var& h : stack) {
        lo = std::min(lo, h.value()[k]);
        hi = std::max(hi, h.value()[k]);
      }
      if (z[k] < lo - 1e-12 || z[k] > hi + 1e-12) ++outside;
    }
  }
  const bool a_ok = outside == 0;

  // (b) forced (1, -1) is the graph-Laplacian response (I - A) H0
  double b_err = 0.0;
  {
    RDScenario sc;
    sc.stations = 12;
    std::vector<GeoPoint> pts = random_points(sc);
    std::vector<std::vector<double>> feats(12, std::vector<double>(3));
    for (auto& f : feats)
      for (double& v : f) v = nd(rng);
    const HybridGraph g = build_hybrid_graph(pts, feats, 4, 2, 100.0);
    const Tensor w = rand_tensor({g.edges(), 1}, 0.3);
    const Tensor h0 = rand_tensor({1, 2, 12, 4}, 1.0);
    ModelParams p;
    p.add("agg.W_Q", rand_tensor({2, 2, 2}, 1.0));
    p.add("agg.W_K", rand_tensor({2, 2, 2}, 1.0));
    p.add("agg.step_bias", rand_tensor({1, 2}, 1.0));
    Tape t;
    const BoundParams b(t, p, false);
    const auto stack = diffuse(g, t.constant(w), t.constant(h0), 1, 0.0);
    const Tensor z = signed_aggregate(stack, b, 2, AggregationMode::Signed, std::vector<double>{1.0, -1.0}).z.value();
    std::vector<double> A(12 * 12, 0.0);
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) A[i * 12 + g.targets[e]] += w[e];
    for (std::size_t tt = 0; tt < 2; ++tt)
      for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t d = 0; d < 4; ++d) {
          double ref = h0[(tt * 12 + i) * 4 + d];
          for (std::size_t j = 0; j < 12; ++j) ref -= A[i * 12 + j] * h0[(tt * 12 + j) * 4 + d];
          b_err = std::max(b_err, std::fabs(z[(tt * 12 + i) * 4 + d] - ref));
        }
  }
  const bool b_ok = b_err <= 1e-12;

  // (c) isolated point source: signed vs positive-only, same seed and epochs
  std::vector<double> full_mae, pos_mae;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RDScenario sc;
    sc.stations = 20;
    sc.steps = 300;
    sc.seed = seed;
    RDSource src;
    src.node = static_cast<std::size_t>(seed % sc.stations);
    src.amplitude = 30.0;
    src.period = 10;
    src.on_steps = 3;
    sc.sources = {src};
    const RDResult sim = simulate_rd(sc);
    const Dataset data{sim.stations, sim.frame};
    std::vector<bool> at_source(sc.stations, false);
    at_source[src.node] = true;
    for (AggregationMode mode : {AggregationMode::Signed, AggregationMode::Positive}) {
      RunConfig cfg;
      cfg.d_model = cfg.id_dim = 16;
      cfg.id_hidden = 16;
      cfg.edge_hidden = 16;
      cfg.head_hidden = 32;
      cfg.k_geo = 6;
      cfg.k_sem = 3;
      cfg.k_max = 9;
      cfg.input_steps = 14;
      cfg.horizon = 7;
      cfg.lr = 3e-3;
      cfg.max_epochs = 40;
      cfg.patience = 10;
      cfg.seed = seed;
      cfg.aggregation = mode;
      const TrainResult r = train_model(cfg, data);
      const Splits s = chrono_split(sim.frame, cfg.split, cfg.input_steps + cfg.horizon);
      const auto ev = evaluate_frame(r.params, cfg, r.model.inputs, s.test, r.model.norm, &at_source);
      (mode == AggregationMode::Signed ? full_mae : pos_mae).push_back(*ev.model.overall.mae);
    }
  }
  const double mf = median(full_mae), mp = median(pos_mae);
  const bool c_ok = mf < mp;
  std::string per_seed;
  for (std::size_t i = 0; i < full_mae.size(); ++i)
    per_seed += (i ? " " : "") + fmt(full_mae[i]) + "/" + fmt(pos_mae[i]);
  return {a_ok && b_ok && c_ok,
          std::string("(a) ") + (a_ok ? "ok" : "FAIL") + " " + std::to_string(outside) + " entries outside hull; (b) " +
              (b_ok ? "ok" : "FAIL") + " max err " + fmt(b_err) + "; (c) " + (c_ok ? "ok" : "FAIL") +
              " source-node MAE median signed " + fmt(mf) + " vs positive " + fmt(mp) + " [" + per_seed + "]"};
}

// ---------------------------------------------------------------- 6

Outcome conservation() {
  RDScenario sc;
  sc.stations = 30;
  const RDSystem sys(random_points(sc), 6, 100.0, 0.05, 0.0, 1.0);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 40.0);
  std::vector<double> c(sys.size());
  for (double& v : c) v = u(rng);
  const std::vector<double> zero(sys.size(), 0.0);
  double worst = 0.0;
  double mass = std::accumulate(c.begin(), c.end(), 0.0);
  for (int t = 0; t < 500; ++t) {
    c = sys.step(c, zero);
    const double next = std::accumulate(c.begin(), c.end(), 0.0);
    worst = std::max(worst, std::fabs(next - mass));
    mass = next;
  }
  return {worst <= 1e-9, "max per-step mass change " + fmt(worst) + " over 500 steps, limit 1e-9"};
}

// ---------------------------------------------------------------- 7

Outcome scaling() {
  BenchOptions o;
  o.sizes = {1024, 2048, 4096, 8192};
  o.k_geo = 10;
  o.k_sem = 5;
  o.workers = 1;
  o.repeats = 7;
  const BenchReport r = run_scaling(o);
  std::string trace;
  for (const auto& row : r.rows)
    trace += "N=" + std::to_string(row.stations) + ": " + fmt(row.forward_ms) + " ms; ";
  return {r.slope >= 0.8 && r.slope <= 1.3, trace + "slope " + fmt(r.slope) + ", range [0.8, 1.3]"};
}

// ---------------------------------------------------------------- 8

Outcome hard_topk() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<GeoPoint> pts;
  std::vector<std::vector<double>> feats;
  for (int i = 0; i < 40; ++i) {
    pts.push_back(GeoPoint::make(30 + u(rng), 110 + u(rng)));
    feats.push_back({u(rng), u(rng), u(rng)});
  }
  const HybridGraph g = build_hybrid_graph(pts, feats, 10, 5, 100.0);
  std::vector<double> w(g.edges());
  for (double& v : w) v = nd(rng);
  double worst = 0.0;
  std::size_t set_mismatch = 0;
  for (std::size_t k = 1; k <= 15; ++k) {
    Tape tape;
    const PruneResult r =
        prune_and_normalize(g, 1, tape.constant(Tensor({g.edges(), 1}, w)),
                            tape.constant(Tensor({g.nodes, 1}, static_cast<double>(k) + 0.5)), 100.0,
                            NormMode::Absolute, 1e-8, RankMode::Absolute);
    for (std::size_t i = 0; i < g.nodes; ++i) {
      std::vector<std::size_t> order(g.degree(i));
      std::iota(order.begin(), order.end(), g.offsets[i]);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (std::fabs(w[a]) != std::fabs(w[b])) return std::fabs(w[a]) > std::fabs(w[b]);
        return g.targets[a] < g.targets[b];
      });
      for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const double m = r.mask.value()[order[pos]];
        const double want = pos < k ? 1.0 : 0.0;
        worst = std::max(worst, std::fabs(m - want));
        if ((m > 0.5) != (pos < k)) ++set_mismatch;
      }
    }
  }
  return {worst <= 1e-4 && set_mismatch == 0,
          "max |mask - hard| " + fmt(worst) + ", retained-set mismatches " + std::to_string(set_mismatch) +
              " over k=1..15, limit 1e-4"};
}

// ---------------------------------------------------------------- 9

Outcome zero_shot() {
  std::vector<double> model_mae, lv_mae;
  bool identical = true, untouched = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RDScenario sc;
    sc.stations = 50;
    sc.steps = 400;
    sc.seed = seed;
    sc.span_deg = 4.0 * std::sqrt(50.0 / 20.0);
    sc.sources = random_sources(50, 3, seed);
    const RDResult sim = simulate_rd(sc);
    std::vector<std::size_t> base_idx(40);
    std::iota(base_idx.begin(), base_idx.end(), 0);
    const Dataset base{{sim.stations.begin(), sim.stations.begin() + 40}, sim.frame.select_stations(base_idx)};
    std::vector<StationMeta> added(sim.stations.begin() + 40, sim.stations.end());
    for (auto& s : added) s.grade = -1;

    RunConfig cfg;
    cfg.d_model = cfg.id_dim = 16;
    cfg.id_hidden = 16;
    cfg.edge_hidden = 16;
    cfg.head_hidden = 32;
    cfg.k_geo = 6;
    cfg.k_sem = 3;
    cfg.k_max = 9;
    cfg.input_steps = 14;
    cfg.horizon = 7;
    cfg.lr = 3e-3;
    cfg.max_epochs = 60;
    cfg.patience = 10;
    cfg.fourier_levels = 4;
    cfg.seed = seed;
    const TrainResult r = train_model(cfg, base);
    const std::uint64_t before = r.params.fingerprint();
    const ExtendedInputs ext = extend_with_new_stations(r.model, added);

    const Splits s = chrono_split(sim.frame, cfg.split, cfg.input_steps + cfg.horizon);
    const SeriesFrame base_test = s.test.select_stations(base_idx);
    const WindowSet wb(base_test, cfg.input_steps, cfg.horizon, r.model.norm);
    const WindowSet we(s.test, cfg.input_steps, cfg.horizon, r.model.norm);
    const auto bb = wb.batches(cfg.batch), be = we.batches(cfg.batch);
    for (std::size_t k = 0; k < bb.size(); ++k) {
      const Tensor yb = predict_raw(r.params, cfg, r.model.inputs, bb[k], r.model.norm);
      const Tensor ye = predict_raw(r.params, cfg, ext.inputs, be[k], r.model.norm);
      const std::size_t rows = yb.size() / (40 * kChannels);
      for (std::size_t row = 0; row < rows; ++row)
        for (std::size_t n = 0; n < 40; ++n)
          for (std::size_t c = 0; c < kChannels; ++c)
            identical &= yb[(row * 40 + n) * kChannels + c] == ye[(row * 50 + n) * kChannels + c];
    }
    std::vector<bool> held_out(50, false);
    std::fill(held_out.begin() + 40, held_out.end(), true);
    const auto ev = evaluate_frame(r.params, cfg, ext.inputs, s.test, r.model.norm, &held_out);
    untouched &= r.params.fingerprint() == before;
    model_mae.push_back(*ev.model.overall.mae);
    lv_mae.push_back(*ev.baseline.overall.mae);
  }
  std::vector<double> gap;
  std::string per_seed;
  for (std::size_t i = 0; i < model_mae.size(); ++i) {
    gap.push_back(model_mae[i] - lv_mae[i]);
    per_seed += (i ? " " : "") + fmt(model_mae[i]) + "/" + fmt(lv_mae[i]);
  }
  const double mg = median(gap);
  return {identical && untouched && mg < 0.0,
          std::string("(a) ") + (identical ? "bit-identical" : "CHANGED") + "; (b) " +
              (untouched ? "fingerprint unchanged" : "PARAMS MUTATED") + "; (c) median of (model - LV) held-out MAE " +
              fmt(mg) + " (medians " + fmt(median(model_mae)) + " vs " + fmt(median(lv_mae)) + ") [model/LV " +
              per_seed + "]"};
}

// ---------------------------------------------------------------- 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome pipeline_determinism() {
  const std::string cli = OMNIAIR_CLI_PATH;
  const fs::path root = fs::temp_directory_path() / "omniair_acceptance_pipeline";
  fs::remove_all(root);
  std::vector<std::string> forecasts, metrics;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path d = root / ("run" + std::to_string(rep));
    fs::create_directories(d);
    const std::string data = (d / "data").string(), ck = (d / "ck").string();
    const std::string st = data + "/stations.csv", se = data + "/series.csv";
    const std::vector<std::string> steps = {
        cli + " synth --n 20 --steps 400 --seed 42 --out " + data,
        cli + " train --stations " + st + " --series " + se + " --out " + ck +
            " --epochs 5 --seed 42 --workers 1 --quiet",
        cli + " predict --checkpoint " + ck + " --stations " + st + " --series " + se +
            " --window-end 2021-02-03 --workers 1 --out " + (d / "forecast.csv").string(),
        cli + " evaluate --checkpoint " + ck + " --stations " + st + " --series " + se +
            " --split test --workers 1 --out " + (d / "metrics.csv").string()};
    for (const auto& s : steps)
      if (int rc = run(s); rc != 0) return {false, "command failed (" + std::to_string(rc) + "): " + s};
    forecasts.push_back(slurp(d / "forecast.csv"));
    metrics.push_back(slurp(d / "metrics.csv"));
  }
  const bool same_f = !forecasts[0].empty() && forecasts[0] == forecasts[1];
  const bool same_m = !metrics[0].empty() && metrics[0] == metrics[1];
  return {same_f && same_m, std::string("forecast CSV ") + (same_f ? "identical" : "DIFFERS") + " (" +
                                std::to_string(forecasts[0].size()) + " bytes), metrics CSV " +
                                (same_m ? "identical" : "DIFFERS")};
}

// ---------------------------------------------------------------- 11

Outcome metric_conformance() {
  Tensor y({2, 1}, {10.0, 1e-6}), yhat({2, 1}, {9.0, 5.0}), valid({2, 1}, {1.0, 1.0});
  const MetricReport r = masked_metrics(y, yhat, valid);
  const bool threshold_ok = r.overall.count == 1 && r.overall.mape_pct &&
                            std::fabs(*r.overall.mape_pct - 10.0) <= 1e-12 && std::fabs(*r.overall.mae - 1.0) <= 1e-12 &&
                            std::fabs(*r.overall.rmse - 1.0) <= 1e-12;
  const MetricReport none = masked_metrics(y, yhat, Tensor({2, 1}));
  const bool masked_ok = none.overall.count == 0 && !none.overall.mae && !none.overall.rmse &&
                         !none.overall.mape_pct && !none.per_channel[0].mae;
  return {threshold_ok && masked_ok,
          std::string("threshold example ") + (threshold_ok ? "MAPE 10%, count 1" : "WRONG") + "; all-masked " +
              (masked_ok ? "count 0, metrics undefined" : "WRONG")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  kernels::set_workers(1);

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient correctness", gradient_check}},
      {2, {"sparse/dense equivalence", sparse_dense}},
      {3, {"fourier kernel limit", fourier_kernel}},
      {4, {"identity encoder lipschitz bound", lipschitz}},
      {5, {"signed aggregation necessity", signed_necessity}},
      {6, {"mass conservation", conservation}},
      {7, {"linear scaling", scaling}},
      {8, {"hard top-k pruning limit", hard_topk}},
      {9, {"zero-shot inductive forecasting", zero_shot}},
      {10, {"pipeline determinism", pipeline_determinism}},
      {11, {"masked metric conformance", metric_conformance}},
  };
  const std::map<int, double> budget_s = {{1, 60},  {2, 30},  {3, 30},  {4, 10},  {5, 600}, {6, 5},
                                          {7, 300}, {8, 5},   {9, 900}, {10, 300}, {11, 1}};
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (only && id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= budget_s.at(id);
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::cout << "criterion " << id << " [" << entry.first << "]: " << (pass ? "PASS" : "FAIL") << "  "
              << o.detail << "  (" << fmt(secs) << " s, budget " << budget_s.at(id) << " s"
              << (in_time ? "" : ", OVER BUDGET") << ")" << std::endl;
  }
  return failures ? 1 : 0;
}
