#include <doctest.h>

#include <numeric>
#include <random>

#include "helpers.hpp"
#include "omniair/app.hpp"
#include "omniair/oracle.hpp"

using namespace omniair;

namespace {

RunConfig small_config(std::uint64_t seed) {
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
  return cfg;
}

RDResult small_world(std::size_t stations, std::uint64_t seed) {
  RDScenario sc;
  sc.stations = stations;
  sc.steps = 20;
  sc.seed = seed;
  sc.sources = random_sources(stations, 1, seed);
  return simulate_rd(sc);
}

void perturb(ModelParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& [name, t] : params)
    if (name == "fusion.w" || name.find(".b") != std::string::npos)
      for (double& v : t.data) v += u(rng);
}

Tensor sparse_yhat(const ModelParams& params, const RunConfig& cfg, const StationInputs& st, const Tensor& x,
                   const ForwardOptions& opt = {}) {
  Tape tape;
  const BoundParams p(tape, params, false);
  return forward(p, cfg, st, x, opt).yhat.value();
}

}  // namespace

TEST_CASE("sparse forward matches the dense reference") {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (FusionMode fusion : {FusionMode::Signed, FusionMode::Softmax, FusionMode::Sum}) {
      RunConfig cfg = small_config(seed);
      cfg.fusion = fusion;
      const RDResult w = small_world(12, seed);
      const PreparedModel m = prepare_model(cfg, w.stations, w.frame);
      ModelParams params = init_model_params(cfg, m.inputs.id_static.dim(1), kChannels, seed);
      perturb(params, seed);
      const WindowSet ws(w.frame, cfg.input_steps, cfg.horizon, m.norm);
      const std::size_t ids[] = {0, 5, 9};
      const WindowBatch b = ws.batch(ids);
      const DenseResult dense = dense_forward(params, cfg, m.inputs, b.inputs);
      CHECK(test::max_abs_diff(dense.yhat, sparse_yhat(params, cfg, m.inputs, b.inputs)) < 1e-10);
    }
  }
}

TEST_CASE("forced aggregation coefficients agree between sparse and dense paths") {
  const RunConfig cfg = small_config(4);
  const RDResult w = small_world(10, 4);
  const PreparedModel m = prepare_model(cfg, w.stations, w.frame);
  const ModelParams params = init_model_params(cfg, m.inputs.id_static.dim(1), kChannels, 4);
  const WindowSet ws(w.frame, cfg.input_steps, cfg.horizon, m.norm);
  const std::size_t ids[] = {2};
  const WindowBatch b = ws.batch(ids);
  const std::vector<double> coeffs = {0.0, 1.0, -1.0};
  ForwardOptions opt;
  opt.forced_coeffs = coeffs;
  const Tensor sparse = sparse_yhat(params, cfg, m.inputs, b.inputs, opt);
  const DenseResult dense = dense_forward(params, cfg, m.inputs, b.inputs, coeffs);
  CHECK(test::max_abs_diff(dense.yhat, sparse) < 1e-10);
  CHECK(test::max_abs_diff(sparse, sparse_yhat(params, cfg, m.inputs, b.inputs)) > 0.0);
}

TEST_CASE("single station forecasts are finite") {
  RunConfig cfg = small_config(5);
  const RDResult w = small_world(4, 5);
  const std::size_t keep[] = {0};
  const SeriesFrame one = w.frame.select_stations(keep);
  const std::vector<StationMeta> st = {w.stations[0]};
  const PreparedModel m = prepare_model(cfg, st, one);
  CHECK(m.inputs.graph.edges() == 0);
  const ModelParams params = init_model_params(cfg, m.inputs.id_static.dim(1), kChannels, 5);
  const WindowSet ws(one, cfg.input_steps, cfg.horizon, m.norm);
  const std::size_t ids[] = {0, 1};
  const Tensor y = sparse_yhat(params, cfg, m.inputs, ws.batch(ids).inputs);
  CHECK(y.shape == Shape{2, 3, 1, kChannels});
  for (double v : y.data) CHECK(std::isfinite(v));
}

TEST_CASE("relabeling stations permutes the forecast") {
  const RunConfig cfg = small_config(6);
  const RDResult w = small_world(11, 6);
  std::vector<std::size_t> perm(11);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(6));
  std::vector<StationMeta> shuffled;
  for (std::size_t i : perm) shuffled.push_back(w.stations[i]);
  const SeriesFrame frame2 = w.frame.select_stations(perm);

  const PreparedModel a = prepare_model(cfg, w.stations, w.frame);
  const PreparedModel b = prepare_model(cfg, shuffled, frame2);
  ModelParams params = init_model_params(cfg, a.inputs.id_static.dim(1), kChannels, 6);
  perturb(params, 6);
  const std::size_t ids[] = {0, 4};
  const Tensor ya = sparse_yhat(params, cfg, a.inputs,
                                WindowSet(w.frame, cfg.input_steps, cfg.horizon, a.norm).batch(ids).inputs);
  const Tensor yb = sparse_yhat(params, cfg, b.inputs,
                                WindowSet(frame2, cfg.input_steps, cfg.horizon, b.norm).batch(ids).inputs);
  double worst = 0.0;
  for (std::size_t bt = 0; bt < 2 * cfg.horizon; ++bt)
    for (std::size_t n = 0; n < 11; ++n)
      for (std::size_t c = 0; c < kChannels; ++c)
        worst = std::max(worst, std::fabs(yb[(bt * 11 + n) * kChannels + c] -
                                          ya[(bt * 11 + perm[n]) * kChannels + c]));
  CHECK(worst < 1e-10);
}

TEST_CASE("masked mae ignores invalid targets") {
  Tape tape;
  Tensor y({4}), valid({4});
  y.data = {1, 2, 3, 4};
  valid.data = {1, 0, 1, 0};
  Tensor pred({4});
  pred.data = {2, 100, 1, -50};
  const Var loss = masked_mae(tape.constant(pred), y, valid);
  CHECK(loss.value()[0] == doctest::Approx(1.5));
  const Var none = masked_mae(tape.constant(pred), y, Tensor({4}));
  CHECK(none.value()[0] == 0.0);
}

