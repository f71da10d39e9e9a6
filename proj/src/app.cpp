#include "omniair/app.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "csv.hpp"
#include "omniair/checkpoint.hpp"
#include "omniair/oracle.hpp"

namespace omniair {

Dataset load_dataset(const std::filesystem::path& stations_csv,
                     const std::filesystem::path& series_csv) {
  Dataset d;
  d.stations = load_stations(stations_csv);
  d.frame = load_series(series_csv, d.stations);
  return d;
}

std::vector<GeoPoint> PreparedModel::points() const {
  std::vector<GeoPoint> p;
  for (const auto& s : stations) p.push_back(s.point);
  return p;
}

namespace {

std::vector<int> grades_of(std::span<const StationMeta> stations) {
  std::vector<int> g;
  for (const auto& s : stations) g.push_back(s.grade);
  return g;
}

FourierMap fourier_for(const RunConfig& cfg) {
  return FourierMap({cfg.fourier_levels, FourierMode::Deterministic, 1.0, cfg.fourier_base, 0});
}

HybridGraph graph_for(const RunConfig& cfg, std::span<const GeoPoint> points,
                      const std::vector<std::vector<double>>& features) {
  if (points.size() == 1) return HybridGraph::empty(1);
  // Small station sets get as many neighbors as they can hold.
  const std::size_t n = points.size();
  const std::size_t k_geo = std::min(cfg.k_geo, n - 1);
  const std::size_t k_sem = std::min(cfg.k_sem, n - 1 - k_geo);
  return build_hybrid_graph(points, features, k_geo, k_sem, cfg.kappa_km);
}

}  // namespace

PreparedModel prepare_model(const RunConfig& cfg, std::vector<StationMeta> stations,
                            const SeriesFrame& train) {
  cfg.validate();
  if (stations.empty()) throw std::invalid_argument("no stations");
  if (train.stations != stations.size())
    throw std::invalid_argument("training frame covers " + std::to_string(train.stations) +
                                " stations, station list has " + std::to_string(stations.size()));
  for (const auto& s : stations)
    if (s.grade < 0 || s.grade >= static_cast<int>(kGrades))
      throw std::invalid_argument("training station '" + s.id + "' needs a grade in [0, 5]");
  PreparedModel m;
  m.cfg = cfg;
  m.stations = std::move(stations);
  m.norm = NormStats::fit(train, cfg.norm_scope);
  m.contexts = neighbor_contexts(m.stations, train, cfg.k_geo);
  m.enc = EncoderStats::fit(m.stations, m.contexts);
  m.inputs.id_static = identity_static_inputs(m.stations, m.contexts, m.enc, fourier_for(cfg));
  m.inputs.grades = grades_of(m.stations);
  const auto points = m.points();
  m.inputs.graph = graph_for(cfg, points, semantic_features(m.inputs.id_static, m.inputs.grades));
  return m;
}

ExtendedInputs extend_with_new_stations(const PreparedModel& model,
                                        std::span<const StationMeta> new_stations) {
  std::unordered_map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < model.stations.size(); ++i) ids.emplace(model.stations[i].id, i);
  for (const auto& s : new_stations)
    if (!ids.emplace(s.id, ids.size()).second)
      throw std::invalid_argument("new station id '" + s.id + "' collides with an existing station");

  const auto base_points = model.points();
  ExtendedInputs ext;
  ext.stations = model.stations;
  ext.contexts = model.contexts;
  std::vector<StationMeta> added(new_stations.begin(), new_stations.end());
  std::vector<NeighborContext> added_ctx;
  std::vector<GeoPoint> new_points;
  for (auto& s : added) {
    added_ctx.push_back(anchor_context(s.point, base_points, model.contexts));
    if (s.grade < 0) s.grade = grade_from_context(added_ctx.back());
    new_points.push_back(s.point);
  }
  const FourierMap fm = fourier_for(model.cfg);
  const Tensor new_static = identity_static_inputs(added, added_ctx, model.enc, fm);
  const auto new_grades = grades_of(added);

  ext.inputs.id_static = model.inputs.id_static;
  ext.inputs.id_static.shape[0] += added.size();
  ext.inputs.id_static.data.insert(ext.inputs.id_static.data.end(), new_static.data.begin(),
                                   new_static.data.end());
  ext.inputs.grades = model.inputs.grades;
  ext.inputs.grades.insert(ext.inputs.grades.end(), new_grades.begin(), new_grades.end());
  const auto base_feats = semantic_features(model.inputs.id_static, model.inputs.grades);
  const auto new_feats = semantic_features(new_static, new_grades);
  ext.inputs.graph = attach_nodes(model.inputs.graph, base_points, base_feats, new_points, new_feats,
                                  model.cfg.k_geo, model.cfg.k_sem, model.cfg.kappa_km);
  ext.stations.insert(ext.stations.end(), added.begin(), added.end());
  ext.contexts.insert(ext.contexts.end(), added_ctx.begin(), added_ctx.end());
  return ext;
}

// ---------------------------------------------------------------- training

double mean_loss(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                 const SeriesFrame& frame, const NormStats& norm) {
  const WindowSet ws(frame, cfg.input_steps, cfg.horizon, norm);
  double total = 0.0, count = 0.0;
  for (const WindowBatch& b : ws.batches(cfg.batch)) {
    Tape tape;
    const BoundParams p(tape, params, false);
    const Var y = forward(p, cfg, st, b.inputs).yhat;
    const Var loss = masked_mae(y, normalized_targets(b, norm), b.target_valid);
    double valid = 0.0;
    for (double v : b.target_valid.data) valid += v;
    total += loss.value()[0] * std::max(valid, 1.0);
    count += valid;
  }
  return total / std::max(count, 1.0);
}

WindowEval evaluate_frame(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                          const SeriesFrame& frame, const NormStats& norm,
                          const std::vector<bool>* stations_mask) {
  const WindowSet ws(frame, cfg.input_steps, cfg.horizon, norm);
  MetricAccumulator model(frame.channels), baseline(frame.channels);
  const auto fallback = norm.channel_means();
  for (const WindowBatch& b : ws.batches(cfg.batch)) {
    const Tensor yhat = predict_raw(params, cfg, st, b, norm);
    const Tensor lv = lv_baseline(b.raw_inputs, b.input_valid, cfg.horizon, fallback);
    Tensor valid = b.target_valid;
    if (stations_mask) {
      if (stations_mask->size() != b.stations)
        throw std::invalid_argument("evaluate: station mask size mismatch");
      for (std::size_t i = 0; i < valid.size(); ++i)
        if (!(*stations_mask)[(i / b.channels) % b.stations]) valid[i] = 0.0;
    }
    model.add(b.targets, yhat, valid);
    baseline.add(b.targets, lv, valid);
  }
  return {model.report(), baseline.report()};
}

namespace {

double val_mae_of(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                  const SeriesFrame& val, const NormStats& norm) {
  const auto r = evaluate_frame(params, cfg, st, val, norm).model.overall;
  return r.mae ? *r.mae : std::numeric_limits<double>::infinity();
}

HybridGraph refreshed_graph(const PreparedModel& m, const ModelParams& params) {
  const Tensor e = identity_embeddings(params, m.inputs);
  std::vector<std::vector<double>> feats(e.dim(0));
  for (std::size_t i = 0; i < feats.size(); ++i)
    feats[i].assign(e.data.begin() + static_cast<std::ptrdiff_t>(i * e.dim(1)),
                    e.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * e.dim(1)));
  const std::size_t n = m.stations.size();
  const std::size_t k_geo = std::min(m.cfg.k_geo, n - 1);
  return refresh_semantic(m.inputs.graph, m.points(), feats, std::min(m.cfg.k_sem, n - 1 - k_geo),
                          m.cfg.kappa_km);
}

}  // namespace

TrainResult train_model(const RunConfig& cfg, const Dataset& data, const TrainOptions& options) {
  cfg.validate();
  const Splits splits = chrono_split(data.frame, cfg.split, cfg.input_steps + cfg.horizon);
  TrainResult r;
  r.model = prepare_model(cfg, data.stations, splits.train);
  PreparedModel& m = r.model;
  const std::size_t static_dim = m.inputs.id_static.dim(1);
  ModelParams params = init_model_params(cfg, static_dim, data.frame.channels, cfg.seed);
  Adam adam(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const WindowSet train_windows(splits.train, cfg.input_steps, cfg.horizon, m.norm);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0xA5A5A5A5ULL);

  TrainLog& log = r.log;
  log.initial_train_loss = mean_loss(params, cfg, m.inputs, splits.train, m.norm);
  r.params = params;
  HybridGraph best_graph = m.inputs.graph;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  log.stop_reason = "max_epochs";

  std::vector<std::size_t> order(train_windows.count());
  bool diverged = false;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !diverged; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t len = std::min(cfg.batch, order.size() - start);
      const WindowBatch b = train_windows.batch(std::span(order).subspan(start, len));
      Tape tape;
      const BoundParams p(tape, params);
      const Var loss = masked_mae(forward(p, cfg, m.inputs, b.inputs).yhat,
                                  normalized_targets(b, m.norm), b.target_valid);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        diverged = true;
        break;
      }
      tape.backward(loss);
      if (!adam.step(params, p.grads())) {
        diverged = true;
        break;
      }
      loss_sum += lv;
      ++batches;
    }
    if (diverged) {
      log.stop_reason = "diverged";
      if (options.progress) *options.progress << "epoch " << epoch << ": non-finite loss, stopping\n";
      break;
    }
    if (cfg.refresh_semantic_every > 0 && epoch % cfg.refresh_semantic_every == 0 && m.stations.size() > 1)
      m.inputs.graph = refreshed_graph(m, params);

    double val = val_mae_of(params, cfg, m.inputs, splits.val, m.norm);
    if (options.val_override) val = options.val_override(epoch, val);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)), val, false};
    if (val < best) {
      best = val;
      rec.improved = true;
      r.params = params;
      best_graph = m.inputs.graph;
      log.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    log.epochs.push_back(rec);
    if (options.progress)
      *options.progress << "epoch " << epoch << "  train_loss " << rec.train_loss << "  val_mae "
                        << rec.val_mae << (rec.improved ? "  *" : "") << '\n';
    if (options.on_epoch) options.on_epoch(epoch, params);
    if (stale >= cfg.patience && cfg.patience > 0) {
      log.stop_reason = "patience";
      break;
    }
  }
  log.best_val_mae = best;
  m.inputs.graph = best_graph;
  return r;
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_mae,improved\n";
  out << "0," << csv::format_double(log.initial_train_loss) << ",,0\n";
  for (const auto& e : log.epochs)
    out << e.epoch << ',' << csv::format_double(e.train_loss) << ',' << csv::format_double(e.val_mae)
        << ',' << (e.improved ? 1 : 0) << '\n';
  out << "# best_epoch," << log.best_epoch << "\n# best_val_mae," << csv::format_double(log.best_val_mae)
      << "\n# stop_reason," << log.stop_reason << '\n';
}

// ---------------------------------------------------------------- checkpoints

namespace {

NLOHMANN_JSON_SERIALIZE_ENUM(NormScope, {{NormScope::Global, "global"},
                                         {NormScope::PerStation, "per_station"}})

nlohmann::json station_json(const StationMeta& s) {
  return {{"id", s.id}, {"lat", s.point.lat}, {"lon", s.point.lon}, {"geo", s.geo_feats}, {"grade", s.grade}};
}

StationMeta station_from(const nlohmann::json& j) {
  StationMeta s;
  s.id = j.at("id").get<std::string>();
  s.point = GeoPoint::make(j.at("lat").get<double>(), j.at("lon").get<double>());
  s.geo_feats = j.at("geo").get<std::array<double, kGeoFeatures>>();
  s.grade = j.at("grade").get<int>();
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const PreparedModel& m,
                     const ModelParams& params) {
  nlohmann::json meta;
  meta["format"] = "omniair-checkpoint";
  meta["rng_seed"] = m.cfg.seed;
  meta["config_hash"] = config_hash(m.cfg);
  meta["config"] = to_json(m.cfg);
  meta["param_fingerprint"] = hex64(params.fingerprint());
  auto& st = meta["stations"] = nlohmann::json::array();
  for (const auto& s : m.stations) st.push_back(station_json(s));
  meta["norm"] = {{"scope", m.norm.scope},       {"stations", m.norm.stations},
                  {"channels", m.norm.channels}, {"mean", m.norm.mean},
                  {"std", m.norm.std},           {"global_mean", m.norm.global_mean},
                  {"global_std", m.norm.global_std}};
  meta["encoder"] = {{"geo_mean", m.enc.geo_mean},
                     {"geo_std", m.enc.geo_std},
                     {"ctx_mean", m.enc.ctx_mean},
                     {"ctx_std", m.enc.ctx_std}};
  auto& ctx = meta["contexts"] = nlohmann::json::array();
  for (const auto& c : m.contexts)
    ctx.push_back({{"mu", c.mu},
                   {"sigma", c.sigma},
                   {"delta_c", c.delta_c},
                   {"delta_self", c.delta_self},
                   {"level_dist", c.level_dist},
                   {"centroid", {c.centroid.lat, c.centroid.lon}},
                   {"fallback", c.fallback}});
  const HybridGraph& g = m.inputs.graph;
  std::vector<int> kinds;
  for (EdgeKind k : g.kinds) kinds.push_back(static_cast<int>(k));
  meta["graph"] = {{"nodes", g.nodes},  {"offsets", g.offsets}, {"targets", g.targets},
                   {"kinds", kinds},    {"km", g.km},           {"w_static", g.w_static}};
  write_bundle(dir, params, meta);
  save_config(dir / "config.json", m.cfg);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Bundle b = read_bundle(dir);
  const auto& j = b.manifest;
  if (j.value("format", "") != "omniair-checkpoint")
    throw std::invalid_argument(dir.string() + " is not a model checkpoint");
  Checkpoint ck;
  PreparedModel& m = ck.model;
  try {
    m.cfg = config_from_json(j.at("config"));
    for (const auto& s : j.at("stations")) m.stations.push_back(station_from(s));
    const auto& n = j.at("norm");
    m.norm.scope = n.at("scope").get<NormScope>();
    m.norm.stations = n.at("stations").get<std::size_t>();
    m.norm.channels = n.at("channels").get<std::size_t>();
    m.norm.mean = n.at("mean").get<std::vector<double>>();
    m.norm.std = n.at("std").get<std::vector<double>>();
    m.norm.global_mean = n.at("global_mean").get<std::vector<double>>();
    m.norm.global_std = n.at("global_std").get<std::vector<double>>();
    const auto& e = j.at("encoder");
    m.enc.geo_mean = e.at("geo_mean").get<std::array<double, kGeoFeatures>>();
    m.enc.geo_std = e.at("geo_std").get<std::array<double, kGeoFeatures>>();
    m.enc.ctx_mean = e.at("ctx_mean").get<std::array<double, 4>>();
    m.enc.ctx_std = e.at("ctx_std").get<std::array<double, 4>>();
    for (const auto& c : j.at("contexts")) {
      NeighborContext nc;
      nc.mu = c.at("mu").get<double>();
      nc.sigma = c.at("sigma").get<double>();
      nc.delta_c = c.at("delta_c").get<double>();
      nc.delta_self = c.at("delta_self").get<double>();
      nc.level_dist = c.at("level_dist").get<std::array<double, kGrades>>();
      const auto cen = c.at("centroid").get<std::array<double, 2>>();
      nc.centroid = GeoPoint{cen[0], cen[1]};
      nc.fallback = c.at("fallback").get<bool>();
      m.contexts.push_back(nc);
    }
    const auto& g = j.at("graph");
    HybridGraph& hg = m.inputs.graph;
    hg.nodes = g.at("nodes").get<std::size_t>();
    hg.offsets = g.at("offsets").get<std::vector<std::size_t>>();
    hg.targets = g.at("targets").get<std::vector<std::size_t>>();
    for (int k : g.at("kinds").get<std::vector<int>>()) hg.kinds.push_back(static_cast<EdgeKind>(k));
    hg.km = g.at("km").get<std::vector<double>>();
    hg.w_static = g.at("w_static").get<std::vector<double>>();
    hg.finalize();
    hg.check();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (m.contexts.size() != m.stations.size() || m.inputs.graph.nodes != m.stations.size())
    throw std::runtime_error("checkpoint: station, context and graph sizes disagree");
  m.inputs.id_static = identity_static_inputs(m.stations, m.contexts, m.enc, fourier_for(m.cfg));
  m.inputs.grades = grades_of(m.stations);
  ck.params = std::move(b.tensors);
  const ModelParams expected = init_model_params(m.cfg, m.inputs.id_static.dim(1), m.norm.channels, 0);
  for (const auto& [name, t] : expected)
    if (!ck.params.contains(name) || ck.params.at(name).shape != t.shape)
      throw std::runtime_error("checkpoint: parameter '" + name + "' missing or mis-shaped");
  return ck;
}

SeriesFrame align_to_model(const PreparedModel& model, std::span<const StationMeta> stations,
                           const SeriesFrame& frame) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < stations.size(); ++i) pos.emplace(stations[i].id, i);
  std::vector<std::size_t> keep;
  for (const auto& s : model.stations) {
    auto it = pos.find(s.id);
    if (it == pos.end())
      throw std::invalid_argument("station '" + s.id + "' of the checkpoint is missing from the station file");
    keep.push_back(it->second);
  }
  if (stations.size() != model.stations.size())
    throw std::invalid_argument("station file has " + std::to_string(stations.size()) +
                                " stations, checkpoint has " + std::to_string(model.stations.size()));
  return frame.select_stations(keep);
}

// ---------------------------------------------------------------- inference

Forecast forecast_window(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                         std::span<const StationMeta> stations, const SeriesFrame& frame,
                         std::size_t end, const NormStats& norm) {
  if (end < cfg.input_steps || end > frame.steps())
    throw std::invalid_argument("insufficient history: need " + std::to_string(cfg.input_steps) +
                                " steps before the window end, have " + std::to_string(std::min(end, frame.steps())));
  const WindowBatch b = input_window(frame, end, cfg.input_steps, cfg.horizon, norm);
  Forecast f;
  const Tensor y = predict_raw(params, cfg, st, b, norm);
  f.values = Tensor({cfg.horizon, frame.stations, frame.channels}, y.data);
  for (std::size_t k = 1; k <= cfg.horizon; ++k) f.days.push_back(frame.days[end - 1] + static_cast<std::int64_t>(k));
  for (const auto& s : stations) f.station_ids.push_back(s.id);
  return f;
}

void write_forecast_csv(const std::filesystem::path& path, const Forecast& f,
                        const std::vector<bool>* only) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "timestamp,station_id,channel,value\n";
  const std::size_t N = f.station_ids.size(), C = f.values.dim(2);
  for (std::size_t k = 0; k < f.days.size(); ++k) {
    const std::string day = format_date(f.days[k]);
    for (std::size_t n = 0; n < N; ++n) {
      if (only && !(*only)[n]) continue;
      for (std::size_t c = 0; c < C; ++c)
        out << day << ',' << f.station_ids[n] << ',' << kChannelNames[c] << ','
            << csv::format_double(f.values[(k * N + n) * C + c]) << '\n';
    }
  }
}

Tensor identity_embeddings(const ModelParams& params, const StationInputs& st) {
  Tape tape;
  const BoundParams p(tape, params, false);
  const Var in = identity_input(tape.constant(st.id_static), p["id.grade_table"], st.grades);
  return encode_identity(in, p).value();
}

void write_embeddings_csv(const std::filesystem::path& path, std::span<const StationMeta> stations,
                          const Tensor& e) {
  if (e.rank() != 2 || e.dim(0) != stations.size())
    throw std::invalid_argument("write_embeddings_csv: embedding rows do not match stations");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "station_id";
  for (std::size_t k = 0; k < e.dim(1); ++k) out << ",e_" << k;
  out << '\n';
  for (std::size_t i = 0; i < stations.size(); ++i) {
    out << stations[i].id;
    for (std::size_t k = 0; k < e.dim(1); ++k) out << ',' << csv::format_double(e[i * e.dim(1) + k]);
    out << '\n';
  }
}

GradCheckReport toy_grad_check(std::uint64_t seed) {
  RunConfig cfg;
  cfg.d_model = cfg.id_dim = 8;
  cfg.id_hidden = 8;
  cfg.heads = 4;
  cfg.edge_hidden = 8;
  cfg.beta_hidden = 4;
  cfg.head_hidden = 16;
  cfg.k_geo = 2;
  cfg.k_sem = 1;
  cfg.k_max = 3;
  cfg.input_steps = 6;
  cfg.horizon = 2;
  cfg.seed = seed;
  cfg.fusion = FusionMode::Sum;  // exercise both fusion paths

  RDScenario sc;
  sc.stations = 5;
  sc.steps = 12;
  sc.graph_k = 2;
  sc.seed = seed;
  sc.sources = random_sources(5, 1, seed);
  const RDResult sim = simulate_rd(sc);
  const PreparedModel m = prepare_model(cfg, sim.stations, sim.frame);
  ModelParams params = init_model_params(cfg, m.inputs.id_static.dim(1), kChannels, seed);
  // Move the fusion weights and pruning threshold off their symmetric
  // initial values so every path carries a non-trivial gradient.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& [name, t] : params)
    if (name == "fusion.w" || name.find(".b") != std::string::npos)
      for (double& v : t.data) v += u(rng);
  const WindowSet ws(sim.frame, cfg.input_steps, cfg.horizon, m.norm);
  const std::size_t ids[] = {0, 3};
  const WindowBatch b = ws.batch(ids);
  const Tensor targets = normalized_targets(b, m.norm);
  const LossProgram loss = [&](Tape&, const BoundParams& p) {
    return masked_mae(forward(p, cfg, m.inputs, b.inputs).yhat, targets, b.target_valid);
  };
  return grad_check(loss, params);
}

}  // namespace omniair
