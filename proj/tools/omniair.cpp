// omniair command-line driver.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "omniair/app.hpp"
#include "omniair/bench.hpp"
#include "omniair/geo.hpp"
#include "omniair/kernels.hpp"
#include "omniair/oracle.hpp"

namespace fs = std::filesystem;
using namespace omniair;

namespace {

// Failures that are the caller's fault exit 2, everything else 1.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigFlags {
  std::string path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, patience, batch, input_steps, horizon;
  std::optional<double> lr;
  std::optional<int> workers;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override a config field, key=value (value parsed as JSON)");
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--epochs", epochs, "max_epochs");
    cmd->add_option("--patience", patience, "early stopping patience");
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--input-steps", input_steps, "input window T");
    cmd->add_option("--horizon", horizon, "forecast horizon");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--workers", workers, "OpenMP worker count");
  }

  RunConfig resolve() const {
    nlohmann::json j = nlohmann::json::object();
    if (!path.empty()) {
      std::ifstream in(path);
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
      }
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + s + "'");
      const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
      auto parsed = nlohmann::json::parse(raw, nullptr, false);
      j[key] = parsed.is_discarded() ? nlohmann::json(raw) : parsed;
    }
    if (seed) j["seed"] = *seed;
    if (epochs) j["max_epochs"] = *epochs;
    if (patience) j["patience"] = *patience;
    if (batch) j["batch"] = *batch;
    if (input_steps) j["input_steps"] = *input_steps;
    if (horizon) j["horizon"] = *horizon;
    if (lr) j["lr"] = *lr;
    if (workers) j["workers"] = *workers;
    RunConfig c = config_from_json(j);
    c.validate();
    return c;
  }
};

// Flag beats OMNIAIR_WORKERS beats the config file.
void apply_workers(std::optional<int> flag, int from_config) {
  if (flag) {
    kernels::set_workers(*flag);
    return;
  }
  if (std::getenv("OMNIAIR_WORKERS")) {
    kernels::set_workers(0);
    return;
  }
  kernels::set_workers(from_config);
}

std::int64_t window_end_index(const SeriesFrame& f, const std::string& day) {
  if (f.days.empty()) throw ValidationError("series is empty");
  if (day.empty()) return static_cast<std::int64_t>(f.steps());
  const std::int64_t d = parse_date(day);
  if (d < f.days.front() || d > f.days.back())
    throw ValidationError("window end " + day + " lies outside the series range");
  return d - f.days.front() + 1;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (auto part : csv::split(s)) {
    const auto v = csv::parse_double(part);
    if (!v || *v < 1 || *v != static_cast<double>(static_cast<std::size_t>(*v)))
      throw ValidationError("bad size '" + std::string(part) + "'");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

void ensure_dir(const fs::path& p) {
  if (!p.empty()) fs::create_directories(p);
}

void ensure_parent(const fs::path& p) { ensure_dir(p.parent_path()); }

// Elevation windows: station_id,center,n_0,n_1,...
std::map<std::string, ElevationWindow> load_elevation(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  const auto lines = csv::read_lines(in);
  std::map<std::string, ElevationWindow> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (csv::trim(lines[i]).empty()) continue;
    const auto cells = csv::split(lines[i]);
    const std::string where = path.string() + " line " + std::to_string(i + 1);
    if (cells.size() < 3) throw ValidationError(where + ": need an id, a center and at least one neighbor");
    ElevationWindow w;
    const auto c = csv::parse_double(cells[1]);
    if (!c) throw ValidationError(where + ": bad center elevation");
    w.center = *c;
    for (std::size_t k = 2; k < cells.size(); ++k) {
      const auto v = csv::parse_double(cells[k]);
      if (!v) throw ValidationError(where + ": bad neighbor elevation");
      w.neighbors.push_back(*v);
    }
    out[std::string(csv::trim(cells[0]))] = std::move(w);
  }
  return out;
}

int cmd_features(const fs::path& stations_csv, const fs::path& series_csv, const fs::path& out,
                 const fs::path& elevation_csv, const fs::path& stations_out, const ConfigFlags& flags) {
  const RunConfig cfg = flags.resolve();
  Dataset d = load_dataset(stations_csv, series_csv);
  if (!elevation_csv.empty()) {
    const auto windows = load_elevation(elevation_csv);
    for (auto& s : d.stations) {
      auto it = windows.find(s.id);
      if (it == windows.end()) continue;
      s.geo_feats[3] = tpi(it->second);
      s.geo_feats[4] = roughness(it->second);
    }
  }
  if (!stations_out.empty()) {
    ensure_parent(stations_out);
    write_stations(stations_out, d.stations);
  }
  const Splits sp = chrono_split(d.frame, cfg.split, cfg.input_steps + cfg.horizon);
  const auto contexts = neighbor_contexts(d.stations, sp.train, cfg.k_geo);
  const FourierMap fm({cfg.fourier_levels, FourierMode::Deterministic, 1.0, cfg.fourier_base, 0});
  ensure_parent(out);
  std::ofstream o(out, std::ios::trunc);
  if (!o) throw std::runtime_error("cannot write " + out.string());
  o << "station_id,mu,sigma,delta_c,delta_self";
  for (std::size_t g = 0; g < kGrades; ++g) o << ",level_" << g;
  o << ",fallback";
  for (std::size_t k = 0; k < fm.dim(); ++k) o << ",fourier_" << k;
  o << '\n';
  for (std::size_t i = 0; i < d.stations.size(); ++i) {
    o << d.stations[i].id;
    for (double v : contexts[i].as_array()) o << ',' << csv::format_double(v);
    o << ',' << (contexts[i].fallback ? 1 : 0);
    for (double v : fm(d.stations[i].point)) o << ',' << csv::format_double(v);
    o << '\n';
  }
  std::cout << "wrote features for " << d.stations.size() << " stations to " << out.string() << '\n';
  return 0;
}

int cmd_build_graph(const fs::path& stations_csv, const fs::path& series_csv, const fs::path& checkpoint,
                    const fs::path& out, const ConfigFlags& flags) {
  PreparedModel m;
  if (!checkpoint.empty()) {
    m = load_checkpoint(checkpoint).model;
  } else {
    if (stations_csv.empty() || series_csv.empty())
      throw ValidationError("build-graph needs --checkpoint or both --stations and --series");
    const RunConfig cfg = flags.resolve();
    Dataset d = load_dataset(stations_csv, series_csv);
    const Splits sp = chrono_split(d.frame, cfg.split, cfg.input_steps + cfg.horizon);
    m = prepare_model(cfg, d.stations, sp.train);
  }
  std::vector<std::string> ids;
  for (const auto& s : m.stations) ids.push_back(s.id);
  ensure_parent(out);
  write_graph_csv(out, m.inputs.graph, ids);
  std::cout << "graph: " << m.inputs.graph.nodes << " nodes, " << m.inputs.graph.edges() << " edges -> "
            << out.string() << '\n';
  return 0;
}

int cmd_synth(std::size_t n, std::size_t steps, std::uint64_t seed, std::size_t sources, std::size_t holdout,
              const fs::path& out) {
  if (holdout >= n) throw ValidationError("--holdout must be smaller than --n");
  RDScenario sc;
  sc.stations = n;
  sc.steps = steps;
  sc.seed = seed;
  // Constant station density keeps the explicit step stable as n grows.
  sc.span_deg = 4.0 * std::sqrt(std::max<double>(static_cast<double>(n), 20.0) / 20.0);
  sc.sources = random_sources(n, sources, seed);
  const RDResult r = simulate_rd(sc);
  ensure_dir(out);
  write_stations(out / "stations.csv", r.stations);
  write_series(out / "series.csv", r.frame, r.stations);
  if (holdout > 0) {
    const std::size_t base = n - holdout;
    std::vector<std::size_t> keep(base);
    for (std::size_t i = 0; i < base; ++i) keep[i] = i;
    const std::span<const StationMeta> all(r.stations);
    write_stations(out / "train_stations.csv", all.first(base));
    write_series(out / "train_series.csv", r.frame.select_stations(keep), all.first(base));
    std::vector<StationMeta> fresh(r.stations.begin() + static_cast<std::ptrdiff_t>(base), r.stations.end());
    for (auto& s : fresh) s.grade = -1;  // unknown at deployment time
    write_stations(out / "new_stations.csv", fresh);
  }
  std::cout << "synthesized " << n << " stations x " << steps << " steps into " << out.string() << '\n';
  return 0;
}

int cmd_train(const fs::path& stations_csv, const fs::path& series_csv, const fs::path& out,
              const ConfigFlags& flags, bool quiet) {
  const RunConfig cfg = flags.resolve();
  apply_workers(flags.workers, cfg.workers);
  const Dataset d = load_dataset(stations_csv, series_csv);
  TrainOptions opt;
  if (!quiet) opt.progress = &std::cerr;
  const TrainResult r = train_model(cfg, d, opt);
  ensure_dir(out);
  save_checkpoint(out, r.model, r.params);
  write_train_log(out / "train_log.csv", r.log);
  std::cout << "best epoch " << r.log.best_epoch << ", val MAE " << r.log.best_val_mae << ", stopped by "
            << r.log.stop_reason << "; checkpoint in " << out.string() << '\n';
  if (r.log.stop_reason == "diverged") {
    std::cerr << "training diverged; the last good parameters were kept\n";
    return 1;
  }
  return 0;
}

int cmd_predict(const fs::path& checkpoint, const fs::path& stations_csv, const fs::path& series_csv,
                const std::string& window_end, const fs::path& out, std::optional<int> workers) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  apply_workers(workers, ck.model.cfg.workers);
  const auto stations = load_stations(stations_csv);
  const SeriesFrame frame = align_to_model(ck.model, stations, load_series(series_csv, stations));
  const auto end = static_cast<std::size_t>(window_end_index(frame, window_end));
  if (end < ck.model.cfg.input_steps)
    throw ValidationError("insufficient history: the window needs " + std::to_string(ck.model.cfg.input_steps) +
                          " steps, only " + std::to_string(end) + " available");
  const Forecast f = forecast_window(ck.params, ck.model.cfg, ck.model.inputs, ck.model.stations, frame, end,
                                     ck.model.norm);
  ensure_parent(out);
  write_forecast_csv(out, f);
  std::cout << "forecast " << f.days.size() << " steps x " << f.station_ids.size() << " stations -> "
            << out.string() << '\n';
  return 0;
}

int cmd_predict_unseen(const fs::path& checkpoint, const fs::path& stations_csv, const fs::path& new_csv,
                       const fs::path& series_csv, const std::string& window_end, const fs::path& out,
                       const fs::path& metrics_out, std::optional<int> workers) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const RunConfig& cfg = ck.model.cfg;
  apply_workers(workers, cfg.workers);
  const std::uint64_t before = ck.params.fingerprint();
  const auto base = load_stations(stations_csv);
  const auto fresh = load_stations(new_csv, true);
  if (fresh.empty()) throw ValidationError(new_csv.string() + " lists no stations");
  const ExtendedInputs ext = extend_with_new_stations(ck.model, fresh);

  std::vector<StationMeta> listed = base;
  listed.insert(listed.end(), fresh.begin(), fresh.end());
  const SeriesFrame loaded = load_series(series_csv, listed);
  if (base.size() != ck.model.stations.size())
    throw ValidationError(stations_csv.string() + " does not list the checkpoint's stations");
  // Row order of the extended model: checkpoint stations, then new ones.
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < listed.size(); ++i) pos[listed[i].id] = i;
  std::vector<std::size_t> order;
  for (const auto& s : ext.stations) {
    auto it = pos.find(s.id);
    if (it == pos.end()) throw ValidationError("checkpoint station '" + s.id + "' is missing from " + stations_csv.string());
    order.push_back(it->second);
  }
  const SeriesFrame frame = loaded.select_stations(order);

  const auto end = static_cast<std::size_t>(window_end_index(frame, window_end));
  if (end < cfg.input_steps)
    throw ValidationError("insufficient history: the window needs " + std::to_string(cfg.input_steps) + " steps");
  const Forecast f = forecast_window(ck.params, cfg, ext.inputs, ext.stations, frame, end, ck.model.norm);
  std::vector<bool> only(ext.stations.size(), false);
  std::fill(only.begin() + static_cast<std::ptrdiff_t>(ck.model.stations.size()), only.end(), true);
  ensure_parent(out);
  write_forecast_csv(out, f, &only);

  if (!metrics_out.empty()) {
    const Splits sp = chrono_split(frame, cfg.split, cfg.input_steps + cfg.horizon);
    const WindowEval ev = evaluate_frame(ck.params, cfg, ext.inputs, sp.test, ck.model.norm, &only);
    const std::vector<std::pair<std::string, MetricReport>> reports = {{"omniair", ev.model},
                                                                       {"lv", ev.baseline}};
    ensure_parent(metrics_out);
    write_metrics_csv(metrics_out, reports);
    std::cout << format_metrics(reports);
  }
  if (ck.params.fingerprint() != before) throw std::logic_error("parameters changed during zero-shot inference");
  std::cout << "zero-shot forecast for " << fresh.size() << " new stations -> " << out.string() << '\n';
  return 0;
}

int cmd_evaluate(const fs::path& checkpoint, const fs::path& stations_csv, const fs::path& series_csv,
                 const std::string& split, const fs::path& out, std::optional<int> workers) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const RunConfig& cfg = ck.model.cfg;
  apply_workers(workers, cfg.workers);
  const auto stations = load_stations(stations_csv);
  const SeriesFrame frame = align_to_model(ck.model, stations, load_series(series_csv, stations));
  const Splits sp = chrono_split(frame, cfg.split, cfg.input_steps + cfg.horizon);
  const SeriesFrame* part = nullptr;
  if (split == "train") part = &sp.train;
  else if (split == "val") part = &sp.val;
  else if (split == "test") part = &sp.test;
  else throw ValidationError("--split must be train, val or test");
  const WindowEval ev = evaluate_frame(ck.params, cfg, ck.model.inputs, *part, ck.model.norm);
  const std::vector<std::pair<std::string, MetricReport>> reports = {{"omniair", ev.model}, {"lv", ev.baseline}};
  ensure_parent(out);
  write_metrics_csv(out, reports);
  std::cout << format_metrics(reports);
  return 0;
}

int cmd_export_embeddings(const fs::path& checkpoint, const fs::path& new_csv, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  ensure_parent(out);
  if (new_csv.empty()) {
    write_embeddings_csv(out, ck.model.stations, identity_embeddings(ck.params, ck.model.inputs));
  } else {
    const ExtendedInputs ext = extend_with_new_stations(ck.model, load_stations(new_csv, true));
    write_embeddings_csv(out, ext.stations, identity_embeddings(ck.params, ext.inputs));
  }
  std::cout << "embeddings -> " << out.string() << '\n';
  return 0;
}

int cmd_bench(BenchOptions o, const std::string& sizes, const fs::path& out, const fs::path& plot) {
  if (!sizes.empty()) o.sizes = parse_sizes(sizes);
  const BenchReport r = run_scaling(o);
  std::cout << "stations  edges  forward_ms  build_ms  peak_rss_kb\n";
  for (const auto& row : r.rows)
    std::cout << row.stations << "  " << row.edges << "  " << row.forward_ms << "  " << row.build_ms << "  "
              << (row.peak_rss_kb ? std::to_string(*row.peak_rss_kb) : "-") << '\n';
  std::cout << "log-log slope " << r.slope << '\n';
  if (!out.empty()) {
    ensure_parent(out);
    write_bench_csv(out, r);
  }
  if (!plot.empty()) {
    ensure_parent(plot);
    write_bench_plot(plot, r);
  }
  return 0;
}

int cmd_grad_check(std::uint64_t seed) {
  const GradCheckReport r = toy_grad_check(seed);
  std::cout << "checked " << r.checked << " coordinates, max relative error " << r.max_rel_error << " ("
            << r.worst_param << "[" << r.worst_index << "])\n";
  return r.max_rel_error < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omniair: inductive spatio-temporal forecasting on station graphs"};
  app.require_subcommand(1);
  std::function<int()> run;

  std::string stations, series, out, checkpoint, new_stations, window_end, elevation, stations_out, metrics,
      split = "test", sizes, plot;
  std::optional<int> workers;
  ConfigFlags flags;
  bool quiet = false;

  auto* features = app.add_subcommand("features", "neighborhood context and Fourier features per station");
  features->add_option("--stations", stations)->required();
  features->add_option("--series", series)->required();
  features->add_option("--out", out)->required();
  features->add_option("--elevation", elevation, "elevation windows: station_id,center,n_0,...");
  features->add_option("--stations-out", stations_out, "stations CSV with terrain columns filled in");
  flags.add_to(features);
  features->callback([&] {
    run = [&] { return cmd_features(stations, series, out, elevation, stations_out, flags); };
  });

  auto* graph = app.add_subcommand("build-graph", "dump the hybrid geo/semantic graph");
  graph->add_option("--stations", stations);
  graph->add_option("--series", series);
  graph->add_option("--checkpoint", checkpoint);
  graph->add_option("--out", out)->required();
  flags.add_to(graph);
  graph->callback([&] { run = [&] { return cmd_build_graph(stations, series, checkpoint, out, flags); }; });

  std::size_t n = 20, steps = 400, n_sources = 3, holdout = 0;
  std::uint64_t synth_seed = 7;
  auto* synth = app.add_subcommand("synth", "reaction-diffusion synthetic dataset");
  synth->add_option("--n", n, "stations")->check(CLI::PositiveNumber);
  synth->add_option("--steps", steps, "days")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--sources", n_sources, "intermittent point sources");
  synth->add_option("--holdout", holdout, "last stations written separately as unseen");
  synth->add_option("--out", out)->required();
  synth->callback([&] { run = [&] { return cmd_synth(n, steps, synth_seed, n_sources, holdout, out); }; });

  auto* train = app.add_subcommand("train", "train and write a checkpoint directory");
  train->add_option("--stations", stations)->required();
  train->add_option("--series", series)->required();
  train->add_option("--out", out)->required();
  train->add_flag("--quiet", quiet, "no per-epoch progress");
  flags.add_to(train);
  train->callback([&] { run = [&] { return cmd_train(stations, series, out, flags, quiet); }; });

  auto* predict = app.add_subcommand("predict", "forecast from a checkpoint");
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--stations", stations)->required();
  predict->add_option("--series", series)->required();
  predict->add_option("--window-end", window_end, "last input day (YYYY-MM-DD), default the last day");
  predict->add_option("--out", out)->required();
  predict->add_option("--workers", workers);
  predict->callback([&] {
    run = [&] { return cmd_predict(checkpoint, stations, series, window_end, out, workers); };
  });

  auto* unseen = app.add_subcommand("predict-unseen", "zero-shot forecast for stations absent from training");
  unseen->add_option("--checkpoint", checkpoint)->required();
  unseen->add_option("--stations", stations, "stations the checkpoint was trained on")->required();
  unseen->add_option("--new-stations", new_stations)->required();
  unseen->add_option("--series", series, "series covering the trained and optionally the new stations")
      ->required();
  unseen->add_option("--window-end", window_end);
  unseen->add_option("--out", out)->required();
  unseen->add_option("--metrics", metrics, "test-split metrics on the new stations");
  unseen->add_option("--workers", workers);
  unseen->callback([&] {
    run = [&] {
      return cmd_predict_unseen(checkpoint, stations, new_stations, series, window_end, out, metrics, workers);
    };
  });

  auto* evaluate = app.add_subcommand("evaluate", "masked metrics against the last-value baseline");
  evaluate->add_option("--checkpoint", checkpoint)->required();
  evaluate->add_option("--stations", stations)->required();
  evaluate->add_option("--series", series)->required();
  evaluate->add_option("--split", split, "train, val or test");
  evaluate->add_option("--out", out)->required();
  evaluate->add_option("--workers", workers);
  evaluate->callback([&] { run = [&] { return cmd_evaluate(checkpoint, stations, series, split, out, workers); }; });

  auto* embed = app.add_subcommand("export-embeddings", "identity embeddings per station");
  embed->add_option("--checkpoint", checkpoint)->required();
  embed->add_option("--new-stations", new_stations, "also embed these unseen stations");
  embed->add_option("--out", out)->required();
  embed->callback([&] { run = [&] { return cmd_export_embeddings(checkpoint, new_stations, out); }; });

  BenchOptions bench_opts;
  auto* bench = app.add_subcommand("bench", "forward-pass scaling benchmark");
  bench->add_option("--sizes", sizes, "comma-separated station counts");
  bench->add_option("--k-geo", bench_opts.k_geo);
  bench->add_option("--k-sem", bench_opts.k_sem);
  bench->add_option("--repeats", bench_opts.repeats);
  bench->add_option("--workers", bench_opts.workers);
  bench->add_option("--seed", bench_opts.seed);
  bench->add_option("--out", out, "report CSV");
  bench->add_option("--plot", plot, "two-column log N, log ms file");
  bench->callback([&] { run = [&] { return cmd_bench(bench_opts, sizes, out, plot); }; });

  std::uint64_t gc_seed = 42;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the toy model gradient");
  gc->add_option("--seed", gc_seed);
  gc->callback([&] { run = [&] { return cmd_grad_check(gc_seed); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
