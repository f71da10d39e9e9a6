#pragma once

// Training, checkpointing and inference orchestration behind the CLI.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "omniair/config.hpp"
#include "omniair/data.hpp"
#include "omniair/encoder.hpp"
#include "omniair/eval.hpp"
#include "omniair/model.hpp"

namespace omniair {

struct Dataset {
  std::vector<StationMeta> stations;
  SeriesFrame frame;
};

Dataset load_dataset(const std::filesystem::path& stations_csv,
                     const std::filesystem::path& series_csv);

/// Everything fitted on the training split that inference needs besides
/// the parameters.
struct PreparedModel {
  RunConfig cfg;
  NormStats norm;
  EncoderStats enc;
  std::vector<StationMeta> stations;
  std::vector<NeighborContext> contexts;
  StationInputs inputs;

  std::vector<GeoPoint> points() const;
};

/// Fits normalization, contexts, encoder statistics and the hybrid graph on
/// `train` (which must cover exactly `stations`).
PreparedModel prepare_model(const RunConfig& cfg, std::vector<StationMeta> stations,
                            const SeriesFrame& train);

/// Station inputs extended with new stations attached to the base graph.
/// New stations of unknown grade take the argmax grade of their context.
struct ExtendedInputs {
  StationInputs inputs;
  std::vector<StationMeta> stations;  // base then new
  std::vector<NeighborContext> contexts;
};

ExtendedInputs extend_with_new_stations(const PreparedModel& model,
                                        std::span<const StationMeta> new_stations);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  bool improved = false;
};

struct TrainLog {
  double initial_train_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  std::string stop_reason;
};

struct TrainOptions {
  /// Replaces the measured validation MAE (epoch, measured) -> used.
  std::function<double(std::size_t, double)> val_override;
  /// Progress lines; nullptr for silence.
  std::ostream* progress = nullptr;
  /// Called after each epoch with the current parameters.
  std::function<void(std::size_t, const ModelParams&)> on_epoch;
};

struct TrainResult {
  PreparedModel model;
  ModelParams params;  // best-validation parameters
  TrainLog log;
};

TrainResult train_model(const RunConfig& cfg, const Dataset& data, const TrainOptions& options = {});

void write_train_log(const std::filesystem::path& path, const TrainLog& log);

/// Masked MAE in normalized units over windows of `frame` (loss units).
double mean_loss(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                 const SeriesFrame& frame, const NormStats& norm);

struct WindowEval {
  MetricReport model, baseline;
};

/// Model and LV metrics in raw units over every window of `frame`;
/// `stations_mask` (optional, size N) restricts scoring to some stations.
WindowEval evaluate_frame(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                          const SeriesFrame& frame, const NormStats& norm,
                          const std::vector<bool>* stations_mask = nullptr);

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& dir, const PreparedModel& model,
                     const ModelParams& params);

struct Checkpoint {
  PreparedModel model;
  ModelParams params;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Reorders a frame loaded against `stations` to the checkpoint's station
/// order; throws if the id sets differ.
SeriesFrame align_to_model(const PreparedModel& model, std::span<const StationMeta> stations,
                           const SeriesFrame& frame);

// ---------------------------------------------------------------- inference

struct Forecast {
  std::vector<std::int64_t> days;   // tau forecast days
  std::vector<std::string> station_ids;
  Tensor values;                    // (tau, N, C) raw units
};

/// Forecast from the T steps ending at `end` (exclusive index into `frame`).
Forecast forecast_window(const ModelParams& params, const RunConfig& cfg, const StationInputs& st,
                         std::span<const StationMeta> stations, const SeriesFrame& frame,
                         std::size_t end, const NormStats& norm);

/// CSV `timestamp,station_id,channel,value`; `only` restricts stations.
void write_forecast_csv(const std::filesystem::path& path, const Forecast& f,
                        const std::vector<bool>* only = nullptr);

/// Identity embeddings (N, D_id) for a station input set.
Tensor identity_embeddings(const ModelParams& params, const StationInputs& st);
void write_embeddings_csv(const std::filesystem::path& path, std::span<const StationMeta> stations,
                          const Tensor& embeddings);

/// The 5-station, T=6, tau=2, D=8 gradient-check problem used by the CLI.
GradCheckReport toy_grad_check(std::uint64_t seed = 42);

}  // namespace omniair
