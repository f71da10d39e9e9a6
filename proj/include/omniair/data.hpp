#pragma once

// Station metadata and observation frames: CSV ingestion, validity masks,
// chronological splits, normalization and sliding windows.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "omniair/geo.hpp"
#include "omniair/tensor.hpp"

namespace omniair {

inline constexpr std::size_t kChannels = 6;
inline constexpr std::size_t kGeoFeatures = 6;
inline constexpr std::size_t kGrades = 6;

inline constexpr std::array<std::string_view, kChannels> kChannelNames = {"pm25", "pm10", "o3",
                                                                          "no2",  "so2",  "co"};
inline constexpr std::array<std::string_view, kGeoFeatures> kGeoFeatureNames = {
    "elevation",         "climate_avg_wind",  "climate_avg_wind_dir",
    "terrain_tpi",       "terrain_roughness", "distance_to_coast_km"};

/// Raised for malformed input files; maps to the CLI's validation exit code.
class LoadError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StationMeta {
  std::string id;
  GeoPoint point;
  std::array<double, kGeoFeatures> geo_feats{};
  /// Pollution grade 0..5; -1 marks an unknown grade (new stations only).
  int grade = 0;
};

/// Dense (time x station x channel) observations with a validity mask.
/// Timestamps are days since 1970-01-01, strictly increasing by one.
struct SeriesFrame {
  std::vector<std::int64_t> days;
  std::size_t stations = 0;
  std::size_t channels = kChannels;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  std::size_t steps() const { return days.size(); }
  std::size_t offset(std::size_t t, std::size_t n, std::size_t c) const {
    return (t * stations + n) * channels + c;
  }
  double value(std::size_t t, std::size_t n, std::size_t c) const { return values[offset(t, n, c)]; }
  bool is_valid(std::size_t t, std::size_t n, std::size_t c) const {
    return valid[offset(t, n, c)] != 0;
  }

  static SeriesFrame empty(std::vector<std::int64_t> days, std::size_t stations,
                           std::size_t channels = kChannels);
  /// Steps [begin, begin + count).
  SeriesFrame slice_time(std::size_t begin, std::size_t count) const;
  /// Stations in `keep`, in that order.
  SeriesFrame select_stations(std::span<const std::size_t> keep) const;
  /// Concatenates station sets of two frames on identical timestamps.
  static SeriesFrame join_stations(const SeriesFrame& a, const SeriesFrame& b);
};

std::int64_t parse_date(std::string_view iso);
std::string format_date(std::int64_t days);

/// `allow_unknown_grade` accepts a blank or -1 grade (new-station files).
std::vector<StationMeta> load_stations(const std::filesystem::path& path,
                                       bool allow_unknown_grade = false);
void write_stations(const std::filesystem::path& path, std::span<const StationMeta> stations);

/// Long-format CSV; stations absent from the file stay fully missing.
SeriesFrame load_series(const std::filesystem::path& path, std::span<const StationMeta> stations);
void write_series(const std::filesystem::path& path, const SeriesFrame& frame,
                  std::span<const StationMeta> stations);

/// Binary cache using the manifest.json + values.bin layout of checkpoints.
void write_series_cache(const std::filesystem::path& dir, const SeriesFrame& frame);
SeriesFrame read_series_cache(const std::filesystem::path& dir);

struct Splits {
  SeriesFrame train, val, test;
};

/// Contiguous 6:2:2-style split: floor sizes for train and val, remainder to
/// test. Throws if any part is shorter than `min_length`.
Splits chrono_split(const SeriesFrame& frame, std::array<double, 3> ratios = {0.6, 0.2, 0.2},
                    std::size_t min_length = 0);

enum class NormScope { Global, PerStation };

/// Per-channel (or per-station-channel) mean/std over valid training entries.
struct NormStats {
  NormScope scope = NormScope::Global;
  std::size_t stations = 0;
  std::size_t channels = kChannels;
  std::vector<double> mean;
  std::vector<double> std;
  /// Per-channel statistics over all stations; used for stations outside
  /// the fitted set under per-station scope.
  std::vector<double> global_mean;
  std::vector<double> global_std;

  static NormStats fit(const SeriesFrame& train, NormScope scope = NormScope::Global);

  double mean_of(std::size_t n, std::size_t c) const;
  double std_of(std::size_t n, std::size_t c) const;
  double normalize(double v, std::size_t n, std::size_t c) const {
    return (v - mean_of(n, c)) / std_of(n, c);
  }
  double denormalize(double z, std::size_t n, std::size_t c) const {
    return z * std_of(n, c) + mean_of(n, c);
  }
  const std::vector<double>& channel_means() const { return global_mean; }
};

inline constexpr double kStdFloor = 1e-6;

struct WindowBatch {
  std::size_t batch = 0, input_steps = 0, horizon = 0, stations = 0, channels = 0;
  Tensor inputs;       // (B,T,N,C) z-scored, zero at invalid entries
  Tensor input_valid;  // (B,T,N,C) 0/1
  Tensor raw_inputs;   // (B,T,N,C) raw units, 0 at invalid entries
  Tensor targets;      // (B,tau,N,C) raw units
  Tensor target_valid; // (B,tau,N,C) 0/1
  std::vector<std::size_t> starts;
};

/// Sliding windows over one frame: window w covers inputs [w, w+T) and
/// targets [w+T, w+T+tau).
class WindowSet {
 public:
  WindowSet(const SeriesFrame& frame, std::size_t input_steps, std::size_t horizon,
            const NormStats& stats);

  std::size_t count() const { return count_; }
  WindowBatch batch(std::span<const std::size_t> windows) const;
  /// Consecutive batches of at most `batch_size` windows in index order.
  std::vector<WindowBatch> batches(std::size_t batch_size) const;

  const SeriesFrame& frame() const { return *frame_; }

 private:
  const SeriesFrame* frame_;
  const NormStats* stats_;
  std::size_t input_steps_, horizon_, count_;
};

WindowSet make_windows(const SeriesFrame& frame, std::size_t input_steps, std::size_t horizon,
                       const NormStats& stats);

/// Normalized single input window ending at step `end` (exclusive).
WindowBatch input_window(const SeriesFrame& frame, std::size_t end, std::size_t input_steps,
                         std::size_t horizon, const NormStats& stats);

}  // namespace omniair
