#pragma once

// Masked forecast metrics and the last-value baseline.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omniair/data.hpp"
#include "omniair/tensor.hpp"

namespace omniair {

/// Entries with |y| at or below this are excluded from every metric.
inline constexpr double kMetricThreshold = 5e-5;

struct MetricValues {
  std::size_t count = 0;
  /// Undefined (nullopt) when count is zero.
  std::optional<double> mae, rmse, mape_pct;
};

struct MetricReport {
  MetricValues overall;
  std::vector<MetricValues> per_channel;
};

/// y, yhat, valid share a shape whose last axis is the channel axis.
MetricReport masked_metrics(const Tensor& y, const Tensor& yhat, const Tensor& valid);

/// Constant forecast of each station/channel's last valid input value;
/// `fallback[c]` when the window has none. inputs (B,T,N,C) raw units with
/// a validity mask; returns (B,tau,N,C).
Tensor lv_baseline(const Tensor& raw_inputs, const Tensor& input_valid, std::size_t horizon,
                   std::span<const double> fallback);

/// Accumulates numerators across batches so metrics over a whole split are
/// exact rather than averages of batch averages.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t channels);
  void add(const Tensor& y, const Tensor& yhat, const Tensor& valid);
  MetricReport report() const;

 private:
  struct Sums {
    double abs = 0, sq = 0, pct = 0;
    std::size_t count = 0;
  };
  std::vector<Sums> sums_;
};

/// CSV `model,channel,count,mae,rmse,mape_pct`; undefined metrics are blank.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, MetricReport>>& reports);
std::string format_metrics(const std::vector<std::pair<std::string, MetricReport>>& reports);

}  // namespace omniair
