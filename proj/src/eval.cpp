#include "omniair/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "csv.hpp"

namespace omniair {

MetricAccumulator::MetricAccumulator(std::size_t channels) : sums_(channels) {
  if (channels == 0) throw std::invalid_argument("metrics: need at least one channel");
}

void MetricAccumulator::add(const Tensor& y, const Tensor& yhat, const Tensor& valid) {
  if (y.shape != yhat.shape || y.shape != valid.shape)
    throw std::invalid_argument("masked_metrics: shapes differ: " + shape_str(y.shape) + ", " +
                                shape_str(yhat.shape) + ", " + shape_str(valid.shape));
  if (y.rank() == 0 || y.shape.back() != sums_.size())
    throw std::invalid_argument("masked_metrics: last axis must have " +
                                std::to_string(sums_.size()) + " channels");
  const std::size_t C = sums_.size();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (valid[i] == 0.0 || !(std::fabs(y[i]) > kMetricThreshold)) continue;
    const double err = yhat[i] - y[i];
    Sums& s = sums_[i % C];
    s.abs += std::fabs(err);
    s.sq += err * err;
    s.pct += std::fabs(err) / std::fabs(y[i]);
    ++s.count;
  }
}

namespace {

MetricValues finish(double abs, double sq, double pct, std::size_t count) {
  MetricValues m;
  m.count = count;
  if (count == 0) return m;
  const double n = static_cast<double>(count);
  m.mae = abs / n;
  m.rmse = std::sqrt(sq / n);
  m.mape_pct = 100.0 * pct / n;
  return m;
}

}  // namespace

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  double abs = 0, sq = 0, pct = 0;
  std::size_t count = 0;
  for (const Sums& s : sums_) {
    r.per_channel.push_back(finish(s.abs, s.sq, s.pct, s.count));
    abs += s.abs;
    sq += s.sq;
    pct += s.pct;
    count += s.count;
  }
  r.overall = finish(abs, sq, pct, count);
  return r;
}

MetricReport masked_metrics(const Tensor& y, const Tensor& yhat, const Tensor& valid) {
  if (y.rank() == 0) throw std::invalid_argument("masked_metrics: empty shape");
  MetricAccumulator acc(y.shape.back());
  acc.add(y, yhat, valid);
  return acc.report();
}

Tensor lv_baseline(const Tensor& raw_inputs, const Tensor& input_valid, std::size_t horizon,
                   std::span<const double> fallback) {
  if (raw_inputs.rank() != 4 || raw_inputs.shape != input_valid.shape)
    throw std::invalid_argument("lv_baseline: inputs must be (B,T,N,C) with a matching mask");
  const std::size_t B = raw_inputs.dim(0), T = raw_inputs.dim(1), N = raw_inputs.dim(2),
                    C = raw_inputs.dim(3);
  if (fallback.size() != C) throw std::invalid_argument("lv_baseline: one fallback per channel");
  Tensor out({B, horizon, N, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        double v = fallback[c];
        for (std::size_t t = T; t-- > 0;) {
          const std::size_t i = ((b * T + t) * N + n) * C + c;
          if (input_valid[i] != 0.0) {
            v = raw_inputs[i];
            break;
          }
        }
        for (std::size_t k = 0; k < horizon; ++k) out[((b * horizon + k) * N + n) * C + c] = v;
      }
  return out;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? csv::format_double(*v) : ""; }

std::string pretty(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string channel_name(std::size_t c) {
  return c < kChannelNames.size() ? std::string(kChannelNames[c]) : "ch" + std::to_string(c);
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, MetricReport>>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model,channel,count,mae,rmse,mape_pct\n";
  for (const auto& [model, r] : reports) {
    auto row = [&](const std::string& ch, const MetricValues& m) {
      out << model << ',' << ch << ',' << m.count << ',' << cell(m.mae) << ',' << cell(m.rmse)
          << ',' << cell(m.mape_pct) << '\n';
    };
    row("all", r.overall);
    for (std::size_t c = 0; c < r.per_channel.size(); ++c) row(channel_name(c), r.per_channel[c]);
  }
}

std::string format_metrics(const std::vector<std::pair<std::string, MetricReport>>& reports) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %-8s %10s %12s %12s %12s\n", "model", "channel", "count",
                "MAE", "RMSE", "MAPE%");
  os << line;
  for (const auto& [model, r] : reports) {
    auto row = [&](const std::string& ch, const MetricValues& m) {
      std::snprintf(line, sizeof line, "%-10s %-8s %10zu %12s %12s %12s\n", model.c_str(),
                    ch.c_str(), m.count, pretty(m.mae).c_str(), pretty(m.rmse).c_str(),
                    pretty(m.mape_pct).c_str());
      os << line;
    };
    row("all", r.overall);
    for (std::size_t c = 0; c < r.per_channel.size(); ++c) row(channel_name(c), r.per_channel[c]);
  }
  return os.str();
}

}  // namespace omniair
