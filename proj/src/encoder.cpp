#include "omniair/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace omniair {

FourierMap::FourierMap(const FourierConfig& cfg) : cfg_(cfg) {
  if (cfg.levels == 0) throw std::invalid_argument("fourier map: levels must be positive");
  if (cfg.mode == FourierMode::Gaussian) {
    if (!(cfg.bandwidth > 0)) throw std::invalid_argument("fourier map: bandwidth must be positive");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, cfg.bandwidth);
    freqs_.resize(cfg.levels);
    for (auto& b : freqs_) {
      b[0] = normal(rng);
      b[1] = normal(rng);
    }
  } else if (!(cfg.base > 0)) {
    throw std::invalid_argument("fourier map: base frequency must be positive");
  }
}

std::size_t FourierMap::dim() const {
  return cfg_.mode == FourierMode::Deterministic ? 4 * cfg_.levels : 2 * cfg_.levels;
}

std::vector<double> FourierMap::operator()(const GeoPoint& p) const {
  validate(p);
  return map_normalized(p.lat / 90.0, p.lon / 180.0);
}

std::vector<double> FourierMap::map_normalized(double x, double y) const {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const std::size_t M = cfg_.levels;
  std::vector<double> out;
  out.reserve(dim());
  if (cfg_.mode == FourierMode::Deterministic) {
    const double s = 1.0 / std::sqrt(2.0 * static_cast<double>(M));
    double f = cfg_.base;
    for (std::size_t j = 0; j < M; ++j, f *= 2.0) {
      out.push_back(s * std::sin(two_pi * f * x));
      out.push_back(s * std::sin(two_pi * f * y));
      out.push_back(s * std::cos(two_pi * f * x));
      out.push_back(s * std::cos(two_pi * f * y));
    }
    return out;
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(M));
  for (const auto& b : freqs_) out.push_back(s * std::cos(two_pi * (b[0] * x + b[1] * y)));
  for (const auto& b : freqs_) out.push_back(s * std::sin(two_pi * (b[0] * x + b[1] * y)));
  return out;
}

std::vector<double> fourier_map(const GeoPoint& p, const FourierConfig& cfg) {
  return FourierMap(cfg)(p);
}

std::array<double, kContextDim> NeighborContext::as_array() const {
  std::array<double, kContextDim> a{mu, sigma, delta_c, delta_self};
  std::copy(level_dist.begin(), level_dist.end(), a.begin() + 4);
  return a;
}

std::vector<std::optional<double>> station_means(const SeriesFrame& train, std::size_t channel) {
  if (channel >= train.channels) throw std::invalid_argument("station_means: channel out of range");
  std::vector<std::optional<double>> out(train.stations);
  for (std::size_t n = 0; n < train.stations; ++n) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < train.steps(); ++t)
      if (train.is_valid(t, n, channel)) {
        sum += train.value(t, n, channel);
        ++count;
      }
    if (count > 0) out[n] = sum / static_cast<double>(count);
  }
  return out;
}

namespace {

double global_mean_of(std::span<const std::optional<double>> means) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& m : means)
    if (m) {
      sum += *m;
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

NeighborContext neighbor_context(std::size_t i, std::span<const GeoPoint> points,
                                 std::span<const std::optional<double>> means,
                                 std::span<const int> grades,
                                 std::span<const Neighbor> neighbors) {
  if (i >= points.size() || means.size() != points.size() || grades.size() != points.size())
    throw std::invalid_argument("neighbor_context: inconsistent station arrays");
  NeighborContext ctx;
  ctx.centroid = points[i];

  std::size_t graded = 0;
  for (const Neighbor& nb : neighbors) {
    const int g = grades[nb.index];
    if (g >= 0 && g < static_cast<int>(kGrades)) {
      ctx.level_dist[static_cast<std::size_t>(g)] += 1.0;
      ++graded;
    }
  }
  if (graded > 0) {
    for (double& v : ctx.level_dist) v /= static_cast<double>(graded);
  } else if (grades[i] >= 0 && grades[i] < static_cast<int>(kGrades)) {
    ctx.level_dist[static_cast<std::size_t>(grades[i])] = 1.0;
  } else {
    ctx.level_dist.fill(1.0 / static_cast<double>(kGrades));
  }

  double sum = 0.0, sq = 0.0, wsum = 0.0, wlat = 0.0, wlon = 0.0, ulat = 0.0, ulon = 0.0;
  std::size_t count = 0;
  for (const Neighbor& nb : neighbors) {
    const auto& c = means[nb.index];
    if (!c) continue;
    sum += *c;
    sq += *c * *c;
    wsum += *c;
    wlat += *c * points[nb.index].lat;
    wlon += *c * points[nb.index].lon;
    ulat += points[nb.index].lat;
    ulon += points[nb.index].lon;
    ++count;
  }
  if (count == 0) {
    ctx.fallback = true;
    ctx.mu = global_mean_of(means);
    ctx.delta_self = means[i] ? *means[i] - ctx.mu : 0.0;
    return ctx;
  }
  const double n = static_cast<double>(count);
  ctx.mu = sum / n;
  ctx.sigma = std::sqrt(std::max(0.0, sq / n - ctx.mu * ctx.mu));
  if (wsum > 0.0) {
    ctx.centroid = GeoPoint{wlat / wsum, wlon / wsum};
  } else {
    ctx.centroid = GeoPoint{ulat / n, ulon / n};
  }
  ctx.delta_c = haversine_km(points[i], ctx.centroid);
  ctx.delta_self = means[i] ? *means[i] - ctx.mu : 0.0;
  return ctx;
}

std::vector<NeighborContext> neighbor_contexts(std::span<const StationMeta> stations,
                                               const SeriesFrame& train, std::size_t k) {
  if (train.stations != stations.size())
    throw std::invalid_argument("neighbor_contexts: frame and station list differ in size");
  std::vector<GeoPoint> points;
  std::vector<int> grades;
  for (const auto& s : stations) {
    points.push_back(s.point);
    grades.push_back(s.grade);
  }
  const auto means = station_means(train, 0);
  std::vector<std::vector<Neighbor>> knn(stations.size());
  const std::size_t kk = std::min(k, stations.size() > 0 ? stations.size() - 1 : 0);
  if (kk > 0) knn = knn_geo(points, kk);
  std::vector<NeighborContext> out;
  out.reserve(stations.size());
  for (std::size_t i = 0; i < stations.size(); ++i) {
    out.push_back(neighbor_context(i, points, means, grades, knn[i]));
    if (out.back().fallback)
      std::cerr << "[omniair] note: station '" << stations[i].id
                << "' has no neighbor with training history; using global context\n";
  }
  return out;
}

NeighborContext anchor_context(const GeoPoint& p_new, std::span<const GeoPoint> anchors,
                               std::span<const NeighborContext> anchor_contexts) {
  if (anchors.empty()) throw std::invalid_argument("anchor_context: no anchors");
  if (anchors.size() != anchor_contexts.size())
    throw std::invalid_argument("anchor_context: anchors and contexts differ in size");
  const auto best = nearest(anchors, p_new, 1).front();
  NeighborContext ctx = anchor_contexts[best.index];
  ctx.delta_self = 0.0;
  ctx.delta_c = haversine_km(p_new, ctx.centroid);
  return ctx;
}

int grade_from_context(const NeighborContext& ctx) {
  return static_cast<int>(std::max_element(ctx.level_dist.begin(), ctx.level_dist.end()) -
                          ctx.level_dist.begin());
}

EncoderStats EncoderStats::fit(std::span<const StationMeta> stations,
                               std::span<const NeighborContext> contexts) {
  if (stations.size() != contexts.size())
    throw std::invalid_argument("EncoderStats::fit: stations and contexts differ in size");
  EncoderStats s;
  const double n = static_cast<double>(std::max<std::size_t>(stations.size(), 1));
  auto moments = [&](auto&& get, double& mean, double& sd) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < stations.size(); ++i) {
      const double v = get(i);
      sum += v;
      sq += v * v;
    }
    mean = sum / n;
    sd = std::max(std::sqrt(std::max(0.0, sq / n - mean * mean)), kStdFloor);
  };
  for (std::size_t f = 0; f < kGeoFeatures; ++f)
    moments([&](std::size_t i) { return stations[i].geo_feats[f]; }, s.geo_mean[f], s.geo_std[f]);
  for (std::size_t f = 0; f < 4; ++f)
    moments([&](std::size_t i) { return contexts[i].as_array()[f]; }, s.ctx_mean[f], s.ctx_std[f]);
  return s;
}

Tensor identity_static_inputs(std::span<const StationMeta> stations,
                              std::span<const NeighborContext> contexts, const EncoderStats& stats,
                              const FourierMap& fourier) {
  if (stations.size() != contexts.size())
    throw std::invalid_argument("identity_static_inputs: stations and contexts differ in size");
  const std::size_t width = fourier.dim() + kContextDim + kGeoFeatures;
  Tensor out({stations.size(), width});
  for (std::size_t i = 0; i < stations.size(); ++i) {
    double* row = out.data.data() + i * width;
    const auto g = fourier(stations[i].point);
    std::copy(g.begin(), g.end(), row);
    row += g.size();
    const auto ctx = contexts[i].as_array();
    for (std::size_t f = 0; f < 4; ++f) row[f] = (ctx[f] - stats.ctx_mean[f]) / stats.ctx_std[f];
    for (std::size_t f = 4; f < kContextDim; ++f) row[f] = ctx[f];
    row += kContextDim;
    for (std::size_t f = 0; f < kGeoFeatures; ++f)
      row[f] = (stations[i].geo_feats[f] - stats.geo_mean[f]) / stats.geo_std[f];
  }
  return out;
}

std::vector<std::vector<double>> semantic_features(const Tensor& static_inputs,
                                                   std::span<const int> grades) {
  const std::size_t n = static_inputs.dim(0), w = static_inputs.dim(1);
  if (grades.size() != n) throw std::invalid_argument("semantic_features: grade count mismatch");
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].assign(static_inputs.data.begin() + static_cast<std::ptrdiff_t>(i * w),
                  static_inputs.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
    out[i].resize(w + kGrades, 0.0);
    if (grades[i] >= 0 && grades[i] < static_cast<int>(kGrades))
      out[i][w + static_cast<std::size_t>(grades[i])] = 1.0;
  }
  return out;
}

void init_identity_params(ModelParams& params, const IdentityShape& shape, std::mt19937_64& rng) {
  params.add("id.grade_table", xavier_uniform({kGrades, shape.grade_embed}, rng));
  params.add("id.W1", xavier_uniform({shape.input(), shape.hidden}, rng));
  params.add("id.b1", Tensor({1, shape.hidden}));
  params.add("id.W2", xavier_uniform({shape.hidden, shape.out}, rng));
  params.add("id.b2", Tensor({1, shape.out}));
}

Var identity_input(Var static_inputs, Var grade_table, std::span<const int> grades) {
  std::vector<std::size_t> rows;
  rows.reserve(grades.size());
  for (int g : grades) {
    if (g < 0 || g >= static_cast<int>(kGrades))
      throw std::invalid_argument("identity_input: grade " + std::to_string(g) + " outside [0, 5]");
    rows.push_back(static_cast<std::size_t>(g));
  }
  if (static_inputs.shape().at(0) != grades.size())
    throw std::invalid_argument("identity_input: grade count mismatch");
  return concat({static_inputs, gather(grade_table, rows)}, 1);
}

Var encode_identity(Var input, const BoundParams& p) {
  const Var w1 = p["id.W1"];
  if (input.shape().size() != 2 || input.shape()[1] != w1.shape()[0])
    throw std::invalid_argument("encode_identity: input width " + shape_str(input.shape()) +
                                " does not match id.W1 " + shape_str(w1.shape()));
  const Var hidden = tanh(add(matmul(input, w1), p["id.b1"]));
  return add(matmul(hidden, p["id.W2"]), p["id.b2"]);
}

}  // namespace omniair
