#include "omniair/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace omniair {

namespace {

constexpr std::size_t kBruteForceLimit = 2000;

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

// Bounded max-heap of the k best (distance, index) candidates.
class BestK {
 public:
  explicit BestK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  void offer(const Neighbor& n) {
    if (heap_.size() < k_) {
      heap_.push_back(n);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (n < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = n;
      std::push_heap(heap_.begin(), heap_.end());
    }
  }

  bool full() const { return heap_.size() == k_; }
  double worst_km() const { return heap_.front().km; }

  std::vector<Neighbor> sorted() && {
    std::sort_heap(heap_.begin(), heap_.end());
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

std::vector<Neighbor> knn_brute(std::span<const GeoPoint> pts, std::size_t i, std::size_t k) {
  BestK best(k);
  for (std::size_t j = 0; j < pts.size(); ++j)
    if (j != i) best.offer({j, haversine_km(pts[i], pts[j])});
  return std::move(best).sorted();
}

// Walks outward from the query in latitude order. Any point whose latitude
// differs by dlat is at least R*dlat away, so the scan stops once both
// frontiers exceed the current k-th distance.
std::vector<Neighbor> knn_band(std::span<const GeoPoint> pts, const std::vector<std::size_t>& order,
                               const std::vector<std::size_t>& rank_of, std::size_t i,
                               std::size_t k) {
  BestK best(k);
  const std::size_t pos = rank_of[i];
  std::size_t lo = pos, hi = pos + 1;
  const double lat0 = radians(pts[i].lat);
  auto bound = [&](std::size_t idx) {
    return kEarthRadiusKm * std::fabs(radians(pts[order[idx]].lat) - lat0);
  };
  while (lo > 0 || hi < order.size()) {
    const double b_lo = lo > 0 ? bound(lo - 1) : INFINITY;
    const double b_hi = hi < order.size() ? bound(hi) : INFINITY;
    const bool take_lo = b_lo <= b_hi;
    const double b = take_lo ? b_lo : b_hi;
    // Slack absorbs rounding between the bound and the haversine value.
    if (best.full() && b > best.worst_km() * (1.0 + 1e-12) + 1e-9) break;
    const std::size_t j = take_lo ? order[--lo] : order[hi++];
    if (j != i) best.offer({j, haversine_km(pts[i], pts[j])});
  }
  return std::move(best).sorted();
}

}  // namespace

GeoPoint GeoPoint::make(double lat, double lon) {
  GeoPoint p{lat, lon};
  validate(p);
  if (p.lon == 180.0) p.lon = -180.0;
  return p;
}

void validate(const GeoPoint& p) {
  if (!std::isfinite(p.lat) || !std::isfinite(p.lon))
    throw std::invalid_argument("geo point has non-finite coordinates");
  if (p.lat < -90.0 || p.lat > 90.0)
    throw std::invalid_argument("latitude " + std::to_string(p.lat) + " outside [-90, 90]");
  if (p.lon < -180.0 || p.lon > 180.0)
    throw std::invalid_argument("longitude " + std::to_string(p.lon) + " outside [-180, 180]");
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  if (!std::isfinite(a.lat) || !std::isfinite(a.lon) || !std::isfinite(b.lat) ||
      !std::isfinite(b.lon))
    throw std::invalid_argument("haversine: non-finite coordinate");
  const double la1 = radians(a.lat), la2 = radians(b.lat);
  const double s_lat = std::sin((la2 - la1) / 2.0);
  const double s_lon = std::sin(radians(b.lon - a.lon) / 2.0);
  double h = s_lat * s_lat + std::cos(la1) * std::cos(la2) * s_lon * s_lon;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

std::vector<std::vector<Neighbor>> knn_geo(std::span<const GeoPoint> points, std::size_t k) {
  const std::size_t n = points.size();
  if (k == 0) throw std::invalid_argument("knn_geo: k must be positive");
  if (k >= n)
    throw std::invalid_argument("knn_geo: k = " + std::to_string(k) + " needs more than " +
                                std::to_string(n) + " points");
  std::vector<std::vector<Neighbor>> out(n);
  if (n <= kBruteForceLimit) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
      out[static_cast<std::size_t>(i)] = knn_brute(points, static_cast<std::size_t>(i), k);
    return out;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return points[a].lat < points[b].lat; });
  std::vector<std::size_t> rank_of(n);
  for (std::size_t r = 0; r < n; ++r) rank_of[order[r]] = r;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    out[static_cast<std::size_t>(i)] = knn_band(points, order, rank_of, static_cast<std::size_t>(i), k);
  return out;
}

std::vector<Neighbor> nearest(std::span<const GeoPoint> pool, const GeoPoint& query, std::size_t k) {
  k = std::min(k, pool.size());
  if (k == 0) return {};
  BestK best(k);
  for (std::size_t j = 0; j < pool.size(); ++j) best.offer({j, haversine_km(query, pool[j])});
  return std::move(best).sorted();
}

double gaussian_static_weight(double d_km, double kappa_km) {
  if (!(kappa_km > 0.0)) throw std::invalid_argument("gaussian_static_weight: kappa must be > 0");
  if (!(d_km >= 0.0)) throw std::invalid_argument("gaussian_static_weight: distance must be >= 0");
  return std::exp(-(d_km * d_km) / (2.0 * kappa_km * kappa_km));
}

double tpi(const ElevationWindow& w) {
  if (w.neighbors.empty()) throw std::invalid_argument("tpi: empty neighbor list");
  double s = 0.0;
  for (double z : w.neighbors) s += z;
  return w.center - s / static_cast<double>(w.neighbors.size());
}

double roughness(const ElevationWindow& w) {
  if (w.neighbors.empty()) throw std::invalid_argument("roughness: empty window");
  const double n = static_cast<double>(w.neighbors.size() + 1);
  double s = w.center;
  for (double z : w.neighbors) s += z;
  const double m = s / n;
  double ss = (w.center - m) * (w.center - m);
  for (double z : w.neighbors) ss += (z - m) * (z - m);
  return std::sqrt(ss / n);
}

}  // namespace omniair
