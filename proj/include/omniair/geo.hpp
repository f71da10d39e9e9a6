#pragma once

// Spherical geometry and terrain descriptors for station metadata.

#include <cstddef>
#include <span>
#include <vector>

namespace omniair {

inline constexpr double kEarthRadiusKm = 6371.0;

/// Latitude/longitude in degrees. Longitude +180 is folded onto -180.
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  /// Validated, normalized point; throws std::invalid_argument on
  /// non-finite or out-of-range input.
  static GeoPoint make(double lat, double lon);
};

void validate(const GeoPoint& p);

/// Great-circle distance in km on a sphere of radius 6371 km.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

struct Neighbor {
  std::size_t index = 0;
  double km = 0.0;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.km < b.km || (a.km == b.km && a.index < b.index);
  }
};

/// k nearest other points for every point, ascending by (distance, index).
/// Exact for all N: brute force up to 2000 points, a latitude-band scan above.
std::vector<std::vector<Neighbor>> knn_geo(std::span<const GeoPoint> points, std::size_t k);

/// Nearest `k` points of `pool` to `query` (no self exclusion).
std::vector<Neighbor> nearest(std::span<const GeoPoint> pool, const GeoPoint& query, std::size_t k);

/// exp(-d^2 / (2 kappa^2)).
double gaussian_static_weight(double d_km, double kappa_km);

struct ElevationWindow {
  double center = 0.0;
  std::vector<double> neighbors;
};

/// Topographic position index: center minus mean of the neighbors.
double tpi(const ElevationWindow& w);

/// Population standard deviation over the window, center included.
double roughness(const ElevationWindow& w);

}  // namespace omniair
