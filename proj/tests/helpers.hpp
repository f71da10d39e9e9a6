#pragma once

#include <cmath>
#include <random>

#include "omniair/params.hpp"
#include "omniair/tensor.hpp"

namespace omniair::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (double& v : t.data) v = d(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace omniair::test
