#include <doctest.h>

#include <cmath>
#include <random>

#include "omniair/eval.hpp"

using namespace omniair;

namespace {

Tensor row(std::vector<double> v) {
  Tensor t({v.size(), 1});
  t.data = std::move(v);
  return t;
}

}  // namespace

TEST_CASE("masked metrics on a hand example") {
  const MetricReport r = masked_metrics(row({1, 2}), row({2, 4}), row({1, 1}));
  CHECK(r.overall.count == 2);
  CHECK(*r.overall.mae == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(*r.overall.rmse == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
  CHECK(*r.overall.mape_pct == doctest::Approx(100.0).epsilon(1e-15));
  REQUIRE(r.per_channel.size() == 1);
  CHECK(*r.per_channel[0].mae == doctest::Approx(1.5));
}

TEST_CASE("near-zero targets and masked entries are excluded") {
  const MetricReport r = masked_metrics(row({0.0, 1e-5, 10.0, 3.0}), row({5.0, 7.0, 11.0, 100.0}),
                                        row({1, 1, 1, 0}));
  CHECK(r.overall.count == 1);
  CHECK(*r.overall.mape_pct == doctest::Approx(10.0));
  CHECK(*r.overall.mae == doctest::Approx(1.0));

  const MetricReport none = masked_metrics(row({1, 2}), row({3, 4}), row({0, 0}));
  CHECK(none.overall.count == 0);
  CHECK_FALSE(none.overall.mae.has_value());
  CHECK_FALSE(none.overall.rmse.has_value());
  CHECK_FALSE(none.overall.mape_pct.has_value());
}

TEST_CASE("accumulated metrics equal one-shot metrics") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.5, 5.0);
  Tensor y({10, 2}), yhat({10, 2}), valid({10, 2});
  for (std::size_t i = 0; i < 20; ++i) {
    y.data[i] = u(rng);
    yhat.data[i] = u(rng);
    valid.data[i] = i % 3 ? 1.0 : 0.0;
  }
  const MetricReport whole = masked_metrics(y, yhat, valid);
  MetricAccumulator acc(2);
  auto half = [](const Tensor& t, std::size_t from) {
    Tensor h({5, 2});
    std::copy(t.data.begin() + from * 10, t.data.begin() + from * 10 + 10, h.data.begin());
    return h;
  };
  acc.add(half(y, 0), half(yhat, 0), half(valid, 0));
  acc.add(half(y, 1), half(yhat, 1), half(valid, 1));
  const MetricReport parts = acc.report();
  CHECK(parts.overall.count == whole.overall.count);
  CHECK(*parts.overall.mae == doctest::Approx(*whole.overall.mae).epsilon(1e-12));
  CHECK(*parts.overall.rmse == doctest::Approx(*whole.overall.rmse).epsilon(1e-12));
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(*parts.per_channel[c].mape_pct == doctest::Approx(*whole.per_channel[c].mape_pct).epsilon(1e-12));
}

TEST_CASE("last-value baseline") {
  // (B=1, T=3, N=2, C=1)
  Tensor raw({1, 3, 2, 1}), valid({1, 3, 2, 1});
  raw.data = {1, 10, 2, 20, 3, 0};
  valid.data = {1, 1, 1, 1, 1, 0};
  const std::vector<double> fallback = {99.0};
  const Tensor out = lv_baseline(raw, valid, 2, fallback);
  REQUIRE(out.shape == std::vector<std::size_t>{1, 2, 2, 1});
  CHECK(out.data == std::vector<double>{3, 20, 3, 20});

  std::fill(valid.data.begin(), valid.data.end(), 0.0);
  const Tensor empty = lv_baseline(raw, valid, 1, fallback);
  CHECK(empty.data == std::vector<double>{99, 99});
}

TEST_CASE("a uniformly larger error never lowers MAE") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(1.0, 2.0);
  Tensor y({50, 1}), a({50, 1}), b({50, 1}), valid({50, 1});
  for (std::size_t i = 0; i < 50; ++i) {
    y.data[i] = u(rng);
    const double e = u(rng) - 1.5;
    a.data[i] = y.data[i] + e;
    b.data[i] = y.data[i] + 2.0 * e;
    valid.data[i] = 1.0;
  }
  CHECK(*masked_metrics(y, a, valid).overall.mae <= *masked_metrics(y, b, valid).overall.mae);
}
