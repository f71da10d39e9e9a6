#include "omniair/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <Eigen/Dense>

#include "omniair/encoder.hpp"

namespace omniair {

// ---------------------------------------------------------------- simulator

double RDSource::at(std::size_t t) const {
  if (period == 0) return amplitude;
  return ((t + phase) % period) < on_steps ? amplitude : 0.0;
}

std::vector<RDSource> random_sources(std::size_t stations, std::size_t count, std::uint64_t seed) {
  if (count > stations) throw std::invalid_argument("random_sources: more sources than stations");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> nodes(stations);
  std::iota(nodes.begin(), nodes.end(), 0);
  std::shuffle(nodes.begin(), nodes.end(), rng);
  std::uniform_real_distribution<double> amp(5.0, 15.0);
  std::uniform_int_distribution<std::size_t> per(20, 60);
  std::vector<RDSource> out;
  for (std::size_t k = 0; k < count; ++k) {
    RDSource s;
    s.node = nodes[k];
    s.amplitude = amp(rng);
    s.period = per(rng);
    s.on_steps = s.period / 2;
    s.phase = std::uniform_int_distribution<std::size_t>(0, s.period - 1)(rng);
    out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const RDSource& a, const RDSource& b) { return a.node < b.node; });
  return out;
}

RDSystem::RDSystem(std::vector<GeoPoint> points, std::size_t graph_k, double kappa_km,
                   double diffusion, double decay, double dt)
    : points_(std::move(points)), degree_(points_.size(), 0.0), diffusion_(diffusion),
      decay_(decay), dt_(dt) {
  if (diffusion < 0 || decay < 0 || dt <= 0)
    throw std::invalid_argument("reaction-diffusion: diffusion and decay must be non-negative, dt positive");
  const std::size_t n = points_.size();
  const std::size_t k = std::min(graph_k, n > 0 ? n - 1 : 0);
  if (k > 0) {
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    const auto knn = knn_geo(points_, k);
    for (std::size_t i = 0; i < n; ++i)
      for (const Neighbor& nb : knn[i]) pairs.emplace(std::min(i, nb.index), std::max(i, nb.index));
    for (const auto& [i, j] : pairs) {
      const double w = gaussian_static_weight(haversine_km(points_[i], points_[j]), kappa_km);
      adj_.push_back({static_cast<double>(i), static_cast<double>(j), w});
      adj_.push_back({static_cast<double>(j), static_cast<double>(i), w});
      degree_[i] += w;
      degree_[j] += w;
    }
  }
  max_row_sum_ = degree_.empty() ? 0.0 : *std::max_element(degree_.begin(), degree_.end());
  if (stability_bound() >= 1.0)
    throw std::invalid_argument(
        "reaction-diffusion: explicit Euler unstable, dt * (D * 2 * max_row_sum + gamma) = " +
        std::to_string(stability_bound()) + " must be < 1");
}

double RDSystem::stability_bound() const {
  return dt_ * (diffusion_ * 2.0 * max_row_sum_ + decay_);
}

std::vector<double> RDSystem::laplacian_apply(const std::vector<double>& c) const {
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = degree_[i] * c[i];
  for (const auto& [i, j, w] : adj_) out[static_cast<std::size_t>(i)] -= w * c[static_cast<std::size_t>(j)];
  return out;
}

std::vector<double> RDSystem::step(const std::vector<double>& c, const std::vector<double>& s) const {
  if (c.size() != size() || s.size() != size())
    throw std::invalid_argument("reaction-diffusion: state size mismatch");
  const auto lc = laplacian_apply(c);
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    out[i] = c[i] + dt_ * (-diffusion_ * lc[i] + s[i] - decay_ * c[i]);
  return out;
}

std::vector<GeoPoint> random_points(const RDScenario& sc) {
  std::mt19937_64 rng(sc.seed);
  std::uniform_real_distribution<double> u(-0.5 * sc.span_deg, 0.5 * sc.span_deg);
  std::vector<GeoPoint> pts;
  for (std::size_t i = 0; i < sc.stations; ++i) {
    const double lat = sc.center_lat + u(rng);
    const double lon = sc.center_lon + u(rng);
    pts.push_back(GeoPoint::make(lat, lon));
  }
  return pts;
}

int grade_from_pm25(double mean_pm25) {
  constexpr std::array<double, 5> breaks = {12.0, 35.4, 55.4, 150.4, 250.4};
  int g = 0;
  for (double b : breaks)
    if (mean_pm25 > b) ++g;
  return g;
}

RDResult simulate_rd(const RDScenario& sc) {
  if (sc.stations == 0 || sc.steps == 0) throw std::invalid_argument("simulate_rd: empty scenario");
  for (const auto& s : sc.sources)
    if (s.node >= sc.stations) throw std::invalid_argument("simulate_rd: source node out of range");
  const RDSystem sys(random_points(sc), sc.graph_k, sc.kappa_km, sc.diffusion, sc.decay, sc.dt);
  const std::size_t n = sc.stations;
  std::mt19937_64 rng(sc.seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  RDResult r;
  std::vector<double> c(n);
  for (double& v : c) v = sc.initial * (0.5 + unit(rng));
  for (std::size_t t = 0; t < sc.steps; ++t) {
    r.clean.push_back(c);
    std::vector<double> s(n, sc.background);
    for (const auto& src : sc.sources) s[src.node] += src.at(t);
    c = sys.step(c, s);
  }

  std::vector<std::int64_t> days(sc.steps);
  std::iota(days.begin(), days.end(), sc.start_day);
  r.frame = SeriesFrame::empty(std::move(days), n);
  constexpr std::array<double, kChannels> scales = {1.0, 1.6, 0.9, 0.6, 0.25, 0.02};
  for (std::size_t t = 0; t < sc.steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        const double base = ch == 0 ? r.clean[t][i] : r.clean[t > 0 ? t - 1 : 0][i];
        const double v = scales[ch] * (base + sc.noise_std * noise(rng));
        const bool missing = unit(rng) < sc.missing_rate;
        r.frame.values[r.frame.offset(t, i, ch)] = missing ? 0.0 : v;
        r.frame.valid[r.frame.offset(t, i, ch)] = missing ? 0 : 1;
      }

  std::uniform_real_distribution<double> elev(0.0, 2000.0), wind(1.0, 6.0), dir(0.0, 360.0),
      rough(0.0, 50.0), coast(0.0, 500.0);
  std::normal_distribution<double> tpi_dist(0.0, 20.0);
  for (std::size_t i = 0; i < n; ++i) {
    StationMeta m;
    char id[32];
    std::snprintf(id, sizeof id, "S%03zu", i);
    m.id = id;
    m.point = sys.points()[i];
    m.geo_feats = {elev(rng), wind(rng), dir(rng), tpi_dist(rng), rough(rng), coast(rng)};
    double mean = 0.0;
    for (const auto& row : r.clean) mean += row[i];
    m.grade = grade_from_pm25(mean / static_cast<double>(sc.steps));
    r.stations.push_back(std::move(m));
  }
  return r;
}

// ---------------------------------------------------------------- dense reference

namespace {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Mat mat(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  if (offset + rows * cols > t.size()) throw std::invalid_argument("dense reference: parameter too small");
  return RowMajorMap(t.data.data() + offset, static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

Mat mat(const Tensor& t) { return mat(t, t.dim(0), t.size() / t.dim(0)); }

RowVec row(const Tensor& t) { return mat(t, 1, t.size()); }

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor to_tensor(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return t;
}

}  // namespace

DenseResult dense_forward(const ModelParams& P, const RunConfig& cfg, const StationInputs& st,
                          const Tensor& inputs,
                          const std::optional<std::vector<double>>& forced_coeffs) {
  const std::size_t N = st.stations();
  if (N > 64) throw std::invalid_argument("dense_forward: refusing N = " + std::to_string(N) + " > 64");
  if (inputs.rank() != 4 || inputs.dim(2) != N) throw std::invalid_argument("dense_forward: bad inputs");
  const std::size_t B = inputs.dim(0), T = inputs.dim(1), C = inputs.dim(3);
  const std::size_t D = cfg.d_model, L = cfg.diffusion_steps, S = L + 1;
  const std::size_t H = cfg.heads, dh = D / H, tau = cfg.horizon;
  const HybridGraph& g = st.graph;

  // Input projection.
  const Mat w_in = mat(P.at("input.W"));
  const RowVec b_in = row(P.at("input.b"));
  std::vector<Mat> h0(B * T);
  for (std::size_t s = 0; s < B * T; ++s) {
    Mat x = mat(inputs, N, C, s * N * C);
    h0[s] = (x * w_in).rowwise() + b_in;
  }

  // Identity embedding.
  const Mat grade_table = mat(P.at("id.grade_table"));
  const Mat w1 = mat(P.at("id.W1")), w2 = mat(P.at("id.W2"));
  const RowVec b1 = row(P.at("id.b1")), b2 = row(P.at("id.b2"));
  const std::size_t fs = st.id_static.dim(1);
  Mat e_id(N, D);
  for (std::size_t n = 0; n < N; ++n) {
    RowVec x(fs + grade_table.cols());
    x << mat(st.id_static, 1, fs, n * fs), grade_table.row(st.grades[n]);
    const RowVec hid = ((x * w1) + b1).array().tanh().matrix();
    e_id.row(static_cast<Eigen::Index>(n)) = hid * w2 + b2;
  }

  // Edge weights -> dense adjacency per batch element.
  const Mat w_e = mat(P.at("edge.W_e"));
  const Eigen::VectorXd a = mat(P.at("edge.a")).col(0);
  const Eigen::VectorXd gate_w = mat(P.at("edge.gate_w")).col(0);
  const double gate_b = P.at("edge.gate_b")[0];
  const Mat pw1 = mat(P.at("prune.W1"));
  const RowVec pb1 = row(P.at("prune.b1"));
  const Eigen::VectorXd pw2 = mat(P.at("prune.W2")).col(0);
  const double pb2 = P.at("prune.b2")[0];

  DenseResult out;
  for (std::size_t b = 0; b < B; ++b) {
    Mat h;
    if (cfg.edge_features == EdgeFeatures::Last) {
      h = h0[b * T + T - 1];
    } else {
      h = Mat::Zero(N, D);
      for (std::size_t t = 0; t < T; ++t) h += h0[b * T + t];
      h /= static_cast<double>(T);
    }
    Mat A = Mat::Zero(N, N);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t e0 = g.offsets[i], e1 = g.offsets[i + 1];
      if (e0 == e1) continue;
      const RowVec hi = h.row(static_cast<Eigen::Index>(i));
      const double beta =
          cfg.k_max * sigm(((hi * pw1 + pb1).array().tanh().matrix() * pw2)(0) + pb2);
      std::vector<double> wdyn;
      for (std::size_t e = e0; e < e1; ++e) {
        const RowVec hj = h.row(static_cast<Eigen::Index>(g.targets[e]));
        RowVec cat(2 * D);
        cat << hi, hj;
        RowVec pre = cat * w_e;
        for (Eigen::Index k = 0; k < pre.size(); ++k)
          if (pre(k) < 0) pre(k) *= 0.1;
        const double alpha = std::tanh(pre.dot(a.transpose()));
        RowVec gin(2 * D + 1);
        gin << hi, hj, g.w_static[e];
        const double gate = sigm(gin.dot(gate_w.transpose()) + gate_b);
        wdyn.push_back(gate * g.w_static[e] + (1.0 - gate) * alpha);
      }
      std::vector<std::size_t> order(wdyn.size());
      std::iota(order.begin(), order.end(), 0);
      auto key = [&](std::size_t k) {
        return cfg.rank == RankMode::Absolute ? std::fabs(wdyn[k]) : wdyn[k];
      };
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (key(x) != key(y)) return key(x) > key(y);
        return g.targets[e0 + x] < g.targets[e0 + y];
      });
      std::vector<double> wm(wdyn.size());
      for (std::size_t r = 0; r < order.size(); ++r) {
        const double m = sigm(-cfg.eta * (static_cast<double>(r + 1) - beta));
        wm[order[r]] = wdyn[order[r]] * m;
      }
      double denom = 0.0;
      for (double v : wm) denom += cfg.norm == NormMode::Absolute ? std::fabs(v) : v;
      denom += cfg.norm_eps;
      for (std::size_t k = 0; k < wm.size(); ++k)
        A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g.targets[e0 + k])) = wm[k] / denom;
    }
    out.adjacency.push_back(to_tensor(A));
  }

  // Diffusion with dense products.
  std::vector<std::vector<Mat>> states(S, std::vector<Mat>(B * T));
  for (std::size_t s = 0; s < B * T; ++s) states[0][s] = h0[s];
  for (std::size_t l = 1; l < S; ++l)
    for (std::size_t s = 0; s < B * T; ++s) {
      const Mat A = mat(out.adjacency[s / T]);
      states[l][s] = A * states[l - 1][s] + cfg.lambda * h0[s];
    }

  // Aggregation and fusion.
  const Tensor& wq = P.at("agg.W_Q");
  const Tensor& wk = P.at("agg.W_K");
  const RowVec step_bias = row(P.at("agg.step_bias"));
  const RowVec fusion_w = row(P.at("fusion.w"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  RowVec fusion_soft = (fusion_w.array() - fusion_w.maxCoeff()).exp().matrix();
  fusion_soft /= fusion_soft.sum();
  const Mat gw = mat(P.at("gate.W"));
  const RowVec gb = row(P.at("gate.b"));

  std::vector<Mat> zhat(B * T, Mat(N, D));
  for (std::size_t s = 0; s < B * T; ++s)
    for (std::size_t n = 0; n < N; ++n) {
      const auto ni = static_cast<Eigen::Index>(n);
      RowVec z_signed = RowVec::Zero(D);
      for (std::size_t hh = 0; hh < H; ++hh) {
        const Mat WQ = mat(wq, dh, dh, hh * dh * dh), WK = mat(wk, dh, dh, hh * dh * dh);
        const auto seg = static_cast<Eigen::Index>(hh * dh);
        std::vector<RowVec> hl(S);
        for (std::size_t l = 0; l < S; ++l) hl[l] = states[l][s].row(ni).segment(seg, static_cast<Eigen::Index>(dh));
        std::vector<double> coeff(S);
        if (forced_coeffs) {
          coeff = *forced_coeffs;
        } else {
          RowVec q = RowVec::Zero(static_cast<Eigen::Index>(dh));
          for (std::size_t l = 0; l < S; ++l) q += hl[l] * WQ;
          q /= static_cast<double>(S);
          std::vector<double> score(S);
          for (std::size_t l = 0; l < S; ++l) score[l] = q.dot(hl[l] * WK) * inv_sqrt;
          if (cfg.aggregation == AggregationMode::Signed) {
            for (std::size_t l = 0; l < S; ++l) coeff[l] = std::tanh(score[l]) * step_bias(static_cast<Eigen::Index>(l));
          } else {
            const double mx = *std::max_element(score.begin(), score.end());
            double tot = 0.0;
            for (std::size_t l = 0; l < S; ++l) tot += (coeff[l] = std::exp(score[l] - mx));
            for (double& v : coeff) v /= tot;
          }
        }
        RowVec zh = RowVec::Zero(static_cast<Eigen::Index>(dh));
        for (std::size_t l = 0; l < S; ++l) zh += coeff[l] * hl[l];
        z_signed.segment(seg, static_cast<Eigen::Index>(dh)) = zh;
      }
      RowVec z_soft = RowVec::Zero(D);
      for (std::size_t l = 0; l < S; ++l) z_soft += fusion_soft(static_cast<Eigen::Index>(l)) * states[l][s].row(ni);
      RowVec z = cfg.fusion == FusionMode::Signed    ? z_signed
                 : cfg.fusion == FusionMode::Softmax ? z_soft
                                                     : RowVec(z_signed + z_soft);
      const RowVec e = e_id.row(ni);
      RowVec cat(2 * D);
      cat << z, e;
      const RowVec gate = (cat * gw + gb).unaryExpr([](double v) { return sigm(v); });
      zhat[s].row(ni) = gate.cwiseProduct(z) + (RowVec::Ones(D) - gate).cwiseProduct(e);
    }

  // Head.
  const Mat hw1 = mat(P.at("head.W1")), hw2 = mat(P.at("head.W2"));
  const RowVec hb1 = row(P.at("head.b1")), hb2 = row(P.at("head.b2"));
  out.yhat = Tensor({B, tau, N, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n) {
      RowVec flat(static_cast<Eigen::Index>(T * D));
      for (std::size_t t = 0; t < T; ++t)
        flat.segment(static_cast<Eigen::Index>(t * D), static_cast<Eigen::Index>(D)) =
            zhat[b * T + t].row(static_cast<Eigen::Index>(n));
      const RowVec hid = (flat * hw1 + hb1).cwiseMax(0.0);
      const RowVec y = hid * hw2 + hb2;
      for (std::size_t k = 0; k < tau; ++k)
        for (std::size_t c = 0; c < C; ++c)
          out.yhat[((b * tau + k) * N + n) * C + c] = y(static_cast<Eigen::Index>(k * C + c));
    }

  out.states.resize(S);
  for (std::size_t l = 0; l < S; ++l)
    for (std::size_t s = 0; s < B * T; ++s) out.states[l].push_back(to_tensor(states[l][s]));
  return out;
}

// ---------------------------------------------------------------- kernel / lipschitz

std::vector<std::pair<std::array<double, 2>, std::array<double, 2>>> kernel_pairs(
    std::size_t count, double extent, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<std::pair<std::array<double, 2>, std::array<double, 2>>> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::array<double, 2> x{u(rng), u(rng)};
    std::array<double, 2> y{u(rng), u(rng)};
    out.emplace_back(x, y);
  }
  return out;
}

std::vector<KernelRow> check_kernel(
    double bandwidth, std::span<const std::pair<std::array<double, 2>, std::array<double, 2>>> pairs,
    std::span<const std::size_t> levels, std::uint64_t seed) {
  constexpr double pi = 3.14159265358979323846;
  std::vector<KernelRow> rows;
  for (std::size_t M : levels) {
    const FourierMap fm({M, FourierMode::Gaussian, bandwidth, 1.0, seed});
    double dev = 0.0;
    for (const auto& [x, y] : pairs) {
      const auto gx = fm.map_normalized(x[0], x[1]);
      const auto gy = fm.map_normalized(y[0], y[1]);
      const double dot = std::inner_product(gx.begin(), gx.end(), gy.begin(), 0.0);
      const double d2 = (x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]);
      dev += std::fabs(dot - std::exp(-2.0 * pi * pi * bandwidth * bandwidth * d2));
    }
    rows.push_back({M, pairs.empty() ? 0.0 : dev / static_cast<double>(pairs.size())});
  }
  return rows;
}

double spectral_norm(const Tensor& w, std::size_t iterations, std::uint64_t seed) {
  const Mat W = mat(w, w.dim(0), w.size() / std::max<std::size_t>(w.dim(0), 1));
  if (W.size() == 0) return 0.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd v(W.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = nd(rng);
  v.normalize();
  for (std::size_t it = 0; it < iterations; ++it) {
    const Eigen::VectorXd next = W.transpose() * (W * v);
    const double n = next.norm();
    if (n == 0.0) return 0.0;
    v = next / n;
  }
  return (W * v).norm();
}

std::vector<double> mlp_apply(const MlpLayers& mlp, const std::vector<double>& x) {
  if (mlp.weights.size() != mlp.biases.size() || mlp.weights.empty())
    throw std::invalid_argument("mlp_apply: need matching weights and biases");
  RowVec v = Eigen::Map<const RowVec>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    v = v * mat(mlp.weights[l]) + row(mlp.biases[l]);
    if (l + 1 < mlp.weights.size()) v = v.array().tanh().matrix();
  }
  return {v.data(), v.data() + v.size()};
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

LipschitzReport compare(const std::vector<std::vector<double>>& fx,
                        const std::vector<std::vector<double>>& fy,
                        std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs,
                        double bound, double slack) {
  LipschitzReport r;
  r.bound = bound;
  r.pairs = pairs.size();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double din = distance(pairs[k].first, pairs[k].second);
    if (din == 0.0) continue;
    const double ratio = distance(fx[k], fy[k]) / din;
    r.max_ratio = std::max(r.max_ratio, ratio);
    if (ratio > bound * (1.0 + slack)) ++r.violations;
  }
  return r;
}

}  // namespace

LipschitzReport check_lipschitz(const MlpLayers& mlp,
                                std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs,
                                double slack, std::size_t iterations) {
  double bound = 1.0;
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) bound *= spectral_norm(mlp.weights[l], iterations, l);
  std::vector<std::vector<double>> fx, fy;
  for (const auto& [x, y] : pairs) {
    fx.push_back(mlp_apply(mlp, x));
    fy.push_back(mlp_apply(mlp, y));
  }
  return compare(fx, fy, pairs, bound, slack);
}

LipschitzReport check_identity_lipschitz(
    const ModelParams& params,
    std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs, double slack,
    std::size_t iterations) {
  const double bound = spectral_norm(params.at("id.W1"), iterations, 0) *
                       spectral_norm(params.at("id.W2"), iterations, 1);
  const std::size_t in = params.at("id.W1").dim(0);
  auto run = [&](bool first) {
    Tensor x({pairs.size(), in});
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& v = first ? pairs[k].first : pairs[k].second;
      if (v.size() != in) throw std::invalid_argument("check_identity_lipschitz: input width mismatch");
      std::copy(v.begin(), v.end(), x.data.begin() + static_cast<std::ptrdiff_t>(k * in));
    }
    Tape tape;
    const BoundParams p(tape, params, false);
    const Tensor y = encode_identity(tape.constant(std::move(x)), p).value();
    const std::size_t out = y.dim(1);
    std::vector<std::vector<double>> rows(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k)
      rows[k].assign(y.data.begin() + static_cast<std::ptrdiff_t>(k * out),
                     y.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * out));
    return rows;
  };
  return compare(run(true), run(false), pairs, bound, slack);
}

}  // namespace omniair
