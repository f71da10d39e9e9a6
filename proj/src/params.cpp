#include "omniair/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace omniair {

void ModelParams::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ModelParams::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

Tensor& ModelParams::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + std::string(name));
  return entries_[it->second].second;
}

const Tensor& ModelParams::at(std::string_view name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

std::size_t ModelParams::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape, 0.0));
  return out;
}

std::uint64_t ModelParams::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : entries_) {
    mix(name.data(), name.size());
    for (std::size_t d : t.shape) mix(&d, sizeof d);
    mix(t.data.data(), t.data.size() * sizeof(double));
  }
  return h;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool trainable) : tape_(&tape) {
  for (const auto& [name, t] : params) {
    index_.emplace(name, vars_.size());
    vars_.emplace_back(name, tape.leaf(t, trainable));
  }
}

Tensor xavier_uniform(Shape shape, std::mt19937_64& rng) {
  if (shape.size() < 2) throw std::invalid_argument("xavier_uniform: need at least 2 dimensions");
  const double fan_in = static_cast<double>(shape[shape.size() - 2]);
  const double fan_out = static_cast<double>(shape.back());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = dist(rng);
  return t;
}

Var BoundParams::operator[](std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + std::string(name));
  return vars_[it->second].second;
}

ModelParams BoundParams::grads() const {
  ModelParams out;
  for (const auto& [name, v] : vars_) out.add(name, tape_->grad(v));
  return out;
}

// ---------------------------------------------------------------- Adam

Adam::Adam(const ModelParams& params, AdamConfig config)
    : config_(config), m_(params.zeros_like()), v_(params.zeros_like()) {}

bool Adam::step(ModelParams& params, const ModelParams& grads) {
  for (const auto& [name, g] : grads)
    for (double x : g.data)
      if (!std::isfinite(x)) {
        std::cerr << "[omniair] warning: non-finite gradient in '" << name
                  << "', optimizer step skipped\n";
        return false;
      }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    if (g.shape != p.shape) throw std::invalid_argument("adam: gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= config_.lr * config_.weight_decay * p[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
  return true;
}

// ---------------------------------------------------------------- grad check

std::pair<double, ModelParams> value_and_grad(const LossProgram& loss, const ModelParams& params) {
  Tape tape;
  BoundParams bound(tape, params);
  Var l = loss(tape, bound);
  tape.backward(l);
  return {l.value()[0], bound.grads()};
}

namespace {

double evaluate(const LossProgram& loss, const ModelParams& params) {
  Tape tape;
  BoundParams bound(tape, params);
  const double v = loss(tape, bound).value()[0];
  if (!std::isfinite(v)) throw std::runtime_error("grad_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossProgram& loss, const ModelParams& params,
                           const GradCheckOptions& options) {
  auto [value, analytic] = value_and_grad(loss, params);
  if (!std::isfinite(value)) throw std::runtime_error("grad_check: loss is not finite");

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  ModelParams probe = params;
  for (auto& [name, tensor] : probe) {
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), name) == options.only.end())
      continue;
    std::vector<std::size_t> coords(tensor.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    const Tensor& g = analytic.at(name);
    for (std::size_t i : coords) {
      const double orig = tensor[i];
      tensor[i] = orig + options.eps;
      const double up = evaluate(loss, probe);
      tensor[i] = orig - options.eps;
      const double down = evaluate(loss, probe);
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double err = std::fabs(g[i] - numeric) / std::max(1.0, std::fabs(numeric));
      ++report.checked;
      if (err > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        if (err >= report.max_rel_error) {
          report.worst_param = name;
          report.worst_index = i;
          report.worst_analytic = g[i];
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace omniair
