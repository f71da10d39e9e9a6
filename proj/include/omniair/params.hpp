#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "omniair/tensor.hpp"

namespace omniair {

/// Ordered collection of named trainable tensors. Insertion order is the
/// serialization order.
class ModelParams {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::size_t count() const { return entries_.size(); }
  std::size_t total_size() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Same names and shapes, all zeros.
  ModelParams zeros_like() const;

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Glorot-uniform matrix of the given shape; the last two extents are
/// treated as (fan_in, fan_out).
Tensor xavier_uniform(Shape shape, std::mt19937_64& rng);

/// Parameters placed on a tape as gradient-tracked leaves.
class BoundParams {
 public:
  /// With `trainable` false the parameters enter as constants (inference).
  BoundParams(Tape& tape, const ModelParams& params, bool trainable = true);

  Var operator[](std::string_view name) const;
  Tape& tape() const { return *tape_; }

  /// Gradients of every parameter after Tape::backward.
  ModelParams grads() const;

 private:
  Tape* tape_;
  std::vector<std::pair<std::string, Var>> vars_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Bias-corrected Adam with decoupled weight decay (theta <- theta - lr*wd*theta
/// before the moment update).
class Adam {
 public:
  Adam(const ModelParams& params, AdamConfig config);

  /// Returns false, leaving params and state untouched, when any gradient is
  /// non-finite.
  bool step(ModelParams& params, const ModelParams& grads);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const ModelParams& first_moment() const { return m_; }
  const ModelParams& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  ModelParams m_, v_;
  std::size_t steps_ = 0;
};

/// Builds a scalar loss on the tape from bound parameters.
using LossProgram = std::function<Var(Tape&, const BoundParams&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Restrict to these parameter names (empty = all).
  std::vector<std::string> only;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Central-difference check of reverse-mode gradients. Relative error is
/// |analytic - numeric| / max(1, |numeric|). Throws std::runtime_error if
/// the loss is non-finite at any evaluated point.
GradCheckReport grad_check(const LossProgram& loss, const ModelParams& params,
                           const GradCheckOptions& options = {});

/// Loss value and gradients in one forward/backward pass.
std::pair<double, ModelParams> value_and_grad(const LossProgram& loss, const ModelParams& params);

}  // namespace omniair
