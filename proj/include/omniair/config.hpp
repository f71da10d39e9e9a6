#pragma once

// Run configuration. Every field is optional in the JSON form; missing keys
// keep the defaults below.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "omniair/data.hpp"

namespace omniair {

enum class FusionMode { Signed, Softmax, Sum };
/// Positive is the convex-combination control: softmax over step scores.
enum class AggregationMode { Signed, Positive };
enum class RankMode { Absolute, Signed };
/// Absolute divides by sum |w*m| + eps; Plain uses sum w*m + eps.
enum class NormMode { Absolute, Plain };
enum class EdgeFeatures { Last, Mean };

struct RunConfig {
  std::size_t fourier_levels = 8;  // fourier dim = 4 * levels
  double fourier_base = 1.0;
  std::size_t id_dim = 64;
  std::size_t id_hidden = 64;
  std::size_t grade_embed = 16;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t diffusion_steps = 2;
  std::size_t edge_hidden = 32;
  std::size_t beta_hidden = 16;
  std::size_t head_hidden = 128;

  std::size_t k_geo = 10;
  std::size_t k_sem = 5;
  double k_max = 15.0;
  double eta = 10.0;
  double kappa_km = 100.0;
  double lambda = 0.2;
  double norm_eps = 1e-8;

  std::size_t input_steps = 30;
  std::size_t horizon = 14;
  std::size_t batch = 32;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::size_t max_epochs = 300;
  std::size_t patience = 20;
  std::uint64_t seed = 42;

  FusionMode fusion = FusionMode::Signed;
  AggregationMode aggregation = AggregationMode::Signed;
  RankMode rank = RankMode::Absolute;
  NormMode norm = NormMode::Absolute;
  EdgeFeatures edge_features = EdgeFeatures::Last;
  NormScope norm_scope = NormScope::Global;
  std::size_t refresh_semantic_every = 0;
  std::array<double, 3> split = {0.6, 0.2, 0.2};
  int workers = 0;  // 0 = OMNIAIR_WORKERS or the OpenMP default

  std::size_t fourier_dim() const { return 4 * fourier_levels; }
  /// Identity-MLP input width: fourier + context(10) + geo(6) + grade embedding.
  std::size_t id_input() const { return fourier_dim() + 10 + kGeoFeatures + grade_embed; }

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Unknown keys are rejected so typos do not silently fall back to defaults.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& c);

/// Stable hash of the canonical JSON form.
std::string config_hash(const RunConfig& c);

}  // namespace omniair
