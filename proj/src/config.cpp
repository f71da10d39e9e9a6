#include "omniair/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "omniair/checkpoint.hpp"

namespace omniair {

NLOHMANN_JSON_SERIALIZE_ENUM(FusionMode, {{FusionMode::Signed, "signed"},
                                          {FusionMode::Softmax, "softmax"},
                                          {FusionMode::Sum, "sum"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AggregationMode, {{AggregationMode::Signed, "signed"},
                                               {AggregationMode::Positive, "positive"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RankMode, {{RankMode::Absolute, "absolute"},
                                        {RankMode::Signed, "signed"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NormMode, {{NormMode::Absolute, "absolute"},
                                        {NormMode::Plain, "plain"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EdgeFeatures, {{EdgeFeatures::Last, "last"},
                                            {EdgeFeatures::Mean, "mean"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NormScope, {{NormScope::Global, "global"},
                                         {NormScope::PerStation, "per_station"}})

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("config: " + message);
}

// nlohmann maps unknown enum strings to the first value; reject them instead.
template <typename E>
E parse_enum(const nlohmann::json& j, const char* key) {
  const E e = j.get<E>();
  if (nlohmann::json(e) != j)
    throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + j.dump());
  return e;
}

}  // namespace

void RunConfig::validate() const {
  require(fourier_levels > 0, "fourier_levels must be positive");
  require(fourier_base > 0, "fourier_base must be positive");
  require(d_model > 0 && heads > 0, "d_model and heads must be positive");
  require(d_model % heads == 0, "d_model must be divisible by heads");
  require(id_dim == d_model, "id_dim must equal d_model (gate concatenation)");
  require(id_hidden > 0 && grade_embed > 0 && edge_hidden > 0 && beta_hidden > 0 &&
              head_hidden > 0,
          "hidden sizes must be positive");
  require(k_geo > 0, "k_geo must be positive");
  require(k_max > 0 && eta > 0 && kappa_km > 0, "k_max, eta and kappa_km must be positive");
  require(lambda >= 0 && lambda < 1, "lambda must lie in [0, 1)");
  require(norm_eps > 0, "norm_eps must be positive");
  require(input_steps > 0 && horizon > 0 && batch > 0, "T, tau and batch must be positive");
  require(lr > 0 && weight_decay >= 0, "lr must be positive, weight_decay non-negative");
  require(max_epochs > 0, "max_epochs must be positive");
  require(workers >= 0, "workers must be non-negative");
  double total = 0.0;
  for (double r : split) {
    require(r >= 0, "split ratios must be non-negative");
    total += r;
  }
  require(std::abs(total - 1.0) < 1e-9, "split ratios must sum to 1");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"fourier_levels", c.fourier_levels},
          {"fourier_base", c.fourier_base},
          {"id_dim", c.id_dim},
          {"id_hidden", c.id_hidden},
          {"grade_embed", c.grade_embed},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"diffusion_steps", c.diffusion_steps},
          {"edge_hidden", c.edge_hidden},
          {"beta_hidden", c.beta_hidden},
          {"head_hidden", c.head_hidden},
          {"k_geo", c.k_geo},
          {"k_sem", c.k_sem},
          {"k_max", c.k_max},
          {"eta", c.eta},
          {"kappa_km", c.kappa_km},
          {"lambda", c.lambda},
          {"norm_eps", c.norm_eps},
          {"input_steps", c.input_steps},
          {"horizon", c.horizon},
          {"batch", c.batch},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"fusion_mode", c.fusion},
          {"aggregation", c.aggregation},
          {"rank_mode", c.rank},
          {"norm_mode", c.norm},
          {"edge_features", c.edge_features},
          {"normalization", c.norm_scope},
          {"refresh_semantic_every", c.refresh_semantic_every},
          {"split", c.split},
          {"workers", c.workers}};
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  RunConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("fourier_levels", c.fourier_levels);
    get("fourier_base", c.fourier_base);
    get("id_dim", c.id_dim);
    get("id_hidden", c.id_hidden);
    get("grade_embed", c.grade_embed);
    get("d_model", c.d_model);
    get("heads", c.heads);
    get("diffusion_steps", c.diffusion_steps);
    get("edge_hidden", c.edge_hidden);
    get("beta_hidden", c.beta_hidden);
    get("head_hidden", c.head_hidden);
    get("k_geo", c.k_geo);
    get("k_sem", c.k_sem);
    get("k_max", c.k_max);
    get("eta", c.eta);
    get("kappa_km", c.kappa_km);
    get("lambda", c.lambda);
    get("norm_eps", c.norm_eps);
    get("input_steps", c.input_steps);
    get("horizon", c.horizon);
    get("batch", c.batch);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("max_epochs", c.max_epochs);
    get("patience", c.patience);
    get("seed", c.seed);
    get("refresh_semantic_every", c.refresh_semantic_every);
    get("split", c.split);
    get("workers", c.workers);
    if (j.contains("fusion_mode")) c.fusion = parse_enum<FusionMode>(j["fusion_mode"], "fusion_mode");
    if (j.contains("aggregation"))
      c.aggregation = parse_enum<AggregationMode>(j["aggregation"], "aggregation");
    if (j.contains("rank_mode")) c.rank = parse_enum<RankMode>(j["rank_mode"], "rank_mode");
    if (j.contains("norm_mode")) c.norm = parse_enum<NormMode>(j["norm_mode"], "norm_mode");
    if (j.contains("edge_features"))
      c.edge_features = parse_enum<EdgeFeatures>(j["edge_features"], "edge_features");
    if (j.contains("normalization"))
      c.norm_scope = parse_enum<NormScope>(j["normalization"], "normalization");
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

std::string config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("workers");
  return hex64(fnv1a(j.dump()));
}

}  // namespace omniair
