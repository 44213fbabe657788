#pragma once

// Run configuration: one flat map of dotted keys. Values resolve as built-in
// defaults, then a dataset preset, then a JSON config file, then explicit
// overrides.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gghm/feature_store.hpp"
#include "gghm/train.hpp"

namespace gghm {

using json = nlohmann::json;

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  features::SyntheticSpec synth;
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t frames = 8;
  std::size_t eval_episodes = 500;
  std::size_t eval_queries = 1;
  std::uint64_t seed = 1;
  std::string preset = "none";

  RunConfig() {
    train.learning_rate = 1e-3;
    train.iterations_per_step = 200;
    train.total_steps = 5;
  }

  episode::EpisodeConfig train_episodes() const {
    return {n_way, k_shot, n_way * train.queries_per_class, frames, seed};
  }
  episode::EpisodeConfig eval_episode_config() const { return {n_way, k_shot, eval_queries, frames, seed}; }

  /// Copies the feature geometry of a dataset into the model dims.
  void bind_dims(const features::FeatureDims& d) {
    model.ldtm.channels = model.ggpc.channels = d.c;
    model.ldtm.height = d.h;
    model.ldtm.width = d.w;
    model.ldtm.frames = frames;
  }

  void validate() const {
    model.validate();
    train.validate();
    train_episodes().validate();
    eval_episode_config().validate();
    if (eval_episodes == 0) throw ConfigError("eval.episodes must be positive");
  }
};

namespace config_detail {

template <class V>
V as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<V> && v.get<long long>() < 0)) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("");
    }
    return v.get<V>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': unexpected value " + v.dump());
  }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;
using Getter = std::function<json(const RunConfig&)>;

template <class V, class Access>
std::pair<Setter, Getter> field(Access access) {
  return {[access](RunConfig& c, const json& v, const std::string& k) { access(c) = as<V>(v, k); },
          [access](const RunConfig& c) {
            RunConfig copy = c;
            return json(access(copy));
          }};
}

inline std::string distance_name(hpm::BaseDistance d) {
  return d == hpm::BaseDistance::euclidean ? "euclidean" : "one_minus_cosine";
}

inline std::string mode_name(hpm::MatchingMode m) {
  switch (m) {
    case hpm::MatchingMode::frame: return "frame";
    case hpm::MatchingMode::tuple: return "tuple";
    case hpm::MatchingMode::hybrid: break;
  }
  return "hybrid";
}

#define GGHM_FIELD(type, expr) field<type>([](RunConfig& c) -> auto& { return expr; })

inline const std::map<std::string, std::pair<Setter, Getter>>& registry() {
  static const std::map<std::string, std::pair<Setter, Getter>> table = [] {
    std::map<std::string, std::pair<Setter, Getter>> t;
    t["seed"] = GGHM_FIELD(std::uint64_t, c.seed);
    t["ldtm.gap"] = GGHM_FIELD(std::size_t, c.model.ldtm.gap);
    t["ldtm.gamma"] = GGHM_FIELD(double, c.model.ldtm.gamma);
    t["ldtm.beta"] = GGHM_FIELD(double, c.model.ldtm.beta);
    t["ldtm.kernel_size"] = GGHM_FIELD(std::size_t, c.model.ldtm.kernel_size);
    t["ggpc.layers"] = GGHM_FIELD(std::size_t, c.model.ggpc.layers);
    t["ggpc.transductive"] = GGHM_FIELD(bool, c.model.ggpc.transductive);
    t["ggpc.enabled"] = GGHM_FIELD(bool, c.model.ggpc.enabled);
    t["ggpc.node_self"] = GGHM_FIELD(bool, c.model.ggpc.node_self);
    t["hpm.alpha"] = GGHM_FIELD(double, c.model.hpm.alpha);
    t["hpm.temperature"] = GGHM_FIELD(double, c.model.hpm.temperature);
    t["hpm.distance"] = {[](RunConfig& c, const json& v, const std::string& k) {
                           const auto s = as<std::string>(v, k);
                           if (s == "euclidean") c.model.hpm.distance = hpm::BaseDistance::euclidean;
                           else if (s == "one_minus_cosine") c.model.hpm.distance = hpm::BaseDistance::one_minus_cosine;
                           else throw ConfigError("hpm.distance must be euclidean or one_minus_cosine, got '" + s + "'");
                         },
                         [](const RunConfig& c) { return json(distance_name(c.model.hpm.distance)); }};
    t["hpm.mode"] = {[](RunConfig& c, const json& v, const std::string& k) {
                       const auto s = as<std::string>(v, k);
                       if (s == "hybrid") c.model.hpm.mode = hpm::MatchingMode::hybrid;
                       else if (s == "frame") c.model.hpm.mode = hpm::MatchingMode::frame;
                       else if (s == "tuple") c.model.hpm.mode = hpm::MatchingMode::tuple;
                       else throw ConfigError("hpm.mode must be hybrid, frame or tuple, got '" + s + "'");
                     },
                     [](const RunConfig& c) { return json(mode_name(c.model.hpm.mode)); }};
    t["episode.n_way"] = GGHM_FIELD(std::size_t, c.n_way);
    t["episode.k_shot"] = GGHM_FIELD(std::size_t, c.k_shot);
    t["episode.frames"] = GGHM_FIELD(std::size_t, c.frames);
    t["train.lr"] = GGHM_FIELD(double, c.train.learning_rate);
    t["train.iterations_per_step"] = GGHM_FIELD(std::size_t, c.train.iterations_per_step);
    t["train.total_steps"] = GGHM_FIELD(std::size_t, c.train.total_steps);
    t["train.steps"] = GGHM_FIELD(std::vector<std::size_t>, c.train.step_boundaries);
    t["train.lr_factors"] = GGHM_FIELD(std::vector<double>, c.train.lr_factors);
    t["train.lambda"] = GGHM_FIELD(double, c.model.graph_loss_weight);
    t["train.queries_per_class"] = GGHM_FIELD(std::size_t, c.train.queries_per_class);
    t["eval.episodes"] = GGHM_FIELD(std::size_t, c.eval_episodes);
    t["eval.queries"] = GGHM_FIELD(std::size_t, c.eval_queries);
    t["synth.classes"] = GGHM_FIELD(std::uint32_t, c.synth.n_classes);
    t["synth.per_class"] = GGHM_FIELD(std::uint32_t, c.synth.videos_per_class);
    t["synth.t"] = GGHM_FIELD(std::uint32_t, c.synth.dims.t_raw);
    t["synth.c"] = GGHM_FIELD(std::uint32_t, c.synth.dims.c);
    t["synth.h"] = GGHM_FIELD(std::uint32_t, c.synth.dims.h);
    t["synth.w"] = GGHM_FIELD(std::uint32_t, c.synth.dims.w);
    t["synth.sigma"] = GGHM_FIELD(double, c.synth.noise_sigma);
    t["synth.order_frac"] = GGHM_FIELD(double, c.synth.order_pair_fraction);
    t["synth.distractor_scale"] = GGHM_FIELD(double, c.synth.distractor_scale);
    return t;
  }();
  return table;
}

#undef GGHM_FIELD

}  // namespace config_detail

/// alpha/beta/gamma and schedule of the four dataset presets.
inline json preset_values(const std::string& name) {
  if (name == "none") return json::object();
  if (name == "kinetics") {
    return {{"ldtm.gamma", 0.1}, {"ldtm.beta", 0.9}, {"hpm.alpha", 0.4}, {"train.lr", 2.2e-5},
            {"train.iterations_per_step", 1000}, {"train.steps", {0, 6, 9}}, {"train.lr_factors", {1.0, 0.5, 0.1}},
            {"train.total_steps", 10}};
  }
  if (name == "ssv2") {
    return {{"ldtm.gamma", 0.5}, {"ldtm.beta", 0.5}, {"hpm.alpha", 0.6}, {"train.lr", 1e-4},
            {"train.iterations_per_step", 7500}, {"train.steps", {0, 6, 8, 9}},
            {"train.lr_factors", {1.0, 0.5, 0.1, 0.01}}, {"train.total_steps", 10}};
  }
  if (name == "hmdb51") {
    return {{"ldtm.gamma", 0.1}, {"ldtm.beta", 0.9}, {"hpm.alpha", 0.5}, {"train.lr", 1e-4},
            {"train.iterations_per_step", 1000}, {"train.steps", {0, 2, 3, 5}},
            {"train.lr_factors", {1.0, 0.5, 0.1, 0.01}}, {"train.total_steps", 10}};
  }
  if (name == "ucf101") {
    return {{"ldtm.gamma", 0.1}, {"ldtm.beta", 0.9}, {"hpm.alpha", 0.5}, {"train.lr", 5e-5},
            {"train.iterations_per_step", 1500}, {"train.steps", {0, 2, 3, 5}},
            {"train.lr_factors", {1.0, 0.5, 0.1, 0.01}}, {"train.total_steps", 10}};
  }
  throw ConfigError("unknown preset '" + name + "' (kinetics, ssv2, ucf101, hmdb51)");
}

inline void apply(RunConfig& cfg, const std::string& key, const json& value) {
  const auto& table = config_detail::registry();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.first(cfg, value, key);
}

inline void apply_all(RunConfig& cfg, const json& values, const std::string& origin) {
  if (!values.is_object()) throw ConfigError(origin + ": expected a JSON object of dotted keys");
  for (const auto& [key, value] : values.items()) {
    if (key == "preset") continue;
    apply(cfg, key, value);
  }
}

/// Effective configuration as flat dotted keys.
inline json to_json(const RunConfig& cfg) {
  json out = json::object();
  out["preset"] = cfg.preset;
  for (const auto& [key, access] : config_detail::registry()) out[key] = access.second(cfg);
  return out;
}

inline json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}

/// Parses an override value: JSON when it parses, a bare string otherwise.
inline json parse_override(const std::string& text) {
  auto v = json::parse(text, nullptr, false);
  return v.is_discarded() ? json(text) : v;
}

struct ConfigSources {
  std::string preset;          // empty: use the file's preset, if any
  std::string config_file;     // empty: none
  std::vector<std::pair<std::string, std::string>> overrides;  // key, raw value
};

/// Defaults, then preset, then file, then overrides. Without an explicit seed
/// the GGHM_SEED environment variable supplies one.
inline RunConfig resolve_config(const ConfigSources& src) {
  RunConfig cfg;
  json file = json::object();
  if (!src.config_file.empty()) file = read_config_file(src.config_file);
  if (!file.is_object()) throw ConfigError(src.config_file + ": expected a JSON object of dotted keys");
  std::string preset = src.preset;
  if (preset.empty() && file.contains("preset")) preset = config_detail::as<std::string>(file["preset"], "preset");
  if (preset.empty()) preset = "none";
  cfg.preset = preset;
  apply_all(cfg, preset_values(preset), "preset " + preset);

  bool seeded = file.contains("seed");
  for (const auto& [key, _] : src.overrides) seeded = seeded || key == "seed";
  if (!seeded) {
    if (const char* env = std::getenv("GGHM_SEED")) {
      try {
        std::size_t used = 0;
        cfg.seed = std::stoull(env, &used);
        if (used != std::string(env).size()) throw ConfigError("");
      } catch (const std::exception&) {
        throw ConfigError(std::string("GGHM_SEED is not an unsigned integer: '") + env + "'");
      }
    }
  }
  apply_all(cfg, file, src.config_file);
  for (const auto& [key, raw] : src.overrides) apply(cfg, key, parse_override(raw));
  cfg.validate();
  return cfg;
}

}  // namespace gghm
