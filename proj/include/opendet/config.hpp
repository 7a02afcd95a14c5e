/*
 * Copyright 2026 The opendet-lab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Flat key=value experiment configuration.
//
//   # comment
//   preset = full
//   upl.alpha = 1.0
//   ic.denominator = supcon
//
// Without a `preset` line every key of the schema must be present. With one,
// the preset supplies the values that are not given. Unknown keys are errors.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "opendet/io.hpp"
#include "opendet/trainer.hpp"

namespace opendet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  SyntheticWorldConfig world;
  TrainerConfig trainer;

  // One seed drives both the world layout and training.
  void set_seed(std::uint64_t seed) {
    world.seed = seed;
    trainer.seed = seed;
  }

  void validate() const {
    world.validate();
    trainer.validate();
    if (trainer.dims.feature_dim != world.feature_dim) {
      throw ConfigError("model.feature_dim does not match world.feature_dim");
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc{} || r.ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

struct Binding {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Binding num(const std::string& key, std::function<T&(ExperimentConfig&)> access) {
  return {[access](const ExperimentConfig& c) {
            const T v = access(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(v);
            } else {
              return std::to_string(v);
            }
          },
          [access, key](ExperimentConfig& c, const std::string& text) { access(c) = parse_number<T>(key, text); }};
}

template <typename E>
Binding enumeration(const std::string& key, std::function<E&(ExperimentConfig&)> access,
                    std::function<E(std::string_view)> parse) {
  return {[access](const ExperimentConfig& c) { return std::string(to_string(access(const_cast<ExperimentConfig&>(c)))); },
          [access, parse, key](ExperimentConfig& c, const std::string& text) {
            try {
              access(c) = parse(text);
            } catch (const std::invalid_argument& e) {
              throw ConfigError("config key '" + key + "': " + e.what());
            }
          }};
}

inline Binding boolean(const std::string& key, std::function<bool&(ExperimentConfig&)> access) {
  return {[access](const ExperimentConfig& c) {
            return std::string(access(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [access, key](ExperimentConfig& c, const std::string& text) { access(c) = parse_bool(key, text); }};
}

#define OPENDET_FIELD(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

inline const std::map<std::string, Binding>& schema() {
  static const std::map<std::string, Binding> s = [] {
    std::map<std::string, Binding> m;
    auto add = [&m](const std::string& key, Binding b) { m.emplace(key, std::move(b)); };
    add("seed", {[](const ExperimentConfig& c) { return std::to_string(c.trainer.seed); },
                 [](ExperimentConfig& c, const std::string& t) { c.set_seed(parse_number<std::uint64_t>("seed", t)); }});

    add("world.num_known", num<int>("world.num_known", OPENDET_FIELD(world.num_known)));
    add("world.num_unknown", num<int>("world.num_unknown", OPENDET_FIELD(world.num_unknown)));
    add("world.feature_dim", {[](const ExperimentConfig& c) { return std::to_string(c.world.feature_dim); },
                              [](ExperimentConfig& c, const std::string& t) {
                                c.world.feature_dim = parse_number<std::size_t>("world.feature_dim", t);
                                c.trainer.dims.feature_dim = c.world.feature_dim;
                              }});
    add("world.cluster_radius", num<double>("world.cluster_radius", OPENDET_FIELD(world.cluster_radius)));
    add("world.cluster_stddev", num<double>("world.cluster_stddev", OPENDET_FIELD(world.cluster_stddev)));
    add("world.object_offset", num<double>("world.object_offset", OPENDET_FIELD(world.object_offset)));
    add("world.unknown_mix", num<int>("world.unknown_mix", OPENDET_FIELD(world.unknown_mix)));
    add("world.unknown_offset", num<double>("world.unknown_offset", OPENDET_FIELD(world.unknown_offset)));
    add("world.fg_iou_low", num<double>("world.fg_iou_low", OPENDET_FIELD(world.fg_iou_low)));
    add("world.fg_iou_high", num<double>("world.fg_iou_high", OPENDET_FIELD(world.fg_iou_high)));
    add("world.bg_iou_high", num<double>("world.bg_iou_high", OPENDET_FIELD(world.bg_iou_high)));
    add("world.bg_fraction", num<double>("world.bg_fraction", OPENDET_FIELD(world.bg_fraction)));
    add("world.bg_stddev", num<double>("world.bg_stddev", OPENDET_FIELD(world.bg_stddev)));

    add("train.iterations", num<int>("train.iterations", OPENDET_FIELD(trainer.total_iterations)));
    add("train.warmup", num<int>("train.warmup", OPENDET_FIELD(trainer.warmup_iterations)));
    add("train.learning_rate", num<double>("train.learning_rate", OPENDET_FIELD(trainer.learning_rate)));
    add("train.batch_size", num<std::size_t>("train.batch_size", OPENDET_FIELD(trainer.batch_size)));
    add("train.eval_per_known", num<std::size_t>("train.eval_per_known", OPENDET_FIELD(trainer.eval_per_known)));
    add("train.eval_per_unknown", num<std::size_t>("train.eval_per_unknown", OPENDET_FIELD(trainer.eval_per_unknown)));

    add("model.trunk_dim", num<std::size_t>("model.trunk_dim", OPENDET_FIELD(trainer.dims.trunk_dim)));
    add("model.head_hidden", num<std::size_t>("model.head_hidden", OPENDET_FIELD(trainer.dims.head_hidden)));
    add("model.embed_dim", num<std::size_t>("model.embed_dim", OPENDET_FIELD(trainer.dims.embed_dim)));
    add("model.scale", num<double>("model.scale", OPENDET_FIELD(trainer.dims.scale)));

    add("upl.alpha", num<double>("upl.alpha", OPENDET_FIELD(trainer.upl.alpha)));
    add("upl.beta", num<double>("upl.beta", OPENDET_FIELD(trainer.upl.beta)));
    add("upl.variant", enumeration<WeightingVariant>("upl.variant", OPENDET_FIELD(trainer.upl.variant),
                                                     parse_weighting_variant));
    add("upl.detach_weight", boolean("upl.detach_weight", OPENDET_FIELD(trainer.upl.detach_weight)));

    add("ic.tau", num<double>("ic.tau", OPENDET_FIELD(trainer.ic.tau)));
    add("ic.gamma0", num<double>("ic.gamma0", OPENDET_FIELD(trainer.ic.gamma0)));
    add("ic.denominator", enumeration<DenominatorMode>("ic.denominator", OPENDET_FIELD(trainer.ic.denominator),
                                                       parse_denominator_mode));

    add("bank.capacity", num<std::size_t>("bank.capacity", OPENDET_FIELD(trainer.bank.capacity)));
    add("bank.sample_count", num<std::size_t>("bank.sample_count", OPENDET_FIELD(trainer.bank.sample_count)));
    add("bank.memory_iou", num<double>("bank.memory_iou", OPENDET_FIELD(trainer.bank.memory_iou)));
    add("bank.batch_iou", num<double>("bank.batch_iou", OPENDET_FIELD(trainer.bank.batch_iou)));

    add("mining.k", num<std::size_t>("mining.k", OPENDET_FIELD(trainer.mining.k)));
    add("mining.method", enumeration<MiningMethod>("mining.method", OPENDET_FIELD(trainer.mining.method),
                                                   parse_mining_method));
    add("mining.mode", enumeration<MiningMode>("mining.mode", OPENDET_FIELD(trainer.mining.mode), parse_mining_mode));
    return m;
  }();
  return s;
}

#undef OPENDET_FIELD

}  // namespace detail

// Toy world used by the shipped presets: five known clusters around a common
// center away from the background mass, three unknown clusters near that center.
inline ExperimentConfig baseline_preset() {
  ExperimentConfig c;
  c.world.num_known = 5;
  c.world.num_unknown = 3;
  c.world.feature_dim = 16;
  c.world.cluster_radius = 2.5;
  c.world.cluster_stddev = 0.5;
  c.world.object_offset = 3.0;
  c.world.unknown_mix = 5;
  c.world.unknown_offset = 0.5;
  c.world.bg_stddev = 0.5;
  c.trainer.dims.feature_dim = c.world.feature_dim;
  c.trainer.dims.embed_dim = 16;
  c.trainer.upl.beta = 0.0;
  c.trainer.ic.gamma0 = 0.0;
  c.set_seed(1);
  return c;
}

inline ExperimentConfig full_preset() {
  ExperimentConfig c = baseline_preset();
  c.trainer.upl.beta = 0.5;
  c.trainer.ic.gamma0 = 0.1;
  return c;
}

inline ExperimentConfig upl_preset() {
  ExperimentConfig c = full_preset();
  c.trainer.ic.gamma0 = 0.0;
  return c;
}

inline ExperimentConfig cfl_preset() {
  ExperimentConfig c = full_preset();
  c.trainer.upl.beta = 0.0;
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"baseline", "cfl", "full", "upl"};
  return names;
}

inline ExperimentConfig preset(std::string_view name) {
  if (name == "baseline") return baseline_preset();
  if (name == "full") return full_preset();
  if (name == "upl") return upl_preset();
  if (name == "cfl") return cfl_preset();
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::schema()) keys.push_back(k);
  return keys;
}

// Parses key=value lines. Errors carry the line number or the key name.
inline ExperimentConfig parse_config(std::istream& is) {
  std::map<std::string, std::string> values;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!values.emplace(key, value).second) throw ConfigError("config key '" + key + "' given twice");
  }

  ExperimentConfig c;
  const auto& sch = detail::schema();
  if (const auto it = values.find("preset"); it != values.end()) {
    c = preset(it->second);
    values.erase(it);
  } else {
    for (const auto& [key, _] : sch) {
      if (!values.contains(key)) throw ConfigError("missing required config key '" + key + "'");
    }
  }
  for (const auto& [key, value] : values) {
    const auto it = sch.find(key);
    if (it == sch.end()) throw ConfigError("unknown config key '" + key + "'");
  }
  // The seed is applied first so that explicit settings are not overwritten.
  if (const auto it = values.find("seed"); it != values.end()) sch.at("seed").set(c, it->second);
  for (const auto& [key, value] : values) {
    if (key != "seed") sch.at(key).set(c, value);
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  std::istringstream is{std::string(text)};
  return parse_config(is);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(is);
}

// Fully resolved configuration, one sorted key=value line per schema key.
inline std::string serialize_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [key, b] : detail::schema()) out += key + "=" + b.get(c) + "\n";
  return out;
}

}  // namespace opendet
