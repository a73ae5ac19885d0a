#pragma once

// Line-oriented `key = value` run configuration covering training, network
// and augmentation fields. Blank lines and '#' comments are ignored;
// unknown or repeated keys are errors.

#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eyenet/datapipe.hpp"
#include "eyenet/errors.hpp"
#include "eyenet/harness.hpp"
#include "eyenet/network.hpp"

namespace eyenet {

struct RunConfig {
  TrainConfig train;
  NetworkSpec network;
  AugmentConfig augment;
  std::size_t input_width = 640;
  std::size_t input_height = 384;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::array<std::size_t, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<std::size_t, 3> out{};
  std::stringstream ss(v);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) throw ConfigError("config key '" + key + "': expected 3 comma-separated values");
    out[i++] = parse_number<std::size_t>(key, trim(item));
  }
  if (i != 3) throw ConfigError("config key '" + key + "': expected 3 comma-separated values");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = [] {
    std::map<std::string, Setter> m;
    auto size = [&m](const char* k, auto get) {
      m[k] = [get](RunConfig& c, const std::string& key, const std::string& v) { get(c) = parse_number<std::size_t>(key, v); };
    };
    auto real = [&m](const char* k, auto get) {
      m[k] = [get](RunConfig& c, const std::string& key, const std::string& v) { get(c) = parse_number<double>(key, v); };
    };
    auto u64 = [&m](const char* k, auto get) {
      m[k] = [get](RunConfig& c, const std::string& key, const std::string& v) {
        get(c) = parse_number<std::uint64_t>(key, v);
      };
    };
    auto triple = [&m](const char* k, auto get) {
      m[k] = [get](RunConfig& c, const std::string& key, const std::string& v) { get(c) = parse_triple(key, v); };
    };

    real("lr0", [](RunConfig& c) -> double& { return c.train.lr0; });
    size("plateau_epochs", [](RunConfig& c) -> std::size_t& { return c.train.plateau_epochs; });
    real("lr_decay", [](RunConfig& c) -> double& { return c.train.lr_decay; });
    size("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    size("max_epochs", [](RunConfig& c) -> std::size_t& { return c.train.max_epochs; });
    size("early_stop_patience", [](RunConfig& c) -> std::size_t& { return c.train.early_stop_patience; });
    u64("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    real("adam_beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    real("adam_beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    real("adam_eps", [](RunConfig& c) -> double& { return c.train.adam.eps; });
    real("dice_epsilon", [](RunConfig& c) -> double& { return c.train.dice_epsilon; });
    m["deep_supervision"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.train.deep_supervision = parse_bool(key, v);
    };

    size("stem_channels", [](RunConfig& c) -> std::size_t& { return c.network.stem_channels; });
    triple("enc_channels", [](RunConfig& c) -> std::array<std::size_t, 3>& { return c.network.enc_channels; });
    triple("dec_channels", [](RunConfig& c) -> std::array<std::size_t, 3>& { return c.network.dec_channels; });
    triple("enc_dilations", [](RunConfig& c) -> std::array<std::size_t, 3>& { return c.network.enc_dilations; });
    triple("dec_dilations", [](RunConfig& c) -> std::array<std::size_t, 3>& { return c.network.dec_dilations; });
    size("cbam_ratio", [](RunConfig& c) -> std::size_t& { return c.network.cbam_ratio; });
    size("cbam_kernel", [](RunConfig& c) -> std::size_t& { return c.network.cbam_kernel; });
    real("slope", [](RunConfig& c) -> double& { return c.network.slope; });
    size("max_parameters", [](RunConfig& c) -> std::size_t& { return c.network.max_parameters; });
    size("input_width", [](RunConfig& c) -> std::size_t& { return c.input_width; });
    size("input_height", [](RunConfig& c) -> std::size_t& { return c.input_height; });

    real("zoom_factor", [](RunConfig& c) -> double& { return c.augment.zoom_factor; });
    real("noise_mean", [](RunConfig& c) -> double& { return c.augment.noise_mean; });
    real("noise_variance", [](RunConfig& c) -> double& { return c.augment.noise_variance; });
    real("rotation_min_deg", [](RunConfig& c) -> double& { return c.augment.rotation_min_deg; });
    real("rotation_max_deg", [](RunConfig& c) -> double& { return c.augment.rotation_max_deg; });
    u64("augment_seed", [](RunConfig& c) -> std::uint64_t& { return c.augment.seed; });
    size("augment_target_count", [](RunConfig& c) -> std::size_t& { return c.augment.target_count; });
    return m;
  }();
  return setters;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_setters()) keys.push_back(k);
  return keys;
}

inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto& setters = detail::config_setters();
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      it->second(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  validate(cfg.network);
  if (cfg.input_width == 0 || cfg.input_height == 0 || cfg.input_width % 8 || cfg.input_height % 8) {
    throw ConfigError(source + ": input_width and input_height must be positive multiples of 8");
  }
  if (cfg.train.batch_size == 0) throw ConfigError(source + ": batch_size must be >= 1");
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return parse_config(in, path.string());
}

}  // namespace eyenet
