#pragma once

// Flat key=value configuration files. '#' starts a comment; blank lines are
// ignored; later keys override earlier ones.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sc3d/errors.hpp"
#include "sc3d/training.hpp"

namespace sc3d {

class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "config") {
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse(in, path.string());
  }

  // "key=value" override.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
  }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    used_.insert(key);
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const {
    const std::string v = get_string(key);
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
  }
  double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

  std::uint64_t get_uint(const std::string& key) const {
    const std::string v = get_string(key);
    try {
      std::size_t pos = 0;
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      const unsigned long long u = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return u;
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
  }
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? get_uint(key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
  }

  // Keys that were present but never read.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

// Dataset root: the SC3D_DATA_ROOT environment variable overrides the config key.
inline std::filesystem::path dataset_root(const Config& c, const std::string& key = "data") {
  if (const char* env = std::getenv("SC3D_DATA_ROOT"); env && *env) return env;
  return c.get_string(key);
}

inline TrainingConfig training_config_from(const Config& c) {
  TrainingConfig t;
  t.shape.latent = c.get_uint("latent_size", t.shape.latent);
  t.shape.points = c.get_uint("num_points", t.shape.points);
  t.shape.decoded_points = c.get_uint("decoded_points", t.shape.decoded_points);
  t.shape.hidden = c.get_uint("decoder_hidden", t.shape.hidden);
  t.candidates = c.get_uint("candidates", t.candidates);
  t.sigma_t = c.get_double("sigma_t", t.sigma_t);
  t.sigma_alpha = c.get_double("sigma_alpha", t.sigma_alpha);
  t.weights.lambda_comp = c.get_double("lambda_comp", t.weights.lambda_comp);
  t.weights.tracking = c.get_double("tracking_weight", t.weights.tracking);
  t.adam.lr = c.get_double("lr", t.adam.lr);
  t.adam.beta1 = c.get_double("beta1", t.adam.beta1);
  t.adam.beta2 = c.get_double("beta2", t.adam.beta2);
  t.adam.eps = c.get_double("adam_eps", t.adam.eps);
  t.patience = c.get_uint("patience", t.patience);
  t.ratio = c.get_double("lr_ratio", t.ratio);
  t.epochs = c.get_uint("epochs", t.epochs);
  t.seed = c.get_uint("seed", t.seed);
  t.val_seed = c.get_uint("val_seed", t.val_seed);
  t.crop.scale = c.get_double("crop_scale", t.crop.scale);
  t.crop.margin = c.get_double("crop_margin", t.crop.margin);
  t.max_train_frames = c.get_uint("max_train_frames", t.max_train_frames);
  t.max_val_frames = c.get_uint("max_val_frames", t.max_val_frames);

  if (t.shape.latent < 1 || t.shape.points < 1 || t.shape.decoded_points < 1 || t.shape.hidden < 1) {
    throw ConfigError("network sizes (latent_size, num_points, decoded_points, decoder_hidden) must be >= 1");
  }
  if (t.candidates < 1) throw ConfigError("config key 'candidates' must be >= 1");
  if (t.weights.lambda_comp < 0.0) throw ConfigError("config key 'lambda_comp' must be >= 0");
  if (t.weights.tracking < 0.0) throw ConfigError("config key 'tracking_weight' must be >= 0");
  if (!(t.adam.lr > 0.0)) throw ConfigError("config key 'lr' must be > 0");
  if (t.patience < 1) throw ConfigError("config key 'patience' must be >= 1");
  if (!(t.ratio > 0.0 && t.ratio < 1.0)) throw ConfigError("config key 'lr_ratio' must lie in (0, 1)");
  if (!(t.crop.scale > 0.0)) throw ConfigError("config key 'crop_scale' must be > 0");
  return t;
}

}  // namespace sc3d
