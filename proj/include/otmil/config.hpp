#pragma once
// Flat `key = value` run configuration. Unknown keys are rejected with the
// offending line number; CLI flags are applied afterwards as overrides.

#include <otmil/common.hpp>
#include <otmil/csv.hpp>

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace otmil {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      // shared
      "seed", "out", "threads",
      // solver
      "rho", "lambda", "epsilon", "tol", "max_iter", "iota",
      // training
      "rho0", "ramp_epochs", "epochs", "lr", "weight_decay", "batch_size",
      "n_tokens", "latent_dim", "ramp", "fixed_rho", "global_constraint",
      "max_patches", "n_folds", "fold",
      // synthetic data
      "n_bags", "min_instances", "max_instances", "feature_dim",
      "n_morph_components", "tail_exponent", "prognostic_component",
      "effect_size", "censoring_rate", "noise_sigma", "mixture_jitter",
      "standardize_prevalence",
      // paths
      "data", "manifest", "checkpoint", "cost",
  };
  return keys;
}

class RunConfig {
 public:
  static RunConfig from_string(const std::string& text,
                               const std::string& origin = "<config>") {
    RunConfig cfg;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t nl = text.find('\n', pos);
      std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
      pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ": expected 'key = value'", lineno);
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(origin + ": empty key", lineno);
      if (known_config_keys().count(key) == 0) {
        throw ConfigError(origin + ": unknown key '" + key + "'", lineno);
      }
      cfg.values_[key] = value;  // last assignment wins
    }
    return cfg;
  }

  static RunConfig from_file(const std::string& path) {
    return from_string(read_text_file(path), path);
  }

  // CLI overrides go through here; keys are validated the same way.
  void set(const std::string& key, const std::string& value) {
    if (known_config_keys().count(key) == 0) {
      throw ConfigError("unknown key '" + key + "'");
    }
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    double v = 0.0;
    if (!parse_double(it->second, v)) {
      throw ConfigError("key '" + key + "': not a number: '" + it->second + "'");
    }
    return v;
  }

  long long get_int(const std::string& key, long long dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    long long v = 0;
    if (!parse_long(it->second, v)) {
      throw ConfigError("key '" + key + "': not an integer: '" + it->second + "'");
    }
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    const std::string t = trim(it->second);
    errno = 0;
    char* end = nullptr;
    const std::uint64_t v = std::strtoull(t.c_str(), &end, 10);
    if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE) {
      throw ConfigError("key '" + key + "': not an unsigned integer: '" + t + "'");
    }
    return v;
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    const std::string v = trim(it->second);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': not a boolean: '" + v + "'");
  }

  // Echo in a stable order, suitable for embedding in checkpoints.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace otmil
