// Experiment configuration and its flat `key = value` text format.
//
//   # comment
//   method = er
//   droptop = on
//   stream.generator = color_shortcut
//   shift.alpha = 0.9
//   backbone.block_channels = 16,32
//   seeds = 0,1,2,3,4

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "droptop/backbone.hpp"
#include "droptop/intensity.hpp"
#include "droptop/stream.hpp"

namespace droptop {

enum class Method { er, derpp };
enum class DropMode { on, off, fixed, random, soft, no_fusion };

inline const char* to_string(Method m) { return m == Method::er ? "er" : "derpp"; }
inline const char* to_string(DropMode m) {
  switch (m) {
    case DropMode::on: return "on";
    case DropMode::off: return "off";
    case DropMode::fixed: return "fixed";
    case DropMode::random: return "random";
    case DropMode::soft: return "soft";
    default: return "no_fusion";
  }
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Method parse_method(const std::string& s) {
  if (s == "er") return Method::er;
  if (s == "derpp") return Method::derpp;
  throw ConfigError("unknown method '" + s + "' (expected er|derpp)");
}

inline DropMode parse_drop_mode(const std::string& s) {
  static const std::map<std::string, DropMode> modes{{"on", DropMode::on},         {"off", DropMode::off},
                                                      {"fixed", DropMode::fixed},   {"random", DropMode::random},
                                                      {"soft", DropMode::soft},     {"no_fusion", DropMode::no_fusion}};
  auto it = modes.find(s);
  if (it == modes.end()) throw ConfigError("unknown droptop mode '" + s + "' (expected on|off|fixed|random|soft|no_fusion)");
  return it->second;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

struct ExperimentConfig {
  Method method = Method::er;
  DropMode droptop = DropMode::on;
  StreamConfig stream;
  ShiftConfig shift;
  BackboneConfig backbone;
  std::size_t batch_size = 32;
  std::size_t memory_capacity = 500;
  double lr = 0.1;
  double derpp_distill_coef = 0.2;
  double derpp_mem_ce_coef = 0.5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path out_dir = "runs/default";
  bool common_intensity = false;  // one intensity shared by all classes
  std::size_t eval_every = 0;     // mid-task evaluation period, 0 = task ends only
  bool dump_masks = false;
  std::size_t workers = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    try {
      stream.validate();
      shift.validate();
      BackboneConfig b = backbone;
      b.input_size = stream.image_size;
      b.num_classes = stream.total_classes();
      b.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  // Backbone as used for a given seed: sized to the stream.
  BackboneConfig backbone_for(std::uint64_t seed) const {
    BackboneConfig b = backbone;
    b.input_channels = 3;
    b.input_size = stream.image_size;
    b.num_classes = stream.total_classes();
    b.seed = seed;
    return b;
  }

  StreamConfig stream_for(std::uint64_t seed) const {
    StreamConfig s = stream;
    s.seed = stream.seed * 1000003ULL + seed;
    return s;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    auto d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(d);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

}  // namespace config_detail

// Applies one setting; unknown keys are errors.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using namespace config_detail;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> table{
      {"method", [&](auto& v) { c.method = parse_method(v); }},
      {"droptop", [&](auto& v) { c.droptop = parse_drop_mode(v); }},
      {"batch_size", [&](auto& v) { c.batch_size = to_size(key, v); }},
      {"memory_capacity", [&](auto& v) { c.memory_capacity = to_size(key, v); }},
      {"lr", [&](auto& v) { c.lr = to_double(key, v); }},
      {"derpp_distill_coef", [&](auto& v) { c.derpp_distill_coef = to_double(key, v); }},
      {"derpp_mem_ce_coef", [&](auto& v) { c.derpp_mem_ce_coef = to_double(key, v); }},
      {"seeds", [&](auto& v) { c.seeds = parse_seed_list(v); }},
      {"out_dir", [&](auto& v) { c.out_dir = v; }},
      {"common_intensity", [&](auto& v) { c.common_intensity = to_bool(key, v); }},
      {"eval_every", [&](auto& v) { c.eval_every = to_size(key, v); }},
      {"dump_masks", [&](auto& v) { c.dump_masks = to_bool(key, v); }},
      {"workers", [&](auto& v) { c.workers = to_size(key, v); }},
      {"stream.generator",
       [&](auto& v) {
         if (v == "color_shortcut")
           c.stream.generator = Generator::color_shortcut;
         else if (v == "patch_background")
           c.stream.generator = Generator::patch_background;
         else
           throw ConfigError("unknown generator '" + v + "'");
       }},
      {"stream.num_tasks", [&](auto& v) { c.stream.num_tasks = to_size(key, v); }},
      {"stream.classes_per_task", [&](auto& v) { c.stream.classes_per_task = to_size(key, v); }},
      {"stream.samples_per_class", [&](auto& v) { c.stream.samples_per_class = to_size(key, v); }},
      {"stream.test_samples_per_class", [&](auto& v) { c.stream.test_samples_per_class = to_size(key, v); }},
      {"stream.image_size", [&](auto& v) { c.stream.image_size = to_size(key, v); }},
      {"stream.bias_ratio", [&](auto& v) { c.stream.bias_ratio = to_double(key, v); }},
      {"stream.noise_std", [&](auto& v) { c.stream.noise_std = to_double(key, v); }},
      {"stream.seed", [&](auto& v) { c.stream.seed = to_size(key, v); }},
      {"stream.shared_hues", [&](auto& v) { c.stream.shared_hues = to_bool(key, v); }},
      {"stream.train_variant",
       [&](auto& v) {
         if (v == "full")
           c.stream.train_variant = TrainVariant::full;
         else if (v == "only_fg")
           c.stream.train_variant = TrainVariant::only_fg;
         else if (v == "only_bg")
           c.stream.train_variant = TrainVariant::only_bg;
         else
           throw ConfigError("unknown train_variant '" + v + "'");
       }},
      {"shift.alpha", [&](auto& v) { c.shift.alpha = to_double(key, v); }},
      {"shift.period", [&](auto& v) { c.shift.period = to_size(key, v); }},
      {"shift.history", [&](auto& v) { c.shift.history = to_size(key, v); }},
      {"shift.gamma", [&](auto& v) { c.shift.gamma = to_double(key, v); }},
      {"shift.kappa0", [&](auto& v) { c.shift.kappa0 = to_double(key, v); }},
      {"shift.significance", [&](auto& v) { c.shift.significance = to_double(key, v); }},
      {"backbone.stem_channels", [&](auto& v) { c.backbone.stem_channels = to_size(key, v); }},
      {"backbone.block_channels",
       [&](auto& v) {
         std::vector<std::size_t> widths;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) widths.push_back(to_size(key, trim(item)));
         c.backbone.block_channels = widths;
       }},
  };
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(value);
}

inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = config_detail::trim(line.substr(0, eq));
    const auto value = config_detail::trim(line.substr(eq + 1));
    try {
      apply_setting(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in);
}

}  // namespace droptop
