#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "handaug/augmentor.hpp"
#include "handaug/depth_renderer.hpp"
#include "handaug/errors.hpp"
#include "handaug/refinement.hpp"
#include "handaug/training.hpp"

namespace handaug {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Settings of every pipeline stage, read from a flat `key = value` file.
/// One master seed feeds all stages through stage_seed().
struct RunConfig {
  std::uint64_t seed = 0;
  TrainConfig train;
  AugmentConfig augment;
  RenderConfig render;
  RefineConfig refine;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class Num>
Num parse_number(std::string_view text, const std::string& where) {
  Num v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(where + ": '" + std::string(text) + "' is not a valid number");
  return v;
}

inline bool parse_bool(std::string_view text, const std::string& where) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(where + ": '" + std::string(text) + "' is not a boolean");
}

using Setter = std::function<void(RunConfig&, std::string_view, const std::string&)>;

template <class Field>
Setter set_double(Field f) {
  return [f](RunConfig& c, std::string_view v, const std::string& w) { f(c) = parse_number<double>(v, w); };
}
template <class Field>
Setter set_size(Field f) {
  return [f](RunConfig& c, std::string_view v, const std::string& w) { f(c) = parse_number<std::size_t>(v, w); };
}
template <class Field>
Setter set_bool(Field f) {
  return [f](RunConfig& c, std::string_view v, const std::string& w) { f(c) = parse_bool(v, w); };
}

inline const std::map<std::string, Setter, std::less<>>& config_keys() {
  static const std::map<std::string, Setter, std::less<>> keys = {
      {"seed", [](RunConfig& c, std::string_view v, const std::string& w) { c.seed = parse_number<std::uint64_t>(v, w); }},
      // training
      {"lambda", set_double([](RunConfig& c) -> double& { return c.train.lambda; })},
      {"learning_rate", set_double([](RunConfig& c) -> double& { return c.train.learning_rate; })},
      {"discriminator_learning_rate",
       [](RunConfig& c, std::string_view v, const std::string& w) {
         c.train.discriminator_learning_rate = parse_number<double>(v, w);
       }},
      {"batch_size", set_size([](RunConfig& c) -> std::size_t& { return c.train.batch_size; })},
      {"epochs", set_size([](RunConfig& c) -> std::size_t& { return c.train.epochs; })},
      {"use_unpaired", set_bool([](RunConfig& c) -> bool& { return c.train.use_unpaired; })},
      {"use_inplane_aug", set_bool([](RunConfig& c) -> bool& { return c.train.use_inplane_aug; })},
      {"inplane_sigma", set_double([](RunConfig& c) -> double& { return c.train.inplane_sigma; })},
      {"beta1", set_double([](RunConfig& c) -> double& { return c.train.beta1; })},
      {"beta2", set_double([](RunConfig& c) -> double& { return c.train.beta2; })},
      {"adam_epsilon", set_double([](RunConfig& c) -> double& { return c.train.adam_epsilon; })},
      // augmentation
      {"m", set_size([](RunConfig& c) -> std::size_t& { return c.augment.m; })},
      {"sigma_theta", set_double([](RunConfig& c) -> double& { return c.augment.sigma_theta; })},
      {"mean_tau", set_double([](RunConfig& c) -> double& { return c.augment.mean_tau; })},
      {"sigma_tau", set_double([](RunConfig& c) -> double& { return c.augment.sigma_tau; })},
      {"tau_min", set_double([](RunConfig& c) -> double& { return c.augment.tau_min; })},
      {"tau_max", set_double([](RunConfig& c) -> double& { return c.augment.tau_max; })},
      // rendering
      {"resolution", set_size([](RunConfig& c) -> std::size_t& { return c.render.resolution; })},
      {"near_mm", set_double([](RunConfig& c) -> double& { return c.render.near_mm; })},
      {"far_mm", set_double([](RunConfig& c) -> double& { return c.render.far_mm; })},
      {"window_mm", set_double([](RunConfig& c) -> double& { return c.render.window_mm; })},
      {"center_x", set_double([](RunConfig& c) -> double& { return c.render.center_x; })},
      {"center_y", set_double([](RunConfig& c) -> double& { return c.render.center_y; })},
      {"palm_radius", set_double([](RunConfig& c) -> double& { return c.render.palm_radius; })},
      // refinement
      {"gamma", set_double([](RunConfig& c) -> double& { return c.refine.gamma; })},
      {"lambda_ref", set_double([](RunConfig& c) -> double& { return c.refine.lambda_ref; })},
      {"views", set_size([](RunConfig& c) -> std::size_t& { return c.refine.views; })},
      {"view_sigma", set_double([](RunConfig& c) -> double& { return c.refine.view_sigma; })},
  };
  return keys;
}

}  // namespace detail

/// Applies `key = value` lines on top of `base`. Blank lines and `#`
/// comments are skipped; an unknown key or a bad value names its line.
inline RunConfig parse_run_config(std::string_view text, RunConfig base = {}) {
  const auto& keys = detail::config_keys();
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + ": unknown key '" + std::string(key) + "'");
    it->second(base, value, where + " (" + std::string(key) + ")");
  }
  return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace handaug
