#pragma once

// Training configuration files: TOML-style sections and key = value lines,
// read with CLI11's config parser. Unknown sections or keys are rejected.
//
//   [data]  dir, train_per_class, test_per_class
//   [model] preset, spec, layer, alpha, nonintersect, dnc, th, init
//   [optim] kind, lr, momentum, beta1, beta2, eps, epochs, batch_size
//   [run]   seed, checkpoint_every

#include <cstdint>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "morphnet/model.hpp"
#include "morphnet/optim.hpp"

namespace morphnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string data_dir;
  std::size_t train_per_class = 0;  // 0 = whole split
  std::size_t test_per_class = 0;

  std::string preset = "synthetic";  // synthetic | minivgg-lite | minivgg | file
  std::string spec_path;             // JSON model spec for preset = file
  LayerChoice layer;

  OptimSpec optim;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 = only at the end

  void validate() const {
    if (preset != "synthetic" && preset != "minivgg-lite" && preset != "minivgg" && preset != "file")
      throw ConfigError("unknown model preset '" + preset + "'");
    if (preset == "file" && spec_path.empty()) throw ConfigError("preset 'file' needs model.spec");
    if (!is_filter_kind(layer.kind)) throw ConfigError("unknown layer kind '" + layer.kind + "'");
  }

  std::string describe() const {
    std::ostringstream os;
    auto num = [](double v) {
      return std::isnan(v) ? std::string("\"default\"") : std::isinf(v) ? std::string("inf") : format_number(v);
    };
    os << "[data]\ndir = \"" << data_dir << "\"\ntrain_per_class = " << train_per_class
       << "\ntest_per_class = " << test_per_class << "\n[model]\npreset = \"" << preset << "\"\n";
    if (!spec_path.empty()) os << "spec = \"" << spec_path << "\"\n";
    os << "layer = \"" << layer.kind << "\"\nalpha = " << num(layer.alpha)
       << "\nnonintersect = " << (layer.nonintersect ? "true" : "false")
       << "\ndnc = " << (layer.dnc ? "true" : "false") << "\nth = " << num(layer.th) << "\ninit = \""
       << layer.init << "\"\n[optim]\nkind = \"" << optim.kind << "\"\nlr = " << num(optim.lr)
       << "\nmomentum = " << num(optim.momentum) << "\nbeta1 = " << num(optim.beta1)
       << "\nbeta2 = " << num(optim.beta2) << "\neps = " << num(optim.eps) << "\nepochs = " << optim.epochs
       << "\nbatch_size = " << optim.batch_size << "\n[run]\nseed = " << seed
       << "\ncheckpoint_every = " << checkpoint_every << "\n";
    return os.str();
  }
};

namespace detail {

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    s = s.substr(1, s.size() - 2);
  return s;
}

inline double to_double(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

/// Parses config text on top of the defaults in `base`.
inline TrainConfig parse_train_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  TrainConfig c = std::move(base);
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    std::string section;
    for (const auto& p : item.parents) section += (section.empty() ? "" : ".") + p;
    const std::string key = section.empty() ? item.name : section + "." + item.name;
    if (item.inputs.size() != 1) throw ConfigError(key + ": expected a single value");
    const std::string v = detail::unquote(item.inputs[0]);
    using namespace detail;
    if (key == "data.dir") c.data_dir = v;
    else if (key == "data.train_per_class") c.train_per_class = to_uint(key, v);
    else if (key == "data.test_per_class") c.test_per_class = to_uint(key, v);
    else if (key == "model.preset") c.preset = v;
    else if (key == "model.spec") c.spec_path = v;
    else if (key == "model.layer") c.layer.kind = v;
    else if (key == "model.alpha") c.layer.alpha = to_double(key, v);
    else if (key == "model.nonintersect") c.layer.nonintersect = to_bool(key, v);
    else if (key == "model.dnc") c.layer.dnc = to_bool(key, v);
    else if (key == "model.th") c.layer.th = to_double(key, v);
    else if (key == "model.init") c.layer.init = v;
    else if (key == "optim.kind") c.optim.kind = v;
    else if (key == "optim.lr") c.optim.lr = to_double(key, v);
    else if (key == "optim.momentum") c.optim.momentum = to_double(key, v);
    else if (key == "optim.beta1") c.optim.beta1 = to_double(key, v);
    else if (key == "optim.beta2") c.optim.beta2 = to_double(key, v);
    else if (key == "optim.eps") c.optim.eps = to_double(key, v);
    else if (key == "optim.epochs") c.optim.epochs = to_uint(key, v);
    else if (key == "optim.batch_size") c.optim.batch_size = to_uint(key, v);
    else if (key == "run.seed") c.seed = to_uint(key, v);
    else if (key == "run.checkpoint_every") c.checkpoint_every = to_uint(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

inline TrainConfig read_train_config(const std::string& path, TrainConfig base = {}) {
  const auto bytes = read_file(path);
  return parse_train_config(std::string(bytes.begin(), bytes.end()), std::move(base));
}

}  // namespace morphnet
