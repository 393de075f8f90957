// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace dsmoe::harness {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
std::string to_str(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::vector<std::pair<std::string, Field>>& fields() {
  auto ints = [](int RunConfig::* mem) {
    return Field{[mem](RunConfig& c, const std::string& v) { c.*mem = std::stoi(v); },
                 [mem](const RunConfig& c) { return to_str(c.*mem); }};
  };
  auto dbls = [](double RunConfig::* mem) {
    return Field{[mem](RunConfig& c, const std::string& v) { c.*mem = std::stod(v); },
                 [mem](const RunConfig& c) { return to_str(c.*mem); }};
  };
  auto bools = [](bool RunConfig::* mem) {
    return Field{[mem](RunConfig& c, const std::string& v) {
                   if (v == "true" || v == "1") c.*mem = true;
                   else if (v == "false" || v == "0") c.*mem = false;
                   else fail("config: boolean expects true/false, got '" + v + "'");
                 },
                 [mem](const RunConfig& c) { return (c.*mem) ? "true" : "false"; }};
  };
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", {[](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); },
                [](const RunConfig& c) { return to_str(c.seed); }}},
      {"image_size", ints(&RunConfig::image_size)},
      {"batch_size", ints(&RunConfig::batch_size)},
      {"eval_batch", ints(&RunConfig::eval_batch)},
      {"n_images", ints(&RunConfig::n_images)},
      {"n_classes", ints(&RunConfig::n_classes)},
      {"min_instances", ints(&RunConfig::min_instances)},
      {"max_instances", ints(&RunConfig::max_instances)},
      {"small_object_fraction", dbls(&RunConfig::small_object_fraction)},
      {"mixup", bools(&RunConfig::mixup)},
      {"gamma", dbls(&RunConfig::gamma)},
      {"gamma_c", dbls(&RunConfig::gamma_c)},
      {"steps", ints(&RunConfig::steps)},
      {"lr", dbls(&RunConfig::lr)},
      {"weight_decay", dbls(&RunConfig::weight_decay)},
      {"momentum", dbls(&RunConfig::momentum)},
      {"checkpoint_every", ints(&RunConfig::checkpoint_every)},
      {"log_every", ints(&RunConfig::log_every)},
      {"n_experts", ints(&RunConfig::n_experts)},
      {"k_override", ints(&RunConfig::k_override)},
      {"tau_gate_init", dbls(&RunConfig::tau_gate_init)},
      {"tau_route", dbls(&RunConfig::tau_route)},
      {"mlp_router", bools(&RunConfig::mlp_router)},
      {"beta", dbls(&RunConfig::beta)},
      {"lambda_align", dbls(&RunConfig::lambda_align)},
      {"lambda_hierarchy", dbls(&RunConfig::lambda_hierarchy)},
      {"d_t", ints(&RunConfig::d_t)},
      {"heads", ints(&RunConfig::heads)},
      {"ball_dim", ints(&RunConfig::ball_dim)},
      {"c_cs", ints(&RunConfig::c_cs)},
      {"c_b", ints(&RunConfig::c_b)},
      {"c_m", ints(&RunConfig::c_m)},
      {"c_g", ints(&RunConfig::c_g)},
      {"d_g", ints(&RunConfig::d_g)},
      {"head_channels", ints(&RunConfig::head_channels)},
      {"anchors_per_scale", ints(&RunConfig::anchors_per_scale)},
      {"data_dir", {[](RunConfig& c, const std::string& v) { c.data_dir = v; },
                    [](const RunConfig& c) { return c.data_dir; }}},
      {"enc_widths", {[](RunConfig& c, const std::string& v) {
                        std::istringstream ls(v);
                        char comma;
                        for (int i = 0; i < 4; ++i) {
                          if (!(ls >> c.enc_widths[static_cast<size_t>(i)]))
                            fail("config: enc_widths expects 4 comma-separated ints");
                          if (i < 3) ls >> comma;
                        }
                      },
                      [](const RunConfig& c) {
                        std::ostringstream os;
                        for (int i = 0; i < 4; ++i) {
                          if (i) os << ",";
                          os << c.enc_widths[static_cast<size_t>(i)];
                        }
                        return os.str();
                      }}},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields())
    if (name == key) {
      field.set(*this, value);
      return;
    }
  fail("config: unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  for (const auto& [name, field] : fields())
    if (name == key) return field.get(*this);
  fail("config: unknown key '" + key + "'");
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("config: cannot open " + path);
  RunConfig cfg;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(n) + " is not 'key = value': " + line);
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) fail("config: cannot write " + path);
  for (const auto& [name, field] : fields()) f << name << " = " << field.get(*this) << "\n";
}

void RunConfig::validate() const {
  if (image_size % 32 != 0) fail("config: image_size must be divisible by 32");
  if (batch_size < 1 || steps < 1 || n_images < 1) fail("config: counts must be positive");
  if (n_experts < 3) fail("config: n_experts must be >= 3");
  if (k_override < 0 || k_override > n_experts) fail("config: k_override out of range");
  if (lr <= 0.0) fail("config: lr must be positive");
  if (d_t % 2 != 0 || d_t % heads != 0) fail("config: d_t must be even and divisible by heads");
  if (ball_dim < 2) fail("config: ball_dim must be >= 2");
  if (c_m % 2 != 0) fail("config: c_m must be even");
  if (beta < 0.0) fail("config: beta must be non-negative");
}

}  // namespace dsmoe::harness
