// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_CONFIG_HPP
#define DSMOE_CONFIG_HPP

#include <array>
#include <cstdint>
#include <string>

namespace dsmoe::harness {

// Desk-scale run configuration. File format: one "key = value" per line,
// '#' comments allowed.
struct RunConfig {
  std::uint64_t seed = 42;
  int image_size = 64;      // 640 available, desk default 64
  int batch_size = 8;
  int eval_batch = 1;
  int n_images = 200;
  int n_classes = 4;
  int min_instances = 1;
  int max_instances = 3;
  double small_object_fraction = 0.0;
  bool mixup = false;
  double gamma = 1.5;
  double gamma_c = 1.0;

  int steps = 1000;
  double lr = 1e-3;          // cosine-annealed from here
  double weight_decay = 1e-3;
  double momentum = 0.9;
  int checkpoint_every = 0;
  int log_every = 10;

  int n_experts = 8;
  int k_override = 0;        // 0 -> floor(log2 N_e)
  double tau_gate_init = 0.1;
  double tau_route = 0.07;
  bool mlp_router = false;

  double beta = 0.5;          // hyperbolic fusion weight
  double lambda_align = 0.01;
  double lambda_hierarchy = 0.0;

  int d_t = 64;
  int heads = 8;
  int ball_dim = 8;
  std::array<int, 4> enc_widths{16, 32, 64, 128};
  int c_cs = 32;
  int c_b = 16;
  int c_m = 16;
  int c_g = 16;
  int d_g = 16;
  int head_channels = 24;
  int anchors_per_scale = 3;

  std::string data_dir;      // optional corpus directory; empty -> generate

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
  void validate() const;
};

}  // namespace dsmoe::harness

#endif
