// SPDX-License-Identifier: Apache-2.0
//
// Text-modulated multi-scale deformable fusion: hyperbolic-aligned class
// context steers sampling offsets, per-point gates and kernel dilation of a
// three-scale deformable convolution over the refined visual features.
#ifndef DSMOE_BROADCAST_HPP
#define DSMOE_BROADCAST_HPP

#include <string>
#include <vector>

#include "dsmoe/params.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe::sb {

// floor(1 + d_H / delta), clamped into [1, 4]
int dilation_rate(double d_h, double delta);

struct BroadcastConfig {
  std::vector<double> scales{0.5, 1.0, 2.0};
  int sample_points = 9;  // 3x3 grid
  void validate() const;  // scales must be a non-empty subset of {0.5, 1, 2}
};

struct ScaleDiagnostics {
  double scale = 1.0;
  int dilation = 1;
  Tensor offsets;  // B x 2K x H_s x W_s
  Tensor gates;    // B x K
};

struct BroadcastOutput {
  Tensor f_b;  // B x C_b x H x W at the s = 1 resolution
  std::vector<ScaleDiagnostics> per_scale;
};

void write_diagnostics(const BroadcastOutput& out, const std::string& path);

class SpaceBroadcast {
 public:
  // c_cs: visual channels in, n: ball dimension, d_t: text width,
  // c_b: output channels. d_e = floor(n / 2).
  SpaceBroadcast(Graph& g, ParamRegistry& reg, const std::string& name, int c_cs, int n, int d_t,
                 int c_b, const BroadcastConfig& cfg, Rng& rng);

  int d_e() const { return d_e_; }
  int c_b() const { return c_b_; }
  double delta() const;  // softplus of the learnable raw scaler

  // G: B x C x n aligned features -> B x C x d_e
  Tensor gamma_project(const Tensor& g_aligned) const;

  // concat [F_cs, tiled class-pooled gamma(G)], then resample by s
  Tensor psi_fuse(const Tensor& f_cs, const Tensor& g_aligned, double s) const;

  // offsets in [-3, 3] cells; zero at init by construction
  Tensor deform_offsets(const Tensor& g_aligned, const Tensor& t_hat, double s, int h_s,
                        int w_s) const;

  // K sigmoid gates per sample
  Tensor deform_gates(const Tensor& g_aligned, const Tensor& t_hat) const;

  // full Stage-6 pipeline; d_h is the mean pairwise anchor distance
  BroadcastOutput forward(const Tensor& f_cs, const Tensor& g_aligned, const Tensor& t_hat,
                          double d_h) const;

 private:
  int scale_index(double s) const;

  Graph* g_;
  int c_cs_, n_, d_t_, c_b_, d_e_, k_;
  BroadcastConfig cfg_;
  Tensor gamma_w_, gamma_b_;      // n -> d_e
  Tensor text_map_w_;             // d_t -> d_e for the gate product
  Tensor gate_w_, gate_b_;        // d_e -> K, bias zero-initialized
  Tensor delta_raw_;              // softplus-parameterized curvature scaler
  struct ScaleHead {
    Tensor dw_w;                  // depthwise 3x3 over the context channels
    Tensor pw_w, pw_b;            // pointwise -> 2K, zero-initialized
    Tensor mix_w, mix_b;          // 1x1 over gated patches -> c_b
  };
  std::vector<ScaleHead> heads_;
};

}  // namespace dsmoe::sb

#endif
