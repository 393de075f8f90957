// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/broadcast.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dsmoe/hyperbolic.hpp"

namespace dsmoe::sb {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// raw value whose softplus is 1
const double kDeltaRawInit = std::log(std::exp(1.0) - 1.0);
}  // namespace

int dilation_rate(double d_h, double delta) {
  if (delta <= 0.0) fail("dilation_rate: delta must be positive");
  if (d_h < 0.0) fail("dilation_rate: negative distance");
  int r = static_cast<int>(std::floor(1.0 + d_h / delta));
  return std::max(1, std::min(4, r));
}

void BroadcastConfig::validate() const {
  if (scales.empty()) fail("broadcast: empty scale set");
  for (double s : scales)
    if (s != 0.5 && s != 1.0 && s != 2.0)
      fail("broadcast: scale " + std::to_string(s) + " outside {0.5, 1, 2}");
  if (sample_points != 9) fail("broadcast: only the 3x3 sampling grid is supported");
}

SpaceBroadcast::SpaceBroadcast(Graph& g, ParamRegistry& reg, const std::string& name, int c_cs,
                               int n, int d_t, int c_b, const BroadcastConfig& cfg, Rng& rng)
    : g_(&g), c_cs_(c_cs), n_(n), d_t_(d_t), c_b_(c_b), d_e_(n / 2), k_(cfg.sample_points),
      cfg_(cfg) {
  cfg_.validate();
  if (d_e_ < 1) fail("broadcast: ball dimension too small, d_e = floor(n/2) must be >= 1");
  gamma_w_ = reg.make_normal(g, name + ".gamma_w", {n, d_e_}, rng, 1.0 / std::sqrt(n));
  gamma_b_ = reg.make_fill(g, name + ".gamma_b", {1, d_e_}, 0.0);
  text_map_w_ = reg.make_normal(g, name + ".text_map_w", {d_t, d_e_}, rng, 1.0 / std::sqrt(d_t));
  gate_w_ = reg.make_fill(g, name + ".gate_w", {d_e_, k_}, 0.0);
  gate_b_ = reg.make_fill(g, name + ".gate_b", {1, k_}, 0.0);
  delta_raw_ = reg.make(g, name + ".delta_raw", {1}, {kDeltaRawInit});
  int ctx = n + d_t;
  for (size_t i = 0; i < cfg_.scales.size(); ++i) {
    ScaleHead h;
    std::string p = name + ".s" + std::to_string(i);
    h.dw_w = reg.make_normal(g, p + ".dw_w", {ctx, 1, 3, 3}, rng, 1.0 / 3.0);
    h.pw_w = reg.make_fill(g, p + ".pw_w", {2 * k_, ctx, 1, 1}, 0.0);
    h.pw_b = reg.make_fill(g, p + ".pw_b", {2 * k_}, 0.0);
    int fused_c = (c_cs + d_e_) * k_;
    h.mix_w = reg.make_normal(g, p + ".mix_w", {c_b, fused_c, 1, 1}, rng,
                              std::sqrt(2.0 / fused_c));
    h.mix_b = reg.make_fill(g, p + ".mix_b", {c_b}, 0.0);
    heads_.push_back(std::move(h));
  }
}

double SpaceBroadcast::delta() const { return softplus(delta_raw_.at(0)); }

int SpaceBroadcast::scale_index(double s) const {
  for (size_t i = 0; i < cfg_.scales.size(); ++i)
    if (cfg_.scales[i] == s) return static_cast<int>(i);
  fail("broadcast: scale " + std::to_string(s) + " not in the configured set");
}

Tensor SpaceBroadcast::gamma_project(const Tensor& g_aligned) const {
  if (g_aligned.rank() != 3 || g_aligned.dim(2) != n_)
    fail("gamma_project: expected B x C x n, got " + shape_str(g_aligned.shape()));
  int B = g_aligned.dim(0), C = g_aligned.dim(1);
  Tensor rows = reshape(g_aligned, {B * C, n_});
  Tensor tangent = hyper::log_map_origin_rows(rows);  // rows re-read as ball points, clamped
  Tensor projected = add(matmul(tangent, gamma_w_), expand(gamma_b_, {B * C, d_e_}));
  return reshape(projected, {B, C, d_e_});
}

Tensor SpaceBroadcast::psi_fuse(const Tensor& f_cs, const Tensor& g_aligned, double s) const {
  if (f_cs.rank() != 4 || f_cs.dim(1) != c_cs_)
    fail("psi_fuse: expected B x " + std::to_string(c_cs_) + " x H x W, got " +
         shape_str(f_cs.shape()));
  int B = f_cs.dim(0), H = f_cs.dim(2), W = f_cs.dim(3);
  Tensor ctx = mean(gamma_project(g_aligned), 1, false);  // B x d_e
  Tensor tiled = expand(reshape(ctx, {B, d_e_, 1, 1}), {B, d_e_, H, W});
  Tensor fused = concat({f_cs, tiled}, 1);
  if (s == 1.0) return fused;
  if (s == 2.0) return upsample_nearest(fused, 2);
  if (H % 2 != 0 || W % 2 != 0)
    fail("psi_fuse: scale 0.5 needs even spatial dims, got " + shape_str(f_cs.shape()));
  return avg_pool(fused, 2, 2);
}

Tensor SpaceBroadcast::deform_offsets(const Tensor& g_aligned, const Tensor& t_hat, double s,
                                      int h_s, int w_s) const {
  int B = g_aligned.dim(0);
  const ScaleHead& head = heads_[static_cast<size_t>(scale_index(s))];
  Tensor g_ctx = mean(g_aligned, 1, false);                    // B x n
  Tensor t_ctx = mean(t_hat, 0, false);                        // d_t
  Tensor t_tiled = expand(reshape(t_ctx, {1, d_t_}), {B, d_t_});
  Tensor ctx = concat({g_ctx, t_tiled}, 1);                    // B x (n + d_t)
  int c = n_ + d_t_;
  Tensor map = expand(reshape(ctx, {B, c, 1, 1}), {B, c, h_s, w_s});
  Conv2dOpts dw;
  dw.groups = c;
  dw.pad_h = dw.pad_w = 1;
  Tensor hmap = conv2d(map, head.dw_w, nullptr, dw);
  Conv2dOpts pw;
  Tensor raw = conv2d(hmap, head.pw_w, &head.pw_b, pw);        // B x 2K x h_s x w_s
  return mul_scalar(tanh(raw), 3.0);                           // offsets bounded to [-3, 3]
}

Tensor SpaceBroadcast::deform_gates(const Tensor& g_aligned, const Tensor& t_hat) const {
  int B = g_aligned.dim(0);
  Tensor g_ctx = mean(gamma_project(g_aligned), 1, false);     // B x d_e
  Tensor t_mapped = mean(matmul(t_hat, text_map_w_), 0, false);  // d_e
  Tensor t_tiled = expand(reshape(t_mapped, {1, d_e_}), {B, d_e_});
  Tensor prod = mul(g_ctx, t_tiled);
  return sigmoid(add(matmul(prod, gate_w_), expand(gate_b_, {B, k_})));  // B x K
}

BroadcastOutput SpaceBroadcast::forward(const Tensor& f_cs, const Tensor& g_aligned,
                                        const Tensor& t_hat, double d_h) const {
  int B = f_cs.dim(0), H = f_cs.dim(2), W = f_cs.dim(3);
  BroadcastOutput out;
  Tensor acc;
  for (double s : cfg_.scales) {
    Tensor fused = psi_fuse(f_cs, g_aligned, s);
    int h_s = fused.dim(2), w_s = fused.dim(3);
    int fc = fused.dim(1);
    int r = dilation_rate(d_h, delta());
    Tensor offsets = deform_offsets(g_aligned, t_hat, s, h_s, w_s);
    Tensor gates = deform_gates(g_aligned, t_hat);

    // sampling coordinates: 3x3 grid spaced by the dilation rate plus the
    // learned offsets
    Tensor xoff = slice(offsets, 1, 0, k_);
    Tensor yoff = slice(offsets, 1, k_, k_);
    std::vector<double> gx(static_cast<size_t>(k_ * h_s * w_s));
    std::vector<double> gy(gx.size());
    for (int k = 0; k < k_; ++k) {
      int dy = (k / 3 - 1) * r, dx = (k % 3 - 1) * r;
      for (int y = 0; y < h_s; ++y)
        for (int x = 0; x < w_s; ++x) {
          gx[static_cast<size_t>((k * h_s + y) * w_s + x)] = x + dx;
          gy[static_cast<size_t>((k * h_s + y) * w_s + x)] = y + dy;
        }
    }
    Tensor base_x = g_->leaf({1, k_, h_s, w_s}, gx);
    Tensor base_y = g_->leaf({1, k_, h_s, w_s}, gy);
    Tensor xs = reshape(add(xoff, expand(base_x, xoff.shape())), {B, k_ * h_s * w_s});
    Tensor ys = reshape(add(yoff, expand(base_y, yoff.shape())), {B, k_ * h_s * w_s});

    Tensor patches = bilinear_sample(fused, xs, ys);             // B x fc x (K h w)
    patches = reshape(patches, {B, fc * k_, h_s, w_s});          // channel order c*K + k

    Tensor gate_map = expand(reshape(gates, {B, 1, k_, 1, 1}), {B, fc, k_, h_s, w_s});
    gate_map = reshape(gate_map, {B, fc * k_, h_s, w_s});
    Tensor gated = mul(patches, gate_map);

    const ScaleHead& head = heads_[static_cast<size_t>(scale_index(s))];
    Conv2dOpts mix;
    Tensor branch = conv2d(gated, head.mix_w, &head.mix_b, mix);  // B x c_b x h_s x w_s

    if (s == 2.0) branch = avg_pool(branch, 2, 2);
    else if (s == 0.5) branch = upsample_nearest(branch, 2);
    if (branch.dim(2) != H || branch.dim(3) != W)
      fail("broadcast: branch resample mismatch at scale " + std::to_string(s));

    acc = acc.defined() ? add(acc, branch) : branch;
    out.per_scale.push_back({s, r, offsets, gates});
  }
  out.f_b = acc;
  return out;
}

void write_diagnostics(const BroadcastOutput& out, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("broadcast diagnostics: cannot write " + path);
  for (const auto& d : out.per_scale) {
    f << "scale " << d.scale << "\n";
    f << "dilation " << d.dilation << "\n";
    f << "gates";
    for (std::int64_t i = 0; i < d.gates.numel(); ++i) f << " " << d.gates.at(i);
    f << "\n";
    f << "offset_range";
    double lo = 0.0, hi = 0.0;
    for (std::int64_t i = 0; i < d.offsets.numel(); ++i) {
      lo = std::min(lo, d.offsets.at(i));
      hi = std::max(hi, d.offsets.at(i));
    }
    f << " " << lo << " " << hi << "\n";
  }
}

}  // namespace dsmoe::sb
