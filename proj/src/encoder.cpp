// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace dsmoe::enc {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Tensor conv_bias_relu6(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  Conv2dOpts o;
  o.stride_h = o.stride_w = stride;
  o.pad_h = o.pad_w = pad;
  return relu6(conv2d(x, w, &b, o));
}
}  // namespace

double factorized_parameter_reduction(int k) {
  if (k < 1) fail("factorized_parameter_reduction: k must be >= 1");
  return 2.0 * (k - 1) / (static_cast<double>(k) * k);
}

FactorizedDepthwiseConv::FactorizedDepthwiseConv(Graph& g, ParamRegistry& reg,
                                                 const std::string& name, int channels, int k,
                                                 int dilation, int n_pairs, Rng& rng)
    : g_(&g), channels_(channels), k_(k), dilation_(dilation), n_(n_pairs) {
  if (k < 1 || k % 2 == 0) fail("factorized conv: k must be odd and >= 1");
  double stddev = 1.0 / std::sqrt(static_cast<double>(2 * k - 1));
  for (int p = 0; p < n_pairs; ++p) {
    col_w_.push_back(reg.make_normal(g, name + ".col" + std::to_string(p), {channels, 1, k, 1},
                                     rng, stddev));
    if (k > 1)
      row_w_.push_back(reg.make_normal(g, name + ".row" + std::to_string(p),
                                       {channels, 1, 1, k - 1}, rng, stddev));
  }
}

std::int64_t FactorizedDepthwiseConv::param_count() const {
  std::int64_t per_channel = (k_ > 1) ? (2 * k_ - 1) : 1;
  return static_cast<std::int64_t>(n_) * channels_ * per_channel;
}

Tensor FactorizedDepthwiseConv::forward(const Tensor& x, int stride) const {
  int half = (k_ - 1) / 2;
  Conv2dOpts col_opts;
  col_opts.groups = channels_;
  col_opts.stride_h = col_opts.stride_w = stride;
  col_opts.pad_h = half * dilation_;
  col_opts.dil_h = dilation_;
  Tensor out = conv2d(x, col_w_[0], nullptr, col_opts);
  auto row_branch = [&](const Tensor& rw) {
    // horizontal taps exclude the center, which the column already covers
    Tensor left = slice(rw, 3, 0, half);
    Tensor right = slice(rw, 3, half, half);
    Tensor zero = g_->leaf({channels_, 1, 1, 1}, 0.0);
    Tensor full = concat({left, zero, right}, 3);
    Conv2dOpts row_opts;
    row_opts.groups = channels_;
    row_opts.stride_h = row_opts.stride_w = stride;
    row_opts.pad_w = half * dilation_;
    row_opts.dil_w = dilation_;
    return conv2d(x, full, nullptr, row_opts);
  };
  if (k_ > 1) out = add(out, row_branch(row_w_[0]));
  for (int p = 1; p < n_; ++p) {
    Conv2dOpts col_opts_p = col_opts;
    out = add(out, conv2d(x, col_w_[static_cast<size_t>(p)], nullptr, col_opts_p));
    if (k_ > 1) out = add(out, row_branch(row_w_[static_cast<size_t>(p)]));
  }
  return out;
}

int adaptive_stride_from_mean(double mean_grad_mag, double theta) {
  if (theta <= 0.0) fail("adaptive_stride: theta must be positive");
  if (mean_grad_mag < 0.0) fail("adaptive_stride: negative gradient magnitude");
  double l = std::floor(std::log2(1.0 + mean_grad_mag / theta));
  return 1 << static_cast<int>(l);
}

double mean_gradient_magnitude(const Tensor& x) {
  if (x.rank() != 4) fail("gradient magnitude: expects B*C*H*W");
  std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto& d = x.data();
  // channel-averaged map
  std::vector<double> m(static_cast<size_t>(B * H * W), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* src = d.data() + ((b * C + c) * H) * W;
      double* dst = m.data() + b * H * W;
      for (std::int64_t i = 0; i < H * W; ++i) dst[i] += src[i] / static_cast<double>(C);
    }
  auto at = [&](std::int64_t b, std::int64_t y, std::int64_t xx) {
    y = std::max<std::int64_t>(0, std::min(H - 1, y));
    xx = std::max<std::int64_t>(0, std::min(W - 1, xx));
    return m[static_cast<size_t>(b * H * W + y * W + xx)];
  };
  std::vector<double> mag(static_cast<size_t>(B * H * W));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx) {
        double gx = 0.5 * (at(b, y, xx + 1) - at(b, y, xx - 1));
        double gy = 0.5 * (at(b, y + 1, xx) - at(b, y - 1, xx));
        mag[static_cast<size_t>(b * H * W + y * W + xx)] = std::sqrt(gx * gx + gy * gy);
      }
  // 3x3 window averaging then the global expectation collapse to the same
  // mean up to border replication; keep the windowed form explicit
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            std::int64_t yy = std::max<std::int64_t>(0, std::min(H - 1, y + dy));
            std::int64_t xc = std::max<std::int64_t>(0, std::min(W - 1, xx + dx));
            acc += mag[static_cast<size_t>(b * H * W + yy * W + xc)];
          }
        total += acc / 9.0;
      }
  return total / static_cast<double>(B * H * W);
}

int adaptive_stride(const Tensor& feature, double theta) {
  return adaptive_stride_from_mean(mean_gradient_magnitude(feature), theta);
}

Cbam::Cbam(Graph& g, ParamRegistry& reg, const std::string& name, int channels, int reduction,
           Rng& rng)
    : g_(&g), channels_(channels), hidden_(std::max(1, channels / reduction)) {
  double s1 = 1.0 / std::sqrt(static_cast<double>(channels));
  double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  mlp_w1_ = reg.make_normal(g, name + ".mlp_w1", {channels, hidden_}, rng, s1);
  mlp_b1_ = reg.make_fill(g, name + ".mlp_b1", {1, hidden_}, 0.0);
  mlp_w2_ = reg.make_normal(g, name + ".mlp_w2", {hidden_, channels}, rng, s2);
  mlp_b2_ = reg.make_fill(g, name + ".mlp_b2", {1, channels}, 0.0);
  spatial_w_ = reg.make_normal(g, name + ".spatial_w", {1, 2, 7, 7}, rng, 1.0 / std::sqrt(98.0));
  spatial_b_ = reg.make_fill(g, name + ".spatial_b", {1}, 0.0);
}

Tensor Cbam::forward(const Tensor& f) const {
  if (f.rank() != 4 || f.dim(1) != channels_)
    fail("cbam: expected B*" + std::to_string(channels_) + "*H*W, got " + shape_str(f.shape()));
  int B = f.dim(0), H = f.dim(2), W = f.dim(3);
  auto mlp = [&](const Tensor& v) {
    Tensor h = relu6(add(matmul(v, mlp_w1_), expand(mlp_b1_, {B, hidden_})));
    return add(matmul(h, mlp_w2_), expand(mlp_b2_, {B, channels_}));
  };
  Tensor gamma_c = sigmoid(add(mlp(global_avg_pool(f)), mlp(global_max_pool(f))));
  Tensor fc = mul(f, expand(reshape(gamma_c, {B, channels_, 1, 1}), f.shape()));

  Tensor avg_c = mean(fc, 1, true);        // B x 1 x H x W
  Tensor max_c = max_reduce(fc, 1, true);  // B x 1 x H x W
  Conv2dOpts o;
  o.pad_h = o.pad_w = 3;
  Tensor gamma_s = sigmoid(conv2d(concat({avg_c, max_c}, 1), spatial_w_, &spatial_b_, o));
  return mul(fc, expand(gamma_s, fc.shape()));
}

VisualEncoder::VisualEncoder(Graph& g, ParamRegistry& reg, const std::array<int, 4>& widths,
                             Rng& rng, double theta)
    : g_(&g), widths_(widths), theta_(theta) {
  auto conv_std = [](int cin, int k) { return std::sqrt(2.0 / (cin * k * k)); };
  stem1_w_ = reg.make_normal(g, "enc.stem1_w", {widths[0], 3, 3, 3}, rng, conv_std(3, 3));
  stem1_b_ = reg.make_fill(g, "enc.stem1_b", {widths[0]}, 0.0);
  stem2_w_ = reg.make_normal(g, "enc.stem2_w", {widths[0], widths[0], 3, 3}, rng,
                             conv_std(widths[0], 3));
  stem2_b_ = reg.make_fill(g, "enc.stem2_b", {widths[0]}, 0.0);
  for (int l = 1; l < 4; ++l) {
    down_w_.push_back(reg.make_normal(g, "enc.down" + std::to_string(l) + "_w",
                                      {widths[static_cast<size_t>(l)],
                                       widths[static_cast<size_t>(l - 1)], 3, 3},
                                      rng, conv_std(widths[static_cast<size_t>(l - 1)], 3)));
    down_b_.push_back(
        reg.make_fill(g, "enc.down" + std::to_string(l) + "_b", {widths[static_cast<size_t>(l)]}, 0.0));
  }
  for (int l = 0; l < 4; ++l) {
    int w = widths[static_cast<size_t>(l)];
    refine_.emplace_back(g, reg, "enc.refine" + std::to_string(l), w, 3, 1 << l, 1, rng);
    point_w_.push_back(reg.make_normal(g, "enc.point" + std::to_string(l) + "_w", {w, w, 1, 1},
                                       rng, conv_std(w, 1)));
    point_b_.push_back(reg.make_fill(g, "enc.point" + std::to_string(l) + "_b", {w}, 0.0));
  }
}

MultiScaleFeatures VisualEncoder::encode(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3)
    fail("encoder: expected B*3*H*W, got " + shape_str(images.shape()));
  if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
    fail("encoder: H and W must be divisible by 32, got " + shape_str(images.shape()));

  MultiScaleFeatures out;
  Tensor cur = conv_bias_relu6(images, stem1_w_, stem1_b_, 2, 1);
  cur = conv_bias_relu6(cur, stem2_w_, stem2_b_, 2, 1);
  for (int l = 0; l < 4; ++l) {
    if (l > 0)
      cur = conv_bias_relu6(cur, down_w_[static_cast<size_t>(l - 1)],
                            down_b_[static_cast<size_t>(l - 1)], 2, 1);
    // Eq.-5 gate: the refinement block runs coarse (stride 2 + upsample)
    // when the gradient-aware stride signal reaches 2; level strides stay
    // fixed so shapes are static
    int s_hat = adaptive_stride(cur, theta_);
    out.adaptive[static_cast<size_t>(l)] = s_hat;
    bool coarse = s_hat >= 2 && cur.dim(2) % 2 == 0 && cur.dim(3) % 2 == 0;
    out.coarse_refine[static_cast<size_t>(l)] = coarse;
    Tensor refined = refine_[static_cast<size_t>(l)].forward(cur, coarse ? 2 : 1);
    if (coarse) refined = upsample_nearest(refined, 2);
    Conv2dOpts pw;
    Tensor level = relu6(conv2d(refined, point_w_[static_cast<size_t>(l)],
                                &point_b_[static_cast<size_t>(l)], pw));
    out.levels.push_back(level);
    cur = level;
  }
  return out;
}

}  // namespace dsmoe::enc
