// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dsmoe/tensor.hpp"

namespace dsmoe {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = ad.data() + i * k;
    double* orow = out.data() + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = bd.data() + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return a.graph()->op_node(
      Shape{static_cast<int>(m), static_cast<int>(n)}, std::move(out), "matmul",
      {a.node_ptr(), b.node_ptr()}, [m, k, n](Node& nd) {
        Node& pa = *nd.parents[0];
        Node& pb = *nd.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          // dA = G * B^T
          for (std::int64_t i = 0; i < m; ++i) {
            const double* g = nd.grad.data() + i * n;
            double* ga = pa.grad.data() + i * k;
            for (std::int64_t p = 0; p < k; ++p) {
              const double* brow = pb.data.data() + p * n;
              double acc = 0.0;
              for (std::int64_t j = 0; j < n; ++j) acc += g[j] * brow[j];
              ga[p] += acc;
            }
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          // dB = A^T * G
          for (std::int64_t i = 0; i < m; ++i) {
            const double* g = nd.grad.data() + i * n;
            const double* arow = pa.data.data() + i * k;
            for (std::int64_t p = 0; p < k; ++p) {
              double av = arow[p];
              double* gb = pb.grad.data() + p * n;
              for (std::int64_t j = 0; j < n; ++j) gb[j] += av * g[j];
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOpts& o) {
  if (x.rank() != 4 || w.rank() != 4)
    fail("conv2d: expects 4-D input and weight, got " + shape_str(x.shape()) + " and " +
         shape_str(w.shape()));
  std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::int64_t Cout = w.dim(0), Cing = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (o.groups < 1 || Cin % o.groups != 0 || Cout % o.groups != 0 || Cing != Cin / o.groups)
    fail("conv2d: group mismatch, input " + shape_str(x.shape()) + " weight " +
         shape_str(w.shape()) + " groups " + std::to_string(o.groups));
  if (bias && bias->numel() != Cout) fail("conv2d: bias length must equal Cout");
  std::int64_t OH = (H + 2 * o.pad_h - o.dil_h * (kh - 1) - 1) / o.stride_h + 1;
  std::int64_t OW = (W + 2 * o.pad_w - o.dil_w * (kw - 1) - 1) / o.stride_w + 1;
  if (OH <= 0 || OW <= 0)
    fail("conv2d: empty output for input " + shape_str(x.shape()) + " kernel " +
         shape_str(w.shape()));
  std::int64_t coutg = Cout / o.groups;
  const auto& xd = x.data();
  const auto& wd = w.data();
  std::vector<double> out(static_cast<size_t>(B * Cout * OH * OW), 0.0);

  const bool pointwise = kh == 1 && kw == 1 && o.stride_h == 1 && o.stride_w == 1 &&
                         o.pad_h == 0 && o.pad_w == 0;
  const std::int64_t hw = H * W;
  const std::int64_t ohw = OH * OW;

  // valid output ranges per kernel tap, so inner loops run unchecked
  auto tap_range = [](std::int64_t pad, std::int64_t tap, std::int64_t dil, std::int64_t stride,
                      std::int64_t in_size, std::int64_t out_size, std::int64_t& lo,
                      std::int64_t& hi) {
    std::int64_t off = tap * dil - pad;  // in = out*stride + off
    lo = 0;
    if (off < 0) lo = (-off + stride - 1) / stride;
    std::int64_t top = in_size - 1 - off;
    hi = top < 0 ? -1 : top / stride;
    if (hi >= out_size) hi = out_size - 1;
  };

  if (pointwise) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t oc = 0; oc < Cout; ++oc) {
        std::int64_t g = oc / coutg;
        double* orow = out.data() + (b * Cout + oc) * hw;
        if (bias) {
          double bv = bias->data()[oc];
          for (std::int64_t i = 0; i < hw; ++i) orow[i] = bv;
        }
        for (std::int64_t ic = 0; ic < Cing; ++ic) {
          double wv = wd[oc * Cing + ic];
          if (wv == 0.0) continue;
          const double* xrow = xd.data() + (b * Cin + g * Cing + ic) * hw;
          for (std::int64_t i = 0; i < hw; ++i) orow[i] += wv * xrow[i];
        }
      }
  } else {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t oc = 0; oc < Cout; ++oc) {
        std::int64_t g = oc / coutg;
        double* omap = out.data() + (b * Cout + oc) * ohw;
        if (bias) {
          double bv = bias->data()[oc];
          for (std::int64_t i = 0; i < ohw; ++i) omap[i] = bv;
        }
        for (std::int64_t ic = 0; ic < Cing; ++ic) {
          const double* xim = xd.data() + (b * Cin + g * Cing + ic) * hw;
          const double* wk = wd.data() + (oc * Cing + ic) * kh * kw;
          for (std::int64_t r = 0; r < kh; ++r)
            for (std::int64_t c = 0; c < kw; ++c) {
              double wv = wk[r * kw + c];
              if (wv == 0.0) continue;
              std::int64_t oh_lo, oh_hi, ow_lo, ow_hi;
              tap_range(o.pad_h, r, o.dil_h, o.stride_h, H, OH, oh_lo, oh_hi);
              tap_range(o.pad_w, c, o.dil_w, o.stride_w, W, OW, ow_lo, ow_hi);
              for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                std::int64_t ih = oh * o.stride_h - o.pad_h + r * o.dil_h;
                const double* xrow = xim + ih * W - o.pad_w + c * o.dil_w;
                double* orow = omap + oh * OW;
                if (o.stride_w == 1) {
                  for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                    orow[ow] += wv * xrow[ow];
                } else {
                  for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                    orow[ow] += wv * xrow[ow * o.stride_w];
                }
              }
            }
        }
      }
  }

  std::vector<std::shared_ptr<Node>> parents{x.node_ptr(), w.node_ptr()};
  if (bias) parents.push_back(bias->node_ptr());
  bool has_bias = bias != nullptr;
  return x.graph()->op_node(
      Shape{static_cast<int>(B), static_cast<int>(Cout), static_cast<int>(OH),
            static_cast<int>(OW)},
      std::move(out), "conv2d", std::move(parents),
      [B, Cin, H, W, Cout, Cing, kh, kw, OH, OW, coutg, o, has_bias, pointwise, hw, ohw,
       tap_range](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node* pbias = has_bias ? nd.parents[2].get() : nullptr;
        bool need_x = px.requires_grad;
        bool need_w = pw.requires_grad;
        if (need_x) px.ensure_grad();
        if (need_w) pw.ensure_grad();
        if (pbias && pbias->requires_grad) pbias->ensure_grad();

        if (pbias && pbias->requires_grad) {
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t oc = 0; oc < Cout; ++oc) {
              const double* grow = nd.grad.data() + (b * Cout + oc) * ohw;
              double acc = 0.0;
              for (std::int64_t i = 0; i < ohw; ++i) acc += grow[i];
              pbias->grad[oc] += acc;
            }
        }

        if (pointwise) {
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t oc = 0; oc < Cout; ++oc) {
              std::int64_t g = oc / coutg;
              const double* grow = nd.grad.data() + (b * Cout + oc) * hw;
              for (std::int64_t ic = 0; ic < Cing; ++ic) {
                std::int64_t xoff = (b * Cin + g * Cing + ic) * hw;
                if (need_x) {
                  double wv = pw.data[oc * Cing + ic];
                  if (wv != 0.0) {
                    double* gx = px.grad.data() + xoff;
                    for (std::int64_t i = 0; i < hw; ++i) gx[i] += wv * grow[i];
                  }
                }
                if (need_w) {
                  const double* xrow = px.data.data() + xoff;
                  double acc = 0.0;
                  for (std::int64_t i = 0; i < hw; ++i) acc += grow[i] * xrow[i];
                  pw.grad[oc * Cing + ic] += acc;
                }
              }
            }
          return;
        }

        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t oc = 0; oc < Cout; ++oc) {
            std::int64_t g = oc / coutg;
            const double* gmap = nd.grad.data() + (b * Cout + oc) * ohw;
            for (std::int64_t ic = 0; ic < Cing; ++ic) {
              std::int64_t xoff = (b * Cin + g * Cing + ic) * hw;
              std::int64_t woff = (oc * Cing + ic) * kh * kw;
              for (std::int64_t r = 0; r < kh; ++r)
                for (std::int64_t c = 0; c < kw; ++c) {
                  std::int64_t oh_lo, oh_hi, ow_lo, ow_hi;
                  tap_range(o.pad_h, r, o.dil_h, o.stride_h, H, OH, oh_lo, oh_hi);
                  tap_range(o.pad_w, c, o.dil_w, o.stride_w, W, OW, ow_lo, ow_hi);
                  double wv = pw.data[woff + r * kw + c];
                  double wacc = 0.0;
                  for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                    std::int64_t ih = oh * o.stride_h - o.pad_h + r * o.dil_h;
                    const double* grow = gmap + oh * OW;
                    std::int64_t xrow_off = xoff + ih * W - o.pad_w + c * o.dil_w;
                    if (need_w) {
                      const double* xrow = px.data.data() + xrow_off;
                      for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                        wacc += grow[ow] * xrow[ow * o.stride_w];
                    }
                    if (need_x && wv != 0.0) {
                      double* gx = px.grad.data() + xrow_off;
                      for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                        gx[ow * o.stride_w] += wv * grow[ow];
                    }
                  }
                  if (need_w) pw.grad[woff + r * kw + c] += wacc;
                }
            }
          }
      });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (x.rank() != 4) fail("upsample_nearest: expects B*C*H*W, got " + shape_str(x.shape()));
  if (factor < 1) fail("upsample_nearest: factor must be >= 1");
  std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::int64_t OH = H * factor, OW = W * factor;
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(B * C * OH * OW));
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = xd.data() + bc * H * W;
    double* dst = out.data() + bc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      const double* srow = src + (oh / factor) * W;
      for (std::int64_t ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = srow[ow / factor];
    }
  }
  return x.graph()->op_node(
      Shape{static_cast<int>(B), static_cast<int>(C), static_cast<int>(OH), static_cast<int>(OW)},
      std::move(out), "upsample_nearest", {x.node_ptr()}, [B, C, H, W, OH, OW, factor](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          double* pg = p.grad.data() + bc * H * W;
          const double* g = nd.grad.data() + bc * OH * OW;
          for (std::int64_t oh = 0; oh < OH; ++oh)
            for (std::int64_t ow = 0; ow < OW; ++ow)
              pg[(oh / factor) * W + ow / factor] += g[oh * OW + ow];
        }
      });
}

Tensor avg_pool(const Tensor& x, int k, int stride) {
  if (x.rank() != 4) fail("avg_pool: expects B*C*H*W, got " + shape_str(x.shape()));
  std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k < 1 || k > H || k > W) fail("avg_pool: window " + std::to_string(k) + " exceeds input");
  std::int64_t OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(B * C * OH * OW));
  double inv = 1.0 / (static_cast<double>(k) * k);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = xd.data() + bc * H * W;
    double* dst = out.data() + bc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh)
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        double acc = 0.0;
        for (int r = 0; r < k; ++r)
          for (int c = 0; c < k; ++c) acc += src[(oh * stride + r) * W + ow * stride + c];
        dst[oh * OW + ow] = acc * inv;
      }
  }
  return x.graph()->op_node(
      Shape{static_cast<int>(B), static_cast<int>(C), static_cast<int>(OH), static_cast<int>(OW)},
      std::move(out), "avg_pool", {x.node_ptr()}, [B, C, H, W, OH, OW, k, stride, inv](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          double* pg = p.grad.data() + bc * H * W;
          const double* g = nd.grad.data() + bc * OH * OW;
          for (std::int64_t oh = 0; oh < OH; ++oh)
            for (std::int64_t ow = 0; ow < OW; ++ow) {
              double gv = g[oh * OW + ow] * inv;
              for (int r = 0; r < k; ++r)
                for (int c = 0; c < k; ++c) pg[(oh * stride + r) * W + ow * stride + c] += gv;
            }
        }
      });
}

Tensor max_pool(const Tensor& x, int k, int stride) {
  if (x.rank() != 4) fail("max_pool: expects B*C*H*W, got " + shape_str(x.shape()));
  std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k < 1 || k > H || k > W) fail("max_pool: window " + std::to_string(k) + " exceeds input");
  std::int64_t OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(B * C * OH * OW));
  std::vector<std::int64_t> arg(out.size());
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = xd.data() + bc * H * W;
    for (std::int64_t oh = 0; oh < OH; ++oh)
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        double best = src[(oh * stride) * W + ow * stride];
        std::int64_t bi = (oh * stride) * W + ow * stride;
        for (int r = 0; r < k; ++r)
          for (int c = 0; c < k; ++c) {
            std::int64_t i = (oh * stride + r) * W + ow * stride + c;
            if (src[i] > best) {
              best = src[i];
              bi = i;
            }
          }
        out[bc * OH * OW + oh * OW + ow] = best;
        arg[bc * OH * OW + oh * OW + ow] = bi;
      }
  }
  return x.graph()->op_node(
      Shape{static_cast<int>(B), static_cast<int>(C), static_cast<int>(OH), static_cast<int>(OW)},
      std::move(out), "max_pool", {x.node_ptr()},
      [B, C, H, W, OH, OW, arg = std::move(arg)](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          const double* g = nd.grad.data() + bc * OH * OW;
          for (std::int64_t i = 0; i < OH * OW; ++i)
            p.grad[bc * H * W + arg[bc * OH * OW + i]] += g[i];
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) fail("global_avg_pool: expects B*C*H*W, got " + shape_str(x.shape()));
  std::int64_t B = x.dim(0), C = x.dim(1), hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(B * C));
  double inv = 1.0 / static_cast<double>(hw);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    const double* src = xd.data() + bc * hw;
    for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
    out[bc] = acc * inv;
  }
  return x.graph()->op_node(Shape{static_cast<int>(B), static_cast<int>(C)}, std::move(out),
                            "global_avg_pool", {x.node_ptr()}, [B, C, hw, inv](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::int64_t bc = 0; bc < B * C; ++bc) {
                                double gv = nd.grad[bc] * inv;
                                double* pg = p.grad.data() + bc * hw;
                                for (std::int64_t i = 0; i < hw; ++i) pg[i] += gv;
                              }
                            });
}

Tensor global_max_pool(const Tensor& x) {
  if (x.rank() != 4) fail("global_max_pool: expects B*C*H*W, got " + shape_str(x.shape()));
  std::int64_t B = x.dim(0), C = x.dim(1), hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  const auto& xd = x.data();
  std::vector<double> out(static_cast<size_t>(B * C));
  std::vector<std::int64_t> arg(out.size());
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = xd.data() + bc * hw;
    double best = src[0];
    std::int64_t bi = 0;
    for (std::int64_t i = 1; i < hw; ++i)
      if (src[i] > best) {
        best = src[i];
        bi = i;
      }
    out[bc] = best;
    arg[bc] = bi;
  }
  return x.graph()->op_node(Shape{static_cast<int>(B), static_cast<int>(C)}, std::move(out),
                            "global_max_pool", {x.node_ptr()},
                            [B, C, hw, arg = std::move(arg)](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::int64_t bc = 0; bc < B * C; ++bc)
                                p.grad[bc * hw + arg[bc]] += nd.grad[bc];
                            });
}

// Zero-padded bilinear interpolation; corners outside the image contribute 0,
// matching conv2d zero padding when coordinates are integral.
Tensor bilinear_sample(const Tensor& img, const Tensor& xs, const Tensor& ys) {
  if (img.rank() != 4) fail("bilinear_sample: image must be B*C*H*W");
  if (xs.shape() != ys.shape() || xs.rank() != 2 || xs.dim(0) != img.dim(0))
    fail("bilinear_sample: coords must both be B*N, got " + shape_str(xs.shape()) + " and " +
         shape_str(ys.shape()));
  std::int64_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  std::int64_t N = xs.dim(1);
  const auto& id = img.data();
  const auto& xd = xs.data();
  const auto& yd = ys.data();
  std::vector<double> out(static_cast<size_t>(B * C * N));
  auto pixel = [&](std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) -> double {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return id[((b * C + c) * H + y) * W + x];
  };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t n = 0; n < N; ++n) {
      double fx = xd[b * N + n], fy = yd[b * N + n];
      std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
      std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
      double wx = fx - static_cast<double>(x0), wy = fy - static_cast<double>(y0);
      for (std::int64_t c = 0; c < C; ++c) {
        double v00 = pixel(b, c, y0, x0), v01 = pixel(b, c, y0, x0 + 1);
        double v10 = pixel(b, c, y0 + 1, x0), v11 = pixel(b, c, y0 + 1, x0 + 1);
        out[(b * C + c) * N + n] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                   wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  return img.graph()->op_node(
      Shape{static_cast<int>(B), static_cast<int>(C), static_cast<int>(N)}, std::move(out),
      "bilinear_sample", {img.node_ptr(), xs.node_ptr(), ys.node_ptr()},
      [B, C, H, W, N](Node& nd) {
        Node& pi = *nd.parents[0];
        Node& px = *nd.parents[1];
        Node& py = *nd.parents[2];
        if (pi.requires_grad) pi.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        if (py.requires_grad) py.ensure_grad();
        auto pixel = [&](std::int64_t b, std::int64_t c, std::int64_t y,
                         std::int64_t x) -> double {
          if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
          return pi.data[((b * C + c) * H + y) * W + x];
        };
        auto scatter = [&](std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x,
                           double g) {
          if (y < 0 || y >= H || x < 0 || x >= W) return;
          pi.grad[((b * C + c) * H + y) * W + x] += g;
        };
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t n = 0; n < N; ++n) {
            double fx = px.data[b * N + n], fy = py.data[b * N + n];
            std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
            std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
            double wx = fx - static_cast<double>(x0), wy = fy - static_cast<double>(y0);
            double gx = 0.0, gy = 0.0;
            for (std::int64_t c = 0; c < C; ++c) {
              double g = nd.grad[(b * C + c) * N + n];
              if (g == 0.0 && !px.requires_grad && !py.requires_grad) continue;
              double v00 = pixel(b, c, y0, x0), v01 = pixel(b, c, y0, x0 + 1);
              double v10 = pixel(b, c, y0 + 1, x0), v11 = pixel(b, c, y0 + 1, x0 + 1);
              if (pi.requires_grad) {
                scatter(b, c, y0, x0, g * (1 - wy) * (1 - wx));
                scatter(b, c, y0, x0 + 1, g * (1 - wy) * wx);
                scatter(b, c, y0 + 1, x0, g * wy * (1 - wx));
                scatter(b, c, y0 + 1, x0 + 1, g * wy * wx);
              }
              gx += g * ((1 - wy) * (v01 - v00) + wy * (v11 - v10));
              gy += g * ((1 - wx) * (v10 - v00) + wx * (v11 - v01));
            }
            if (px.requires_grad) px.grad[b * N + n] += gx;
            if (py.requires_grad) py.grad[b * N + n] += gy;
          }
      });
}

}  // namespace dsmoe
