// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace dsmoe::det {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double sigmoid_d(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
double logit_d(double p) { return std::log(p / (1.0 - p)); }

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  Conv2dOpts o;
  return conv2d(x, w, &b, o);
}
}  // namespace

Cbs::Cbs(Graph& g, ParamRegistry& reg, const std::string& name, int c_in, int c_out, Rng& rng) {
  w_ = reg.make_normal(g, name + ".w", {c_out, c_in, 3, 3}, rng, std::sqrt(2.0 / (9.0 * c_in)));
  b_ = reg.make_fill(g, name + ".b", {c_out}, 0.0);
  bn_gain_ = reg.make_fill(g, name + ".bn_gain", {c_out}, 1.0);
  bn_bias_ = reg.make_fill(g, name + ".bn_bias", {c_out}, 0.0);
}

Tensor Cbs::forward(const Tensor& x) const {
  Conv2dOpts o;
  o.pad_h = o.pad_w = 1;
  return silu(batch_norm(conv2d(x, w_, &b_, o), bn_gain_, bn_bias_));
}

C2f::C2f(Graph& g, ParamRegistry& reg, const std::string& name, int c_in, int c_out, Rng& rng)
    : c_in_(c_in), c_out_(c_out), hidden_(std::max(2, c_out / 2)) {
  auto cstd = [](int fan) { return std::sqrt(2.0 / fan); };
  pre_w_ = reg.make_normal(g, name + ".pre_w", {2 * hidden_, c_in, 1, 1}, rng, cstd(c_in));
  pre_b_ = reg.make_fill(g, name + ".pre_b", {2 * hidden_}, 0.0);
  b1a_w_ = reg.make_normal(g, name + ".b1a_w", {hidden_, hidden_, 3, 3}, rng, cstd(9 * hidden_));
  b1a_b_ = reg.make_fill(g, name + ".b1a_b", {hidden_}, 0.0);
  b1b_w_ = reg.make_normal(g, name + ".b1b_w", {hidden_, hidden_, 3, 3}, rng, cstd(9 * hidden_));
  b1b_b_ = reg.make_fill(g, name + ".b1b_b", {hidden_}, 0.0);
  b1_scale_ = reg.make_fill(g, name + ".b1_scale", {1}, 1.0);
  b2a_w_ = reg.make_normal(g, name + ".b2a_w", {hidden_, hidden_, 3, 3}, rng, cstd(9 * hidden_));
  b2a_b_ = reg.make_fill(g, name + ".b2a_b", {hidden_}, 0.0);
  b2b_w_ = reg.make_normal(g, name + ".b2b_w", {hidden_, hidden_, 3, 3}, rng, cstd(9 * hidden_));
  b2b_b_ = reg.make_fill(g, name + ".b2b_b", {hidden_}, 0.0);
  b2_scale_ = reg.make_fill(g, name + ".b2_scale", {1}, 1.0);
  fuse_w_ = reg.make_normal(g, name + ".fuse_w", {c_out, 4 * hidden_, 1, 1}, rng,
                            cstd(4 * hidden_));
  fuse_b_ = reg.make_fill(g, name + ".fuse_b", {c_out}, 0.0);
}

Tensor C2f::bottleneck(const Tensor& x, int i) const {
  const Tensor& wa = i == 0 ? b1a_w_ : b2a_w_;
  const Tensor& ba = i == 0 ? b1a_b_ : b2a_b_;
  const Tensor& wb = i == 0 ? b1b_w_ : b2b_w_;
  const Tensor& bb = i == 0 ? b1b_b_ : b2b_b_;
  const Tensor& sc = i == 0 ? b1_scale_ : b2_scale_;
  Conv2dOpts o;
  o.pad_h = o.pad_w = 1;
  Tensor inner = conv2d(silu(conv2d(x, wa, &ba, o)), wb, &bb, o);
  Tensor scaled = mul(inner, expand(reshape(sc, {1, 1, 1, 1}), inner.shape()));
  return add(x, scaled);
}

Tensor C2f::forward(const Tensor& f_norm, const Tensor& f_shallow) const {
  if (f_norm.dim(2) != f_shallow.dim(2) || f_norm.dim(3) != f_shallow.dim(3))
    fail("c2f: spatial mismatch " + shape_str(f_norm.shape()) + " vs " +
         shape_str(f_shallow.shape()));
  Tensor x = concat({f_norm, f_shallow}, 1);
  if (x.dim(1) != c_in_)
    fail("c2f: expected " + std::to_string(c_in_) + " concatenated channels, got " +
         std::to_string(x.dim(1)));
  Tensor pre = conv1x1(x, pre_w_, pre_b_);
  Tensor a = slice(pre, 1, 0, hidden_);
  Tensor b = slice(pre, 1, hidden_, hidden_);
  Tensor y1 = bottleneck(b, 0);
  Tensor y2 = bottleneck(y1, 1);
  return conv1x1(concat({a, b, y1, y2}, 1), fuse_w_, fuse_b_);
}

DecoupledHead::DecoupledHead(Graph& g, ParamRegistry& reg, const std::string& name, int c_in,
                             int n_classes, int n_anchors, Rng& rng)
    : c_in_(c_in), n_classes_(n_classes), n_anchors_(n_anchors) {
  auto cstd = [](int fan) { return std::sqrt(2.0 / fan); };
  cls1_w_ = reg.make_normal(g, name + ".cls1_w", {c_in, c_in, 1, 1}, rng, cstd(c_in));
  cls1_b_ = reg.make_fill(g, name + ".cls1_b", {c_in}, 0.0);
  cls2_w_ = reg.make_normal(g, name + ".cls2_w", {n_anchors * n_classes, c_in, 1, 1}, rng,
                            cstd(c_in));
  cls2_b_ = reg.make_fill(g, name + ".cls2_b", {n_anchors * n_classes}, 0.0);
  box1_w_ = reg.make_normal(g, name + ".box1_w", {c_in, c_in, 1, 1}, rng, cstd(c_in));
  box1_b_ = reg.make_fill(g, name + ".box1_b", {c_in}, 0.0);
  box2_w_ = reg.make_normal(g, name + ".box2_w", {n_anchors * 5, c_in, 1, 1}, rng, cstd(c_in));
  // confidence starts pessimistic so early mining is stable
  std::vector<double> bb(static_cast<size_t>(n_anchors) * 5, 0.0);
  for (int a = 0; a < n_anchors; ++a) bb[static_cast<size_t>(a * 5 + 4)] = -2.0;
  box2_b_ = reg.make(g, name + ".box2_b", {n_anchors * 5}, std::move(bb));
}

HeadOutput DecoupledHead::forward(const Tensor& f_fuse) const {
  if (f_fuse.dim(1) != c_in_)
    fail("decoupled head: expected " + std::to_string(c_in_) + " channels, got " +
         shape_str(f_fuse.shape()));
  HeadOutput out;
  out.cls_logits = conv1x1(silu(conv1x1(f_fuse, cls1_w_, cls1_b_)), cls2_w_, cls2_b_);
  out.box_raw = conv1x1(silu(conv1x1(f_fuse, box1_w_, box1_b_)), box2_w_, box2_b_);
  out.n_anchors = n_anchors_;
  out.n_classes = n_classes_;
  return out;
}

Box decode_box(double tx, double ty, double tw, double th, int cell_y, int cell_x, int grid_h,
               int grid_w, double anchor_w, double anchor_h) {
  Box b;
  b.cx = (cell_x + sigmoid_d(tx)) / grid_w;
  b.cy = (cell_y + sigmoid_d(ty)) / grid_h;
  b.w = std::min(1.0, anchor_w * std::exp(std::min(tw, 8.0)));
  b.h = std::min(1.0, anchor_h * std::exp(std::min(th, 8.0)));
  b.w = std::max(b.w, 1e-6);
  b.h = std::max(b.h, 1e-6);
  return b;
}

std::vector<DetectionRecord> decode_head(const HeadOutput& out, const AnchorSet& anchors,
                                         int scale, int batch_index) {
  int H = out.box_raw.dim(2), W = out.box_raw.dim(3);
  int A = out.n_anchors, C = out.n_classes;
  std::vector<DetectionRecord> recs;
  recs.reserve(static_cast<size_t>(H * W * A));
  const auto& box = out.box_raw.data();
  const auto& cls = out.cls_logits.data();
  auto bidx = [&](int ch, int y, int x) {
    return ((static_cast<std::int64_t>(batch_index) * out.box_raw.dim(1) + ch) * H + y) * W + x;
  };
  auto cidx = [&](int ch, int y, int x) {
    return ((static_cast<std::int64_t>(batch_index) * out.cls_logits.dim(1) + ch) * H + y) * W +
           x;
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int a = 0; a < A; ++a) {
        auto prior = anchors.at(scale, a);
        DetectionRecord r;
        r.box = decode_box(box[static_cast<size_t>(bidx(a * 5 + 0, y, x))],
                           box[static_cast<size_t>(bidx(a * 5 + 1, y, x))],
                           box[static_cast<size_t>(bidx(a * 5 + 2, y, x))],
                           box[static_cast<size_t>(bidx(a * 5 + 3, y, x))], y, x, H, W,
                           prior.first, prior.second);
        r.confidence = sigmoid_d(box[static_cast<size_t>(bidx(a * 5 + 4, y, x))]);
        r.class_probs.resize(static_cast<size_t>(C));
        for (int c = 0; c < C; ++c)
          r.class_probs[static_cast<size_t>(c)] =
              sigmoid_d(cls[static_cast<size_t>(cidx(a * C + c, y, x))]);
        recs.push_back(std::move(r));
      }
  return recs;
}

Assignment assign_anchor(const Box& gt, const AnchorSet& anchors) {
  Assignment best;
  best.iou = -1.0;
  for (int s = 0; s < anchors.scales(); ++s)
    for (int a = 0; a < anchors.per_scale; ++a) {
      auto prior = anchors.at(s, a);
      double i = iou_wh(gt.w, gt.h, prior.first, prior.second);
      if (i > best.iou) {
        best.iou = i;
        best.scale = s;
        best.anchor = a;
      }
    }
  return best;
}

BoxTarget encode_box(const Box& gt, int class_id, const AnchorSet& anchors, int scale,
                     int grid_h, int grid_w) {
  gt.validate();
  BoxTarget t;
  t.scale = scale;
  t.class_id = class_id;
  t.gt = gt;
  double gx = gt.cx * grid_w, gy = gt.cy * grid_h;
  t.cell_x = std::min(grid_w - 1, static_cast<int>(gx));
  t.cell_y = std::min(grid_h - 1, static_cast<int>(gy));
  double fx = std::min(1.0 - 1e-9, std::max(1e-9, gx - t.cell_x));
  double fy = std::min(1.0 - 1e-9, std::max(1e-9, gy - t.cell_y));
  t.tx = logit_d(fx);
  t.ty = logit_d(fy);
  // anchor chosen by best prior IoU within this scale
  int best_a = 0;
  double best_i = -1.0;
  for (int a = 0; a < anchors.per_scale; ++a) {
    auto prior = anchors.at(scale, a);
    double i = iou_wh(gt.w, gt.h, prior.first, prior.second);
    if (i > best_i) {
      best_i = i;
      best_a = a;
    }
  }
  t.anchor = best_a;
  auto prior = anchors.at(scale, best_a);
  t.tw = std::log(gt.w / prior.first);
  t.th = std::log(gt.h / prior.second);
  return t;
}

TotalLossBreakdown total_loss(const Tensor& cls_qfl, const Tensor& conf_qfl,
                              const Tensor* box_ciou, const Tensor* align,
                              double lambda_align) {
  TotalLossBreakdown out;
  // Eq.-31 weights: 2 * 0.45 = 0.9 on the joint QFL term, 0.05 on CIoU
  Tensor joint = concat({reshape(cls_qfl, {static_cast<int>(cls_qfl.numel())}),
                         reshape(conf_qfl, {static_cast<int>(conf_qfl.numel())})},
                        0);
  Tensor qfl_mean = mean(joint);
  out.cls_mean = mean(cls_qfl).item();
  out.conf_mean = mean(conf_qfl).item();
  Tensor total = mul_scalar(qfl_mean, 2.0 * 0.45);
  if (box_ciou && box_ciou->numel() > 0) {
    Tensor box_mean = mean(*box_ciou);
    out.box_mean = box_mean.item();
    total = add(total, mul_scalar(box_mean, 0.05));
  } else {
    out.empty_positives = true;
  }
  if (align && lambda_align != 0.0) {
    out.align = align->item();
    total = sub(total, mul_scalar(*align, lambda_align));
  }
  out.total = total;
  return out;
}

}  // namespace dsmoe::det
