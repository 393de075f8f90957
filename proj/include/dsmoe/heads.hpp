// SPDX-License-Identifier: Apache-2.0
//
// Head pipeline: CBS normalization, C2F fusion with a shallow skip, and the
// decoupled classification / localization head with anchor-based decoding.
#ifndef DSMOE_HEADS_HPP
#define DSMOE_HEADS_HPP

#include <string>
#include <vector>

#include "dsmoe/boxes.hpp"
#include "dsmoe/params.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe::det {

class Cbs {
 public:
  Cbs(Graph& g, ParamRegistry& reg, const std::string& name, int c_in, int c_out, Rng& rng);
  Tensor forward(const Tensor& x) const;  // 3x3 conv -> batch norm -> SiLU

 private:
  Tensor w_, b_, bn_gain_, bn_bias_;
};

class C2f {
 public:
  C2f(Graph& g, ParamRegistry& reg, const std::string& name, int c_in, int c_out, Rng& rng);
  // inputs concatenated on channels; spatial dims must match
  Tensor forward(const Tensor& f_norm, const Tensor& f_shallow) const;
  int hidden() const { return hidden_; }

 private:
  Tensor bottleneck(const Tensor& x, int i) const;
  int c_in_, c_out_, hidden_;
  Tensor pre_w_, pre_b_;    // 1x1 to 2*hidden
  Tensor b1a_w_, b1a_b_, b1b_w_, b1b_b_, b1_scale_;
  Tensor b2a_w_, b2a_b_, b2b_w_, b2b_b_, b2_scale_;
  Tensor fuse_w_, fuse_b_;  // 1x1 over 4*hidden
};

struct HeadOutput {
  Tensor cls_logits;   // B x (A*C) x H x W
  Tensor box_raw;      // B x (A*5) x H x W: tx, ty, tw, th, conf per anchor
  int n_anchors = 0;
  int n_classes = 0;
};

class DecoupledHead {
 public:
  DecoupledHead(Graph& g, ParamRegistry& reg, const std::string& name, int c_in, int n_classes,
                int n_anchors, Rng& rng);
  HeadOutput forward(const Tensor& f_fuse) const;

 private:
  int c_in_, n_classes_, n_anchors_;
  Tensor cls1_w_, cls1_b_, cls2_w_, cls2_b_;
  Tensor box1_w_, box1_b_, box2_w_, box2_b_;
};

// decode raw head values at one scale into records, one per (cell, anchor)
std::vector<DetectionRecord> decode_head(const HeadOutput& out, const AnchorSet& anchors,
                                         int scale, int batch_index);

struct BoxTarget {
  int cell_y = 0, cell_x = 0, anchor = 0, scale = 0, class_id = 0;
  Box gt;
  double tx = 0, ty = 0, tw = 0, th = 0;  // encoded regression targets
};

// encode a ground-truth box against a grid cell + anchor prior; exact
// inverse of the decode used in decode_head
BoxTarget encode_box(const Box& gt, int class_id, const AnchorSet& anchors, int scale,
                     int grid_h, int grid_w);
Box decode_box(double tx, double ty, double tw, double th, int cell_y, int cell_x, int grid_h,
               int grid_w, double anchor_w, double anchor_h);

// picks the (scale, anchor) prior with the highest IoU against the box
struct Assignment {
  int scale = 0, anchor = 0;
  double iou = 0.0;
};
Assignment assign_anchor(const Box& gt, const AnchorSet& anchors);

struct TotalLossBreakdown {
  Tensor total;
  double cls_mean = 0.0, conf_mean = 0.0, box_mean = 0.0, align = 0.0;
  bool empty_positives = false;
};

// 2*0.45 * mean(QFL over classification and confidence jointly)
// + 0.05 * mean(CIoU over positives) - lambda_align * L_align
TotalLossBreakdown total_loss(const Tensor& cls_qfl, const Tensor& conf_qfl,
                              const Tensor* box_ciou, const Tensor* align,
                              double lambda_align);

}  // namespace dsmoe::det

#endif
