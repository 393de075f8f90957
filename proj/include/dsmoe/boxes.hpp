// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_BOXES_HPP
#define DSMOE_BOXES_HPP

#include <string>
#include <vector>

#include "dsmoe/tensor.hpp"

namespace dsmoe::det {

// Relative center-form box, coordinates in [0,1].
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
  void validate() const;
  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
};

double iou(const Box& a, const Box& b);
// boxes anchored at the origin, the k-means metric
double iou_wh(double w1, double h1, double w2, double h2);

double ciou_loss(const Box& pred, const Box& gt);

// y in [0,1] after smoothing, sigma strictly inside (0,1)
double qfocal(double y, double sigma, double alpha, double beta_exp);

// ---- tensor (differentiable) forms ----
// boxes as N x 4 rows (cx, cy, w, h)
Tensor iou_rows(const Tensor& a, const Tensor& b);        // N x 1
Tensor ciou_loss_rows(const Tensor& pred, const Tensor& gt);  // N x 1
// elementwise over matching shapes; targets y are constants
Tensor qfocal_t(const Tensor& sigma, const Tensor& y, double alpha, double beta_exp);

struct DetectionRecord {
  std::vector<double> class_probs;
  Box box;
  double confidence = 0.0;
};

struct AnchorSet {
  // (w, h) priors sorted by area ascending, split evenly across head scales
  std::vector<std::pair<double, double>> anchors;
  int per_scale = 3;
  int scales() const { return static_cast<int>(anchors.size()) / per_scale; }
  std::pair<double, double> at(int scale, int a) const {
    return anchors[static_cast<size_t>(scale * per_scale + a)];
  }
  void save(const std::string& path) const;  // "scale w h" per line
  static AnchorSet load(const std::string& path);
};

struct KmeansResult {
  AnchorSet set;
  std::vector<double> objective;  // mean (1 - IoU) after each iteration
  int iterations = 0;
};

// Lloyd's iterations under the 1 - IoU metric, seeded sample-without-
// replacement init; a mean update is kept only when it does not worsen its
// cluster so the objective is non-increasing.
KmeansResult kmeans_anchors(const std::vector<std::pair<double, double>>& boxes, int n_anchors,
                            std::uint64_t seed, int per_scale = 3, int max_iters = 300);

}  // namespace dsmoe::det

#endif
