// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_METRICS_HPP
#define DSMOE_METRICS_HPP

#include <string>
#include <vector>

#include "dsmoe/boxes.hpp"

namespace dsmoe::det {

struct Prediction {
  int image_id = 0;
  int class_id = 0;
  double confidence = 0.0;
  Box box;
};

struct GroundTruth {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

// greedy confidence-ordered suppression per image and class
std::vector<Prediction> nms(std::vector<Prediction> preds, double iou_threshold = 0.5);

// all-point interpolated AP for one class at one IoU threshold
double average_precision(const std::vector<Prediction>& preds,
                         const std::vector<GroundTruth>& gts, int class_id,
                         double iou_threshold);

struct EvalSummary {
  double map50 = 0.0;
  double map5095 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool no_predictions = false;  // precision undefined, reported as 0
  std::vector<double> per_class_ap50;   // indexed by class id
  std::vector<int> per_class_gt_count;
  double latency_ms_per_image = 0.0;
  double activated_gflops = 0.0;
  int images = 0;
};

// predictions are NMS'd internally; P/R/F1 use the given confidence floor
EvalSummary evaluate_detections(const std::vector<Prediction>& raw_preds,
                                const std::vector<GroundTruth>& gts, int n_classes,
                                double conf_threshold = 0.25);

}  // namespace dsmoe::det

#endif
