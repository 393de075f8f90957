// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace dsmoe::det {

namespace {

// deterministic confidence ordering: ties resolved by image, then box
bool conf_order(const Prediction& a, const Prediction& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  return a.box.cy < b.box.cy;
}

}  // namespace

std::vector<Prediction> nms(std::vector<Prediction> preds, double iou_threshold) {
  std::stable_sort(preds.begin(), preds.end(), conf_order);
  std::vector<Prediction> kept;
  for (const auto& p : preds) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.image_id != p.image_id || k.class_id != p.class_id) continue;
      if (iou(k.box, p.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

double average_precision(const std::vector<Prediction>& preds,
                         const std::vector<GroundTruth>& gts, int class_id,
                         double iou_threshold) {
  std::vector<Prediction> cls_preds;
  for (const auto& p : preds)
    if (p.class_id == class_id) cls_preds.push_back(p);
  std::stable_sort(cls_preds.begin(), cls_preds.end(), conf_order);

  std::map<int, std::vector<int>> gt_by_image;  // image -> indices into gts
  int n_gt = 0;
  for (size_t i = 0; i < gts.size(); ++i)
    if (gts[i].class_id == class_id) {
      gt_by_image[gts[i].image_id].push_back(static_cast<int>(i));
      ++n_gt;
    }
  if (n_gt == 0) return 0.0;

  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& p : cls_preds) {
    double best_iou = 0.0;
    int best_gt = -1;
    auto it = gt_by_image.find(p.image_id);
    if (it != gt_by_image.end()) {
      for (int gi : it->second) {
        if (matched[static_cast<size_t>(gi)]) continue;
        double i = iou(p.box, gts[static_cast<size_t>(gi)].box);
        if (i > best_iou) {
          best_iou = i;
          best_gt = gi;
        }
      }
    }
    if (best_gt >= 0 && best_iou >= iou_threshold) {
      matched[static_cast<size_t>(best_gt)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / n_gt);
  }
  if (precision.empty()) return 0.0;

  // area under the exact precision-recall staircase: reverse cumulative
  // maximum of precision, summed over recall increments
  std::vector<double> p_int(precision.size());
  double running = 0.0;
  for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
    running = std::max(running, precision[static_cast<size_t>(i)]);
    p_int[static_cast<size_t>(i)] = running;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * p_int[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalSummary evaluate_detections(const std::vector<Prediction>& raw_preds,
                                const std::vector<GroundTruth>& gts, int n_classes,
                                double conf_threshold) {
  EvalSummary s;
  std::vector<Prediction> preds = nms(raw_preds, 0.5);

  s.per_class_ap50.assign(static_cast<size_t>(n_classes), 0.0);
  s.per_class_gt_count.assign(static_cast<size_t>(n_classes), 0);
  for (const auto& g : gts)
    if (g.class_id >= 0 && g.class_id < n_classes)
      ++s.per_class_gt_count[static_cast<size_t>(g.class_id)];

  // mAP@.5 and mAP@.5:.95 over exactly ten thresholds spaced 0.05 apart
  int classes_with_gt = 0;
  double map50_sum = 0.0, map5095_sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    if (s.per_class_gt_count[static_cast<size_t>(c)] == 0) continue;
    ++classes_with_gt;
    double ap50 = average_precision(preds, gts, c, 0.5);
    s.per_class_ap50[static_cast<size_t>(c)] = ap50;
    map50_sum += ap50;
    double acc = 0.0;
    for (int t = 0; t < 10; ++t)
      acc += average_precision(preds, gts, c, (50 + 5 * t) / 100.0);
    map5095_sum += acc / 10.0;
  }
  if (classes_with_gt > 0) {
    s.map50 = map50_sum / classes_with_gt;
    s.map5095 = map5095_sum / classes_with_gt;
  }

  // P / R / F1 at the confidence floor
  std::vector<Prediction> conf_preds;
  for (const auto& p : preds)
    if (p.confidence >= conf_threshold) conf_preds.push_back(p);
  std::stable_sort(conf_preds.begin(), conf_preds.end(), conf_order);
  std::vector<bool> matched(gts.size(), false);
  int tp = 0, fp = 0;
  for (const auto& p : conf_preds) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (matched[gi] || gts[gi].image_id != p.image_id || gts[gi].class_id != p.class_id)
        continue;
      double i = iou(p.box, gts[gi].box);
      if (i > best_iou) {
        best_iou = i;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0 && best_iou >= 0.5) {
      matched[static_cast<size_t>(best_gt)] = true;
      ++tp;
    } else {
      ++fp;
    }
  }
  if (conf_preds.empty()) {
    s.no_predictions = true;
    s.precision = 0.0;
  } else {
    s.precision = static_cast<double>(tp) / (tp + fp);
  }
  s.recall = gts.empty() ? 0.0 : static_cast<double>(tp) / gts.size();
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

}  // namespace dsmoe::det
