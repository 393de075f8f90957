// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dsmoe/rng.hpp"

namespace dsmoe::det {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
constexpr double kPi = 3.14159265358979323846;
}  // namespace

void Box::validate() const {
  if (cx < 0.0 || cx > 1.0 || cy < 0.0 || cy > 1.0)
    fail("box: center (" + std::to_string(cx) + ", " + std::to_string(cy) + ") outside [0,1]");
  if (w <= 0.0 || w > 1.0 || h <= 0.0 || h > 1.0)
    fail("box: size (" + std::to_string(w) + ", " + std::to_string(h) + ") outside (0,1]");
}

double iou(const Box& a, const Box& b) {
  double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  double inter = ix * iy;
  double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou_wh(double w1, double h1, double w2, double h2) {
  double inter = std::min(w1, w2) * std::min(h1, h2);
  double uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double ciou_loss(const Box& pred, const Box& gt) {
  if (pred.cx == gt.cx && pred.cy == gt.cy && pred.w == gt.w && pred.h == gt.h) return 0.0;
  double i = iou(pred, gt);
  double rho2 = (pred.cx - gt.cx) * (pred.cx - gt.cx) + (pred.cy - gt.cy) * (pred.cy - gt.cy);
  double ex1 = std::min(pred.x1(), gt.x1()), ex2 = std::max(pred.x2(), gt.x2());
  double ey1 = std::min(pred.y1(), gt.y1()), ey2 = std::max(pred.y2(), gt.y2());
  double c2 = (ex2 - ex1) * (ex2 - ex1) + (ey2 - ey1) * (ey2 - ey1);
  if (c2 <= 0.0) return 0.0;  // identical degenerate boxes
  double v = 4.0 / (kPi * kPi) *
             std::pow(std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h), 2.0);
  double alpha = v / std::max(1.0 - i + v, 1e-12);
  return 1.0 - i + rho2 / c2 + alpha * v;
}

double qfocal(double y, double sigma, double alpha, double beta_exp) {
  if (sigma <= 0.0 || sigma >= 1.0)
    fail("qfocal: sigma " + std::to_string(sigma) + " must lie strictly in (0,1)");
  double alpha_t = y * alpha + (1.0 - y) * (1.0 - alpha);
  double mod = std::pow(std::fabs(y - sigma), beta_exp);
  double ce = (1.0 - y) * std::log(1.0 - sigma) + y * std::log(sigma);
  return -alpha_t * mod * ce;
}

namespace {
Tensor col(const Tensor& m, int j) { return slice(m, 1, j, 1); }
}  // namespace

Tensor iou_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2 || a.dim(1) != 4)
    fail("iou_rows: expected matching N x 4 tensors, got " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));
  Tensor ax1 = sub(col(a, 0), mul_scalar(col(a, 2), 0.5));
  Tensor ax2 = add(col(a, 0), mul_scalar(col(a, 2), 0.5));
  Tensor ay1 = sub(col(a, 1), mul_scalar(col(a, 3), 0.5));
  Tensor ay2 = add(col(a, 1), mul_scalar(col(a, 3), 0.5));
  Tensor bx1 = sub(col(b, 0), mul_scalar(col(b, 2), 0.5));
  Tensor bx2 = add(col(b, 0), mul_scalar(col(b, 2), 0.5));
  Tensor by1 = sub(col(b, 1), mul_scalar(col(b, 3), 0.5));
  Tensor by2 = add(col(b, 1), mul_scalar(col(b, 3), 0.5));
  Tensor ix = maximum_scalar(sub(minimum(ax2, bx2), maximum(ax1, bx1)), 0.0);
  Tensor iy = maximum_scalar(sub(minimum(ay2, by2), maximum(ay1, by1)), 0.0);
  Tensor inter = mul(ix, iy);
  Tensor uni = sub(add(mul(col(a, 2), col(a, 3)), mul(col(b, 2), col(b, 3))), inter);
  return div(inter, maximum_scalar(uni, 1e-12));
}

Tensor ciou_loss_rows(const Tensor& pred, const Tensor& gt) {
  Tensor i = iou_rows(pred, gt);
  Tensor dx = sub(col(pred, 0), col(gt, 0));
  Tensor dy = sub(col(pred, 1), col(gt, 1));
  Tensor rho2 = add(mul(dx, dx), mul(dy, dy));
  Tensor px1 = sub(col(pred, 0), mul_scalar(col(pred, 2), 0.5));
  Tensor px2 = add(col(pred, 0), mul_scalar(col(pred, 2), 0.5));
  Tensor py1 = sub(col(pred, 1), mul_scalar(col(pred, 3), 0.5));
  Tensor py2 = add(col(pred, 1), mul_scalar(col(pred, 3), 0.5));
  Tensor gx1 = sub(col(gt, 0), mul_scalar(col(gt, 2), 0.5));
  Tensor gx2 = add(col(gt, 0), mul_scalar(col(gt, 2), 0.5));
  Tensor gy1 = sub(col(gt, 1), mul_scalar(col(gt, 3), 0.5));
  Tensor gy2 = add(col(gt, 1), mul_scalar(col(gt, 3), 0.5));
  Tensor ew = sub(maximum(px2, gx2), minimum(px1, gx1));
  Tensor eh = sub(maximum(py2, gy2), minimum(py1, gy1));
  Tensor c2 = maximum_scalar(add(mul(ew, ew), mul(eh, eh)), 1e-12);
  Tensor d_atan = sub(atan(div(col(gt, 2), col(gt, 3))), atan(div(col(pred, 2), col(pred, 3))));
  Tensor v = mul_scalar(mul(d_atan, d_atan), 4.0 / (kPi * kPi));
  Tensor one_minus_iou = add_scalar(neg(i), 1.0);
  Tensor alpha = div(v, maximum_scalar(add(one_minus_iou, v), 1e-12));
  return add(add(one_minus_iou, div(rho2, c2)), mul(alpha, v));
}

Tensor qfocal_t(const Tensor& sigma, const Tensor& y, double alpha, double beta_exp) {
  if (sigma.shape() != y.shape())
    fail("qfocal: shape mismatch " + shape_str(sigma.shape()) + " vs " + shape_str(y.shape()));
  for (double v : sigma.data())
    if (v <= 0.0 || v >= 1.0) fail("qfocal: sigma outside (0,1); clamp upstream");
  Tensor alpha_t = add_scalar(mul_scalar(y, 2.0 * alpha - 1.0), 1.0 - alpha);
  Tensor mod = power(abs_val(sub(y, sigma)), beta_exp);
  Tensor one_minus_y = add_scalar(neg(y), 1.0);
  Tensor ce = add(mul(one_minus_y, log(add_scalar(neg(sigma), 1.0))), mul(y, log(sigma)));
  return neg(mul(mul(alpha_t, mod), ce));
}

void AnchorSet::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) fail("anchors: cannot write " + path);
  f.precision(17);
  for (size_t i = 0; i < anchors.size(); ++i)
    f << (static_cast<int>(i) / per_scale) << " " << anchors[i].first << " "
      << anchors[i].second << "\n";
}

AnchorSet AnchorSet::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("anchors: cannot open " + path);
  AnchorSet set;
  std::string line;
  int max_scale = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int scale;
    double w, h;
    if (!(ls >> scale >> w >> h)) fail("anchors: malformed line '" + line + "'");
    set.anchors.emplace_back(w, h);
    max_scale = std::max(max_scale, scale);
  }
  if (set.anchors.empty()) fail("anchors: empty file " + path);
  set.per_scale = static_cast<int>(set.anchors.size()) / (max_scale + 1);
  return set;
}

KmeansResult kmeans_anchors(const std::vector<std::pair<double, double>>& boxes, int n_anchors,
                            std::uint64_t seed, int per_scale, int max_iters) {
  if (static_cast<int>(boxes.size()) < n_anchors)
    fail("kmeans_anchors: " + std::to_string(boxes.size()) + " boxes for " +
         std::to_string(n_anchors) + " anchors");
  Rng rng(seed);
  // seeded init: sample without replacement
  std::vector<int> pool(boxes.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<std::pair<double, double>> centers;
  for (int i = 0; i < n_anchors; ++i) {
    int j = rng.uniform_int(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    centers.push_back(boxes[static_cast<size_t>(pool[static_cast<size_t>(i)])]);
  }

  auto dist = [&](const std::pair<double, double>& b, const std::pair<double, double>& c) {
    return 1.0 - iou_wh(b.first, b.second, c.first, c.second);
  };
  auto cluster_cost = [&](const std::vector<int>& members,
                          const std::pair<double, double>& c) {
    double total = 0.0;
    for (int m : members) total += dist(boxes[static_cast<size_t>(m)], c);
    return total;
  };

  KmeansResult res;
  std::vector<int> assign(boxes.size(), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    std::vector<std::vector<int>> members(static_cast<size_t>(n_anchors));
    for (size_t b = 0; b < boxes.size(); ++b) {
      int best = 0;
      double bd = dist(boxes[b], centers[0]);
      for (int c = 1; c < n_anchors; ++c) {
        double d = dist(boxes[b], centers[static_cast<size_t>(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[b] != best) {
        assign[b] = best;
        changed = true;
      }
      members[static_cast<size_t>(best)].push_back(static_cast<int>(b));
    }
    // guarded mean update: keep the old center when the mean would worsen
    // the cluster, which keeps the objective monotone under the IoU metric
    for (int c = 0; c < n_anchors; ++c) {
      auto& mem = members[static_cast<size_t>(c)];
      if (mem.empty()) continue;
      double mw = 0.0, mh = 0.0;
      for (int m : mem) {
        mw += boxes[static_cast<size_t>(m)].first;
        mh += boxes[static_cast<size_t>(m)].second;
      }
      std::pair<double, double> mean_center{mw / mem.size(), mh / mem.size()};
      if (cluster_cost(mem, mean_center) <= cluster_cost(mem, centers[static_cast<size_t>(c)]))
        centers[static_cast<size_t>(c)] = mean_center;
    }
    double obj = 0.0;
    for (size_t b = 0; b < boxes.size(); ++b)
      obj += dist(boxes[b], centers[static_cast<size_t>(assign[b])]);
    // reassignment after the update can only lower it further; record the
    // end-of-iteration objective under fresh assignments
    double obj_fresh = 0.0;
    for (size_t b = 0; b < boxes.size(); ++b) {
      double bd = dist(boxes[b], centers[0]);
      for (int c = 1; c < n_anchors; ++c)
        bd = std::min(bd, dist(boxes[b], centers[static_cast<size_t>(c)]));
      obj_fresh += bd;
    }
    (void)obj;
    res.objective.push_back(obj_fresh / static_cast<double>(boxes.size()));
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;
  }
  std::sort(centers.begin(), centers.end(), [](const auto& a, const auto& b) {
    return a.first * a.second < b.first * b.second;
  });
  res.set.anchors = centers;
  res.set.per_scale = per_scale;
  return res;
}

}  // namespace dsmoe::det
