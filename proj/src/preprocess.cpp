// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dsmoe::harness {

Sample letterbox_to(const Sample& s, int target) {
  if (s.image.w <= 0 || s.image.h <= 0)
    throw std::invalid_argument("letterbox: zero-area image");
  int side = std::max(s.image.w, s.image.h);
  int pad_x = (side - s.image.w) / 2;
  int pad_y = (side - s.image.h) / 2;
  Image canvas = Image::filled(side, side, 0.5);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s.image.h; ++y)
      for (int x = 0; x < s.image.w; ++x)
        canvas.at(c, y + pad_y, x + pad_x) = s.image.at(c, y, x);

  Sample out;
  out.image = (side == target) ? canvas : bilinear_resize(canvas, target, target);
  for (const auto& a : s.annotations) {
    Annotation na = a;
    na.box.cx = (a.box.cx * s.image.w + pad_x) / side;
    na.box.cy = (a.box.cy * s.image.h + pad_y) / side;
    na.box.w = a.box.w * s.image.w / side;
    na.box.h = a.box.h * s.image.h / side;
    out.annotations.push_back(na);
  }
  return out;
}

void apply_gamma(Image& im, double c, double gamma) {
  for (auto& v : im.data) {
    double r = std::min(1.0, std::max(0.0, v));
    v = c * std::pow(r, gamma);
  }
}

Sample mixup(const Sample& a, const Sample& b) {
  if (a.image.w != b.image.w || a.image.h != b.image.h)
    throw std::invalid_argument("mixup: image sizes differ");
  Sample out;
  out.image = a.image;
  for (size_t i = 0; i < out.image.data.size(); ++i)
    out.image.data[i] = 0.5 * a.image.data[i] + 0.5 * b.image.data[i];
  out.annotations = a.annotations;
  for (const auto& ann : b.annotations) {
    bool dup = false;
    for (const auto& have : out.annotations)
      dup = dup || (have.class_id == ann.class_id && have.box.cx == ann.box.cx &&
                    have.box.cy == ann.box.cy && have.box.w == ann.box.w &&
                    have.box.h == ann.box.h);
    if (!dup) out.annotations.push_back(ann);
  }
  return out;
}

}  // namespace dsmoe::harness
