// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_IMAGE_IO_HPP
#define DSMOE_IMAGE_IO_HPP

#include <string>
#include <vector>

namespace dsmoe::harness {

// Planar RGB, values in [0,1], channel-major (3 x h x w).
struct Image {
  int w = 0, h = 0;
  std::vector<double> data;

  double& at(int c, int y, int x) {
    return data[static_cast<size_t>((c * h + y) * w + x)];
  }
  double at(int c, int y, int x) const {
    return data[static_cast<size_t>((c * h + y) * w + x)];
  }
  static Image filled(int w, int h, double v) {
    Image im;
    im.w = w;
    im.h = h;
    im.data.assign(static_cast<size_t>(3 * w * h), v);
    return im;
  }
};

// binary PPM (P6), 8 bits per channel
void write_ppm(const Image& im, const std::string& path);
Image read_ppm(const std::string& path);

Image bilinear_resize(const Image& im, int out_w, int out_h);

}  // namespace dsmoe::harness

#endif
