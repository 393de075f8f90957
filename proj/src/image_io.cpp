// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace dsmoe::harness {

void write_ppm(const Image& im, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("ppm: cannot write " + path);
  f << "P6\n" << im.w << " " << im.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(im.w) * 3);
  for (int y = 0; y < im.h; ++y) {
    for (int x = 0; x < im.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::min(1.0, std::max(0.0, im.at(c, y, x)));
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::invalid_argument("ppm: " + path + " is not binary P6");
  int w, h, maxval;
  f >> w >> h >> maxval;
  if (maxval != 255) throw std::invalid_argument("ppm: only 8-bit images supported");
  f.get();  // single whitespace after the header
  Image im = Image::filled(w, h, 0.0);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw std::invalid_argument("ppm: truncated file " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(c, y, x) = row[static_cast<size_t>(x * 3 + c)] / 255.0;
  }
  return im;
}

Image bilinear_resize(const Image& im, int out_w, int out_h) {
  Image out = Image::filled(out_w, out_h, 0.0);
  double sx = static_cast<double>(im.w) / out_w;
  double sy = static_cast<double>(im.h) / out_h;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      // sample at the source-pixel center
      double fx = (x + 0.5) * sx - 0.5;
      double fy = (y + 0.5) * sy - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      int y0 = static_cast<int>(std::floor(fy));
      double wx = fx - x0, wy = fy - y0;
      auto px = [&](int c, int yy, int xx) {
        yy = std::max(0, std::min(im.h - 1, yy));
        xx = std::max(0, std::min(im.w - 1, xx));
        return im.at(c, yy, xx);
      };
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = (1 - wy) * ((1 - wx) * px(c, y0, x0) + wx * px(c, y0, x0 + 1)) +
                          wy * ((1 - wx) * px(c, y0 + 1, x0) + wx * px(c, y0 + 1, x0 + 1));
    }
  return out;
}

}  // namespace dsmoe::harness
