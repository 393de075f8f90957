// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dsmoe/rng.hpp"

namespace dsmoe::harness {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

constexpr double kPi = 3.14159265358979323846;

const char* kClassNames[4] = {"pinhole", "scratch", "contamination", "crease"};
const char* kPrompts[4] = {
    "small bright elliptical pinhole defect on a textured surface",
    "thin oriented scratch line crossing the surface texture",
    "irregular dark contamination blob with ragged outline",
    "long low contrast crease band running across the material",
};

// per-class RGB delta direction; magnitudes are drawn per instance
const double kTint[4][3] = {
    {1.0, 0.9, 0.7},    // pinhole: warm bright
    {0.3, 1.0, 0.4},    // scratch: green
    {-1.0, -0.9, -0.5}, // contamination: dark
    {0.8, 0.3, 1.0},    // crease: violet
};

struct Painter {
  Image* im;
  std::vector<std::uint8_t> mask;
  int size;

  explicit Painter(Image* image) : im(image), size(image->w) {
    mask.assign(static_cast<size_t>(size * size), 0);
  }

  void add(int y, int x, const double* tint, double amount) {
    if (y < 0 || y >= size || x < 0 || x >= size) return;
    for (int c = 0; c < 3; ++c) {
      double v = im->at(c, y, x) + tint[c] * amount;
      im->at(c, y, x) = std::min(1.0, std::max(0.0, v));
    }
    if (std::fabs(amount) > 1e-9) mask[static_cast<size_t>(y * size + x)] = 1;
  }

  bool bounds(int& x0, int& y0, int& x1, int& y1) const {
    x0 = y0 = size;
    x1 = y1 = -1;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (mask[static_cast<size_t>(y * size + x)]) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    return x1 >= 0;
  }
};

void render_background(Image& im, Rng& rng) {
  double base = rng.uniform(0.35, 0.5);
  double fx = rng.uniform(0.05, 0.20), fy = rng.uniform(0.05, 0.20);
  double px = rng.uniform(0.0, 2 * kPi), py = rng.uniform(0.0, 2 * kPi);
  double amp = rng.uniform(0.015, 0.03);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      double v = base + amp * std::sin(fx * x + px) * std::sin(fy * y + py) +
                 rng.uniform(-0.01, 0.01);
      for (int c = 0; c < 3; ++c) im.at(c, y, x) = std::min(1.0, std::max(0.0, v + 0.01 * c));
    }
}

void render_pinhole(Painter& p, Rng& rng, bool tiny) {
  double cx = rng.uniform(6.0, p.size - 6.0), cy = rng.uniform(6.0, p.size - 6.0);
  double r = tiny ? rng.uniform(0.8, 1.4) : rng.uniform(3.0, 5.5);
  double amp = 0.5;
  for (int y = static_cast<int>(cy - r - 1); y <= static_cast<int>(cy + r + 1); ++y)
    for (int x = static_cast<int>(cx - r - 1); x <= static_cast<int>(cx + r + 1); ++x) {
      double dx = (x - cx) / r, dy = (y - cy) / r;
      if (dx * dx + dy * dy <= 1.0) p.add(y, x, kTint[0], amp);
    }
}

void render_scratch(Painter& p, Rng& rng, bool tiny) {
  // axis-aligned thin bar
  bool horizontal = rng.uniform() < 0.5;
  int len = tiny ? 3 : rng.uniform_int(10, 16);
  int thick = tiny ? 1 : 3;
  double amp = 0.45;
  int c0 = rng.uniform_int(4, p.size - 5);
  int start = rng.uniform_int(2, p.size - len - 3);
  for (int a = start; a < start + len; ++a)
    for (int b = c0 - thick / 2; b <= c0 + thick / 2; ++b) {
      if (horizontal) p.add(b, a, kTint[1], amp);
      else p.add(a, b, kTint[1], amp);
    }
}

void render_contamination(Painter& p, Rng& rng, bool tiny) {
  // dark square patch with a clipped corner, distinct from the round pinhole
  double amp = 0.4;
  int half = tiny ? 1 : rng.uniform_int(3, 6);
  int cx = rng.uniform_int(half + 2, p.size - half - 3);
  int cy = rng.uniform_int(half + 2, p.size - half - 3);
  for (int y = cy - half; y <= cy + half; ++y)
    for (int x = cx - half; x <= cx + half; ++x) {
      if ((x - cx) + (y - cy) > half) continue;  // clipped corner
      p.add(y, x, kTint[2], amp);
    }
}

void render_crease(Painter& p, Rng& rng, bool tiny) {
  bool horizontal = rng.uniform() < 0.5;
  double len = tiny ? rng.uniform(2.5, 3.8) : rng.uniform(30.0, p.size - 6.0);
  double width = tiny ? 1.0 : rng.uniform(4.0, 7.0);
  double c0 = rng.uniform(8.0, p.size - 8.0);
  double start = rng.uniform(2.0, p.size - len - 2.0);
  double amp = 0.3;
  for (int a = static_cast<int>(start); a < static_cast<int>(start + len); ++a)
    for (int b = static_cast<int>(c0 - width / 2); b <= static_cast<int>(c0 + width / 2); ++b) {
      if (horizontal) p.add(b, a, kTint[3], amp);
      else p.add(a, b, kTint[3], amp);
    }
}

}  // namespace

const std::vector<int>& SyntheticCorpus::split(const std::string& name) const {
  if (name == "train") return train_ids;
  if (name == "val") return val_ids;
  if (name == "test") return test_ids;
  fail("corpus: unknown split '" + name + "'");
}

SyntheticCorpus generate_corpus(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.n_classes < 1 || cfg.n_classes > 4)
    fail("corpus: n_classes must be within the 4 built-in defect families");
  if (cfg.image_size % 32 != 0) fail("corpus: image size must be divisible by 32");
  SyntheticCorpus corpus;
  corpus.image_size = cfg.image_size;
  for (int c = 0; c < cfg.n_classes; ++c) {
    corpus.class_names.push_back(kClassNames[c]);
    corpus.prompts.push_back(kPrompts[c]);
  }

  Rng rng(seed);
  for (int i = 0; i < cfg.n_images; ++i) {
    Sample s;
    s.image = Image::filled(cfg.image_size, cfg.image_size, 0.0);
    render_background(s.image, rng);
    int n_inst = rng.uniform_int(cfg.min_instances, cfg.max_instances);
    for (int inst = 0; inst < n_inst; ++inst) {
      int cls = rng.uniform_int(0, cfg.n_classes - 1);
      bool tiny = rng.uniform() < cfg.small_object_fraction;
      Painter painter(&s.image);
      switch (cls) {
        case 0: render_pinhole(painter, rng, tiny); break;
        case 1: render_scratch(painter, rng, tiny); break;
        case 2: render_contamination(painter, rng, tiny); break;
        default: render_crease(painter, rng, tiny); break;
      }
      int x0, y0, x1, y1;
      if (!painter.bounds(x0, y0, x1, y1)) continue;
      Annotation ann;
      ann.class_id = cls;
      ann.box.cx = (x0 + x1 + 1) / 2.0 / cfg.image_size;
      ann.box.cy = (y0 + y1 + 1) / 2.0 / cfg.image_size;
      ann.box.w = (x1 - x0 + 1) / static_cast<double>(cfg.image_size);
      ann.box.h = (y1 - y0 + 1) / static_cast<double>(cfg.image_size);
      ann.box.validate();
      // drop heavy overlaps with earlier instances so labels stay crisp
      bool keep = true;
      for (const auto& prev : s.annotations)
        if (det::iou(prev.box, ann.box) > 0.35) keep = false;
      if (!keep) continue;
      s.annotations.push_back(ann);
      s.masks.push_back(painter.mask);
    }
    corpus.samples.push_back(std::move(s));
  }

  // seeded shuffle, then contiguous 6:2:2 split
  std::vector<int> ids(corpus.samples.size());
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i)
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(rng.uniform_int(0, i))]);
  int n = static_cast<int>(ids.size());
  int n_train = static_cast<int>(std::lround(n * cfg.train_frac));
  int n_val = static_cast<int>(std::lround(n * cfg.val_frac));
  corpus.train_ids.assign(ids.begin(), ids.begin() + n_train);
  corpus.val_ids.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  corpus.test_ids.assign(ids.begin() + n_train + n_val, ids.end());
  return corpus;
}

double box_pixel_coverage(const Sample& s, size_t annotation_index) {
  const auto& mask = s.masks.at(annotation_index);
  const auto& box = s.annotations[annotation_index].box;
  int size = s.image.w;
  double x1 = box.x1() * size, x2 = box.x2() * size;
  double y1 = box.y1() * size, y2 = box.y2() * size;
  long inside = 0, total = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (!mask[static_cast<size_t>(y * size + x)]) continue;
      ++total;
      double px = x + 0.5, py = y + 0.5;
      if (px >= x1 && px <= x2 && py >= y1 && py <= y2) ++inside;
    }
  return total > 0 ? static_cast<double>(inside) / total : 0.0;
}

void SyntheticCorpus::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/images");
  fs::create_directories(dir + "/labels");
  char name[64];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu", i);
    write_ppm(samples[i].image, dir + "/images/" + name + ".ppm");
    std::ofstream lab(dir + "/labels/" + name + ".txt");
    lab.precision(17);
    for (const auto& a : samples[i].annotations)
      lab << a.class_id << " " << a.box.cx << " " << a.box.cy << " " << a.box.w << " "
          << a.box.h << "\n";
  }
  std::ofstream cls(dir + "/classes.txt");
  for (size_t i = 0; i < class_names.size(); ++i) cls << i << " " << class_names[i] << "\n";
  std::ofstream pr(dir + "/prompts.txt");
  for (const auto& p : prompts) pr << p << "\n";
  std::ofstream sp(dir + "/splits.txt");
  for (int id : train_ids) sp << id << " train\n";
  for (int id : val_ids) sp << id << " val\n";
  for (int id : test_ids) sp << id << " test\n";
  // flat default taxonomy, one line per class
  std::ofstream tax(dir + "/taxonomy.txt");
  for (size_t i = 0; i < class_names.size(); ++i) tax << i << " none\n";
}

SyntheticCorpus SyntheticCorpus::load(const std::string& dir) {
  namespace fs = std::filesystem;
  SyntheticCorpus corpus;
  std::ifstream cls(dir + "/classes.txt");
  if (!cls) fail("corpus: cannot open " + dir + "/classes.txt");
  std::string line;
  while (std::getline(cls, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int idx;
    std::string name;
    ls >> idx >> name;
    corpus.class_names.push_back(name);
  }
  std::ifstream pr(dir + "/prompts.txt");
  if (!pr) fail("corpus: cannot open " + dir + "/prompts.txt");
  while (std::getline(pr, line)) corpus.prompts.push_back(line);
  while (!corpus.prompts.empty() && corpus.prompts.back().empty()) corpus.prompts.pop_back();

  char name[64];
  for (size_t i = 0;; ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu", i);
    std::string ipath = dir + "/images/" + name + ".ppm";
    if (!fs::exists(ipath)) break;
    Sample s;
    s.image = read_ppm(ipath);
    std::ifstream lab(dir + "/labels/" + name + ".txt");
    if (!lab) fail("corpus: missing labels for " + ipath);
    while (std::getline(lab, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      Annotation a;
      ls >> a.class_id >> a.box.cx >> a.box.cy >> a.box.w >> a.box.h;
      s.annotations.push_back(a);
    }
    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.empty()) fail("corpus: no images under " + dir);
  corpus.image_size = corpus.samples[0].image.w;
  std::ifstream sp(dir + "/splits.txt");
  if (!sp) fail("corpus: cannot open " + dir + "/splits.txt");
  while (std::getline(sp, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int id;
    std::string split;
    ls >> id >> split;
    if (split == "train") corpus.train_ids.push_back(id);
    else if (split == "val") corpus.val_ids.push_back(id);
    else corpus.test_ids.push_back(id);
  }
  return corpus;
}

}  // namespace dsmoe::harness
