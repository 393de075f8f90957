// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic defect corpus: textured backgrounds with four
// defect families (bright ellipses, thin oriented lines, irregular blobs,
// long low-contrast bands), boxes recorded from the rendered masks.
#ifndef DSMOE_SYNTH_HPP
#define DSMOE_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dsmoe/boxes.hpp"
#include "dsmoe/image_io.hpp"

namespace dsmoe::harness {

struct SynthConfig {
  int n_images = 200;
  int image_size = 64;
  int n_classes = 4;  // <= 4 built-in defect families
  int min_instances = 1;
  int max_instances = 2;
  double small_object_fraction = 0.0;  // portion rendered below 4 px
  double train_frac = 0.6;
  double val_frac = 0.2;
};

struct Annotation {
  int class_id = 0;
  det::Box box;
};

struct Sample {
  Image image;
  std::vector<Annotation> annotations;
  // mask of rendered defect pixels per annotation, used by the
  // pixel-membership check
  std::vector<std::vector<std::uint8_t>> masks;
};

struct SyntheticCorpus {
  std::vector<Sample> samples;
  std::vector<int> train_ids, val_ids, test_ids;
  std::vector<std::string> class_names;
  std::vector<std::string> prompts;
  int image_size = 64;

  const std::vector<int>& split(const std::string& name) const;
  void save(const std::string& dir) const;
  static SyntheticCorpus load(const std::string& dir);
};

SyntheticCorpus generate_corpus(std::uint64_t seed, const SynthConfig& cfg);

// fraction of an annotation's rendered pixels that fall inside its box
double box_pixel_coverage(const Sample& s, size_t annotation_index);

}  // namespace dsmoe::harness

#endif
