// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_PREPROCESS_HPP
#define DSMOE_PREPROCESS_HPP

#include "dsmoe/synth.hpp"

namespace dsmoe::harness {

// letterbox to a square canvas (0.5 gray padding), bilinear resize to the
// target, boxes remapped to the padded frame; rejects zero-area images
Sample letterbox_to(const Sample& s, int target);

// s = c * r^gamma on normalized intensities, in place
void apply_gamma(Image& im, double c = 1.0, double gamma = 1.5);

// 0.5-ratio pixel blend with both label sets kept; exact duplicate labels
// are merged
Sample mixup(const Sample& a, const Sample& b);

}  // namespace dsmoe::harness

#endif
