// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_GRADCHECK_HPP
#define DSMOE_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "dsmoe/tensor.hpp"

namespace dsmoe {

struct GradCheckRow {
  int index;
  double analytic;
  double numeric;
  double rel_err;
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int worst_index = -1;
  int checked = 0;   // coordinates where both magnitudes exceed the floor
  std::vector<GradCheckRow> rows;
  std::string message;
};

// Central finite differences against the tape gradient. A coordinate only
// counts toward pass/fail when both |analytic| and |numeric| exceed 1e-8.
// f must build a scalar from x on the supplied graph.
GradCheckReport check_gradients(const std::function<Tensor(Graph&, const Tensor&)>& f,
                                const std::vector<double>& x, const Shape& xshape,
                                double step = 1e-4, double tol = 1e-3);

}  // namespace dsmoe

#endif
