// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/gradcheck.hpp"

#include <cmath>

namespace dsmoe {

GradCheckReport check_gradients(const std::function<Tensor(Graph&, const Tensor&)>& f,
                                const std::vector<double>& x, const Shape& xshape,
                                double step, double tol) {
  GradCheckReport rep;

  std::vector<double> analytic;
  try {
    Graph g;
    Tensor xt = g.leaf(xshape, x, /*requires_grad=*/true);
    Tensor loss = f(g, xt);
    if (loss.numel() != 1) {
      rep.message = "f did not return a scalar";
      return rep;
    }
    if (!std::isfinite(loss.item())) {
      rep.message = "non-finite f at base point";
      return rep;
    }
    g.backward(loss);
    analytic = xt.grad().empty() ? std::vector<double>(x.size(), 0.0) : xt.grad();
  } catch (const std::exception& e) {
    rep.message = std::string("f rejected the base point: ") + e.what();
    return rep;
  }

  // Domain rejections while probing count as non-finite evaluations.
  auto eval = [&](const std::vector<double>& probe, double& out) -> bool {
    try {
      Graph g;
      Tensor xt = g.leaf(xshape, probe, false);
      Tensor loss = f(g, xt);
      out = loss.item();
    } catch (const std::exception&) {
      return false;
    }
    return std::isfinite(out);
  };

  rep.pass = true;
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    double fp;
    if (!eval(probe, fp)) {
      rep.pass = false;
      rep.message = "non-finite f at coordinate " + std::to_string(i);
      rep.worst_index = static_cast<int>(i);
      return rep;
    }
    probe[i] = x[i] - step;
    double fm;
    if (!eval(probe, fm)) {
      rep.pass = false;
      rep.message = "non-finite f at coordinate " + std::to_string(i);
      rep.worst_index = static_cast<int>(i);
      return rep;
    }
    probe[i] = x[i];
    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic[i];
    double denom = std::max(std::fabs(a), std::fabs(numeric));
    double rel = 0.0;
    if (std::fabs(a) > 1e-8 && std::fabs(numeric) > 1e-8) {
      rel = std::fabs(a - numeric) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_index = static_cast<int>(i);
      }
    }
    rep.rows.push_back({static_cast<int>(i), a, numeric, rel});
  }
  rep.pass = rep.max_rel_err <= tol;
  if (!rep.pass)
    rep.message = "max relative error " + std::to_string(rep.max_rel_err) + " at coordinate " +
                  std::to_string(rep.worst_index);
  return rep;
}

}  // namespace dsmoe
