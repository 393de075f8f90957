// SPDX-License-Identifier: Apache-2.0
//
// Poincare ball (curvature -1) operations. Two layers: plain double-vector
// functions used for diagnostics and as test oracles, and tensor composites
// used inside the differentiable pipeline. Points are kept strictly inside
// the ball with margin 1e-7; clamping happens only at these module
// boundaries and is counted, never silently inside tensor ops.
#ifndef DSMOE_HYPERBOLIC_HPP
#define DSMOE_HYPERBOLIC_HPP

#include <optional>
#include <string>
#include <vector>

#include "dsmoe/tensor.hpp"

namespace dsmoe::hyper {

using Vec = std::vector<double>;

inline constexpr double kBallMargin = 1e-7;
inline constexpr double kMaxNorm = 1.0 - kBallMargin;

struct PoincarePoint {
  Vec coords;
  int dim() const { return static_cast<int>(coords.size()); }
};

double vec_norm(const Vec& v);
double vec_dot(const Vec& a, const Vec& b);

// Number of times a boundary clamp fired since the last reset.
long clamp_events();
void reset_clamp_events();

// Radial rescale onto norm <= 1 - 1e-7; counts an event when it fires.
PoincarePoint clamp_to_ball(const Vec& x);

PoincarePoint exp_map_origin(const Vec& v);
Vec log_map_origin(const PoincarePoint& x);  // rejects norm >= 1 - 1e-7 + ulp slack
Vec log_map_at(const PoincarePoint& p, const PoincarePoint& x);
PoincarePoint project_to_ball(const Vec& x);  // x / (1 + ||x||)
Vec mobius_add(const Vec& a, const Vec& b);
double poincare_distance(const PoincarePoint& x, const PoincarePoint& y);

// Conformal factor lambda_p = 2 / (1 - ||p||^2). The tangent-space norm at p
// is lambda_p * ||.||; in that norm ||log_p(x)|| equals poincare_distance.
double lambda_factor(const PoincarePoint& p);

// g = Log_0(P(v)) + beta * Log_{that}(P(v)) with P(v) = exp_map_origin(v).
Vec geometric_fusion(const Vec& v, const PoincarePoint& that, double beta);

// angle(u, w) in degrees; rejects zero vectors
double angle_degrees(const Vec& u, const Vec& w);
bool angle_consistency(const Vec& u, const Vec& w, double eps_angle_deg = 15.0);

struct Taxonomy {
  // parent[i] = parent class of i, if any; indices are class ids
  std::vector<std::optional<int>> parent;
  static Taxonomy load(const std::string& path);  // lines: "idx parent|none"
  void save(const std::string& path) const;
  void validate() const;  // acyclic, indices in range
};

struct HierarchyViolation {
  int parent, child, competitor;
  double d_parent_child, d_parent_competitor;
};

struct HierarchyReport {
  std::vector<HierarchyViolation> violations;
  double hinge_penalty = 0.0;  // sum of max(0, d(p,c) - d(p,k) + margin)
  bool ok() const { return violations.empty(); }
};

HierarchyReport hierarchy_check(const std::vector<PoincarePoint>& anchors, const Taxonomy& tax,
                                double margin = 0.1);

// ---- tensor composites (differentiable) ----
// All operate rowwise on a C x n matrix; internals use an epsilon-stabilized
// row norm so the v = 0 limit stays smooth.
Tensor row_norms(const Tensor& m);                 // C x 1
Tensor clamp_rows_to_ball(const Tensor& m);
Tensor exp_map_origin_rows(const Tensor& v);
Tensor log_map_origin_rows(const Tensor& x);       // clamps rows first
Tensor log_map_at_rows(const Tensor& p, const Tensor& x);
Tensor project_to_ball_rows(const Tensor& x);
// anchors t_i = Proj(W_h * T_hat_i); T_hat: C x d_t, w_h: n x d_t -> C x n
Tensor semantic_anchors(const Tensor& t_hat, const Tensor& w_h);
Tensor geometric_fusion_rows(const Tensor& v_rows, const Tensor& anchor_rows, double beta);
Tensor poincare_distance_rows(const Tensor& x, const Tensor& y);  // C x 1

}  // namespace dsmoe::hyper

#endif
