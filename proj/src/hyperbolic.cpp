// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/hyperbolic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsmoe::hyper {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
long g_clamp_events = 0;
constexpr double kNormEps = 1e-30;  // stabilizes r and r-division at the origin
}  // namespace

double vec_norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double vec_dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

long clamp_events() { return g_clamp_events; }
void reset_clamp_events() { g_clamp_events = 0; }

PoincarePoint clamp_to_ball(const Vec& x) {
  double r = vec_norm(x);
  if (r <= kMaxNorm) return {x};
  ++g_clamp_events;
  Vec out(x.size());
  double s = kMaxNorm / r;
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return {std::move(out)};
}

PoincarePoint exp_map_origin(const Vec& v) {
  double r = vec_norm(v);
  if (!std::isfinite(r)) fail("exp_map_origin: non-finite input");
  if (r == 0.0) return {Vec(v.size(), 0.0)};
  double scale = std::tanh(r) / r;
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] * scale;
  // tanh saturates to 1.0 in doubles around r ~ 19; boundary clamp keeps the
  // invariant norm <= 1 - 1e-7
  return clamp_to_ball(out);
}

Vec log_map_origin(const PoincarePoint& x) {
  double r = vec_norm(x.coords);
  if (r > kMaxNorm * (1.0 + 1e-12))
    fail("log_map_origin: point has norm " + std::to_string(r) +
         " >= 1 - 1e-7; project or clamp first");
  if (r == 0.0) return Vec(x.coords.size(), 0.0);
  double scale = std::atanh(std::min(r, kMaxNorm)) / r;
  Vec out(x.coords.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.coords[i] * scale;
  return out;
}

Vec mobius_add(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) fail("mobius_add: dimension mismatch");
  double ab = vec_dot(a, b);
  double na2 = vec_dot(a, a), nb2 = vec_dot(b, b);
  double den = 1.0 + 2.0 * ab + na2 * nb2;
  if (den == 0.0) fail("mobius_add: degenerate denominator");
  double ca = (1.0 + 2.0 * ab + nb2) / den;
  double cb = (1.0 - na2) / den;
  Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = ca * a[i] + cb * b[i];
  return out;
}

Vec log_map_at(const PoincarePoint& p, const PoincarePoint& x) {
  if (p.dim() != x.dim()) fail("log_map_at: dimension mismatch");
  double rp = vec_norm(p.coords), rx = vec_norm(x.coords);
  if (rp > kMaxNorm * (1.0 + 1e-12) || rx > kMaxNorm * (1.0 + 1e-12))
    fail("log_map_at: arguments must lie strictly inside the ball");
  Vec minus_p(p.coords.size());
  for (size_t i = 0; i < minus_p.size(); ++i) minus_p[i] = -p.coords[i];
  Vec m = mobius_add(minus_p, x.coords);
  double rm = vec_norm(m);
  if (rm == 0.0) return Vec(p.coords.size(), 0.0);
  double lambda_p = 2.0 / (1.0 - rp * rp);
  double scale = (2.0 / lambda_p) * std::atanh(std::min(rm, kMaxNorm)) / rm;
  Vec out(m.size());
  for (size_t i = 0; i < m.size(); ++i) out[i] = m[i] * scale;
  return out;
}

PoincarePoint project_to_ball(const Vec& x) {
  double r = vec_norm(x);
  if (!std::isfinite(r)) fail("project_to_ball: non-finite input");
  Vec out(x.size());
  double s = 1.0 / (1.0 + r);
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return clamp_to_ball(out);
}

double lambda_factor(const PoincarePoint& p) {
  double r2 = vec_dot(p.coords, p.coords);
  if (r2 >= 1.0) fail("lambda_factor: point outside the ball");
  return 2.0 / (1.0 - r2);
}

double poincare_distance(const PoincarePoint& x, const PoincarePoint& y) {
  if (x.dim() != y.dim()) fail("poincare_distance: dimension mismatch");
  double rx2 = vec_dot(x.coords, x.coords), ry2 = vec_dot(y.coords, y.coords);
  if (rx2 >= 1.0 || ry2 >= 1.0) fail("poincare_distance: arguments must lie inside the ball");
  double d2 = 0.0;
  for (size_t i = 0; i < x.coords.size(); ++i) {
    double d = x.coords[i] - y.coords[i];
    d2 += d * d;
  }
  double z = 1.0 + 2.0 * d2 / ((1.0 - rx2) * (1.0 - ry2));
  return std::acosh(z);
}

Vec geometric_fusion(const Vec& v, const PoincarePoint& that, double beta) {
  PoincarePoint pv = exp_map_origin(v);
  Vec global = log_map_origin(pv);
  Vec local = log_map_at(that, pv);
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = global[i] + beta * local[i];
  return out;
}

double angle_degrees(const Vec& u, const Vec& w) {
  double nu = vec_norm(u), nw = vec_norm(w);
  if (nu == 0.0 || nw == 0.0) fail("angle: zero vector");
  double c = vec_dot(u, w) / (nu * nw);
  c = std::max(-1.0, std::min(1.0, c));
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

bool angle_consistency(const Vec& u, const Vec& w, double eps_angle_deg) {
  return angle_degrees(u, w) < eps_angle_deg;
}

Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("taxonomy: cannot open " + path);
  Taxonomy tax;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int idx;
    std::string parent;
    if (!(ls >> idx >> parent)) fail("taxonomy: malformed line '" + line + "'");
    if (idx < 0) fail("taxonomy: negative class index");
    if (static_cast<size_t>(idx) >= tax.parent.size()) tax.parent.resize(idx + 1);
    if (parent == "none") tax.parent[idx] = std::nullopt;
    else tax.parent[idx] = std::stoi(parent);
  }
  tax.validate();
  return tax;
}

void Taxonomy::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("taxonomy: cannot write " + path);
  for (size_t i = 0; i < parent.size(); ++i) {
    out << i << " ";
    if (parent[i]) out << *parent[i];
    else out << "none";
    out << "\n";
  }
}

void Taxonomy::validate() const {
  int n = static_cast<int>(parent.size());
  for (int i = 0; i < n; ++i) {
    if (parent[i] && (*parent[i] < 0 || *parent[i] >= n))
      fail("taxonomy: parent index out of range for class " + std::to_string(i));
    // walk up; a cycle would loop longer than n steps
    int steps = 0, cur = i;
    while (parent[cur]) {
      cur = *parent[cur];
      if (++steps > n) fail("taxonomy: cycle detected at class " + std::to_string(i));
    }
  }
}

HierarchyReport hierarchy_check(const std::vector<PoincarePoint>& anchors, const Taxonomy& tax,
                                double margin) {
  HierarchyReport rep;
  int n = static_cast<int>(anchors.size());
  for (int c = 0; c < static_cast<int>(tax.parent.size()) && c < n; ++c) {
    if (!tax.parent[c]) continue;
    int p = *tax.parent[c];
    double d_pc = poincare_distance(anchors[p], anchors[c]);
    for (int k = 0; k < n; ++k) {
      if (k == c || k == p) continue;
      double d_pk = poincare_distance(anchors[p], anchors[k]);
      double hinge = d_pc - d_pk + margin;
      if (hinge > 0.0) rep.hinge_penalty += hinge;
      if (d_pc > d_pk) rep.violations.push_back({p, c, k, d_pc, d_pk});
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// tensor composites
// ---------------------------------------------------------------------------

Tensor row_norms(const Tensor& m) {
  return sqrt(add_scalar(sum(mul(m, m), 1, true), kNormEps * kNormEps));
}

Tensor clamp_rows_to_ball(const Tensor& m) {
  Tensor r = row_norms(m);
  Tensor scale = div(m.graph()->scalar(kMaxNorm), maximum_scalar(r, kMaxNorm));
  return mul(m, expand(scale, m.shape()));
}

Tensor exp_map_origin_rows(const Tensor& v) {
  Tensor r = row_norms(v);
  Tensor scale = div(tanh(r), r);
  return clamp_rows_to_ball(mul(v, expand(scale, v.shape())));
}

Tensor log_map_origin_rows(const Tensor& x) {
  Tensor c = clamp_rows_to_ball(x);
  Tensor r = row_norms(c);
  // r <= 1 - 1e-7 after clamping, inside artanh's domain
  Tensor scale = div(artanh(r), r);
  return mul(c, expand(scale, c.shape()));
}

namespace {
Tensor row_dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b), 1, true); }
}  // namespace

Tensor log_map_at_rows(const Tensor& p, const Tensor& x) {
  if (p.shape() != x.shape())
    fail("log_map_at_rows: shape mismatch " + shape_str(p.shape()) + " vs " +
         shape_str(x.shape()));
  Tensor a = neg(p);
  Tensor ab = row_dot(a, x);
  Tensor na2 = row_dot(a, a);
  Tensor nb2 = row_dot(x, x);
  Tensor den = add_scalar(add(mul_scalar(ab, 2.0), mul(na2, nb2)), 1.0);
  Tensor ca = div(add_scalar(add(mul_scalar(ab, 2.0), nb2), 1.0), den);
  Tensor cb = div(add_scalar(neg(na2), 1.0), den);
  Tensor m = add(mul(a, expand(ca, a.shape())), mul(x, expand(cb, x.shape())));
  Tensor rm = row_norms(m);
  Tensor rm_safe = minimum(rm, rm.graph()->leaf(rm.shape(), kMaxNorm));
  // (2 / lambda_p) * artanh(|m|) / |m| = (1 - |p|^2) * artanh(|m|) / |m|
  Tensor scale = mul(add_scalar(neg(na2), 1.0), div(artanh(rm_safe), rm));
  return mul(m, expand(scale, m.shape()));
}

Tensor project_to_ball_rows(const Tensor& x) {
  Tensor r = row_norms(x);
  Tensor scale = div(x.graph()->scalar(1.0), add_scalar(r, 1.0));
  return mul(x, expand(scale, x.shape()));
}

Tensor semantic_anchors(const Tensor& t_hat, const Tensor& w_h) {
  if (t_hat.rank() != 2 || w_h.rank() != 2 || t_hat.dim(1) != w_h.dim(1))
    fail("semantic_anchors: T_hat " + shape_str(t_hat.shape()) + " and W_h " +
         shape_str(w_h.shape()) + " are incompatible");
  Tensor lifted = matmul(t_hat, permute(w_h, {1, 0}));  // C x n
  return project_to_ball_rows(lifted);
}

Tensor geometric_fusion_rows(const Tensor& v_rows, const Tensor& anchor_rows, double beta) {
  Tensor pv = exp_map_origin_rows(v_rows);
  Tensor global = log_map_origin_rows(pv);
  if (beta == 0.0) return global;
  Tensor local = log_map_at_rows(anchor_rows, pv);
  return add(global, mul_scalar(local, beta));
}

Tensor poincare_distance_rows(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape())
    fail("poincare_distance_rows: shape mismatch");
  Tensor diff = sub(x, y);
  Tensor d2 = row_dot(diff, diff);
  Tensor fx = add_scalar(neg(row_dot(x, x)), 1.0);
  Tensor fy = add_scalar(neg(row_dot(y, y)), 1.0);
  Tensor z = add_scalar(mul_scalar(div(d2, mul(fx, fy)), 2.0), 1.0);
  // acosh(z) = log(z + sqrt((z-1)(z+1))); the factored form stays
  // non-negative near z = 1
  return log(add(z, sqrt(mul(add_scalar(z, -1.0), add_scalar(z, 1.0)))));
}

}  // namespace dsmoe::hyper
