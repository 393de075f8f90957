// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dsmoe {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_shape_positive(const Shape& s, const char* op) {
  for (int d : s)
    if (d <= 0) fail(std::string(op) + ": non-positive dim in shape " + shape_str(s));
}

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

}  // namespace

double Tensor::item() const {
  if (numel() != 1) fail("item: tensor is not scalar, shape " + shape_str(shape()));
  return node_->data[0];
}

namespace detail {
void accumulate(Node& parent, const std::vector<double>& g) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}
}  // namespace detail

Tensor Graph::leaf(const Shape& shape, std::vector<double> data, bool requires_grad) {
  check_shape_positive(shape, "leaf");
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    fail("leaf: shape " + shape_str(shape) + " does not match data length " +
         std::to_string(data.size()));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n), this);
}

Tensor Graph::leaf(const Shape& shape, double fill, bool requires_grad) {
  return leaf(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), fill),
              requires_grad);
}

Tensor Graph::scalar(double v, bool requires_grad) {
  return leaf(Shape{1}, std::vector<double>{v}, requires_grad);
}

Tensor Graph::op_node(const Shape& shape, std::vector<double> data, const char* op,
                      std::vector<std::shared_ptr<Node>> parents,
                      std::function<void(Node&)> backward_fn) {
  for (double v : data)
    if (!std::isfinite(v)) fail(std::string(op) + ": non-finite value in forward result");
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(data);
  n->op = op;
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward_fn);
  for (const auto& p : n->parents)
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  tape_.push_back(n);
  return Tensor(n, this);
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    fail("backward: loss must be a scalar, got shape " +
         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& n = **it;
    if (!n.requires_grad || !n.backward_fn || n.grad.empty()) continue;
    n.backward_fn(n);
  }
}

// ---------------------------------------------------------------------------
// elementwise with numpy-style broadcasting (equal rank, dims equal or 1)
// ---------------------------------------------------------------------------
namespace {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::int64_t> a_stride, b_stride, out_stride;
  bool same_shape = false;
};

BroadcastPlan make_plan(const Tensor& a, const Tensor& b, const char* op) {
  BroadcastPlan p;
  Shape sa = a.shape();
  Shape sb = b.shape();
  if (sa == sb) {
    p.out_shape = sa;
    p.same_shape = true;
    return p;
  }
  // numpy-style: pad the shorter shape with leading ones
  while (sa.size() < sb.size()) sa.insert(sa.begin(), 1);
  while (sb.size() < sa.size()) sb.insert(sb.begin(), 1);
  Shape out(sa.size());
  for (size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] == sb[i]) out[i] = sa[i];
    else if (sa[i] == 1) out[i] = sb[i];
    else if (sb[i] == 1) out[i] = sa[i];
    else
      fail(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
           shape_str(b.shape()));
  }
  p.out_shape = out;
  auto sta = row_major_strides(sa);
  auto stb = row_major_strides(sb);
  p.out_stride = row_major_strides(out);
  p.a_stride.resize(sa.size());
  p.b_stride.resize(sb.size());
  for (size_t i = 0; i < sa.size(); ++i) {
    p.a_stride[i] = (sa[i] == 1 && out[i] != 1) ? 0 : sta[i];
    p.b_stride[i] = (sb[i] == 1 && out[i] != 1) ? 0 : stb[i];
  }
  return p;
}

template <typename F, typename DFA, typename DFB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, F f, DFA dfa, DFB dfb) {
  if (!a.graph() || a.graph() != b.graph())
    fail(std::string(op) + ": operands belong to different graphs");
  BroadcastPlan plan = make_plan(a, b, op);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::int64_t n = shape_numel(plan.out_shape);
  std::vector<double> out(static_cast<size_t>(n));
  if (plan.same_shape) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
    return a.graph()->op_node(
        plan.out_shape, std::move(out), op, {a.node_ptr(), b.node_ptr()},
        [f, dfa, dfb](Node& nd) {
          Node& pa = *nd.parents[0];
          Node& pb = *nd.parents[1];
          if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < nd.grad.size(); ++i)
              pa.grad[i] += dfa(pa.data[i], pb.data[i]) * nd.grad[i];
          }
          if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < nd.grad.size(); ++i)
              pb.grad[i] += dfb(pa.data[i], pb.data[i]) * nd.grad[i];
          }
        });
  }
  const size_t rank = plan.out_shape.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::vector<std::int64_t> amap(static_cast<size_t>(n)), bmap(static_cast<size_t>(n));
  for (std::int64_t lin = 0; lin < n; ++lin) {
    std::int64_t ia = 0, ib = 0;
    for (size_t d = 0; d < rank; ++d) {
      ia += idx[d] * plan.a_stride[d];
      ib += idx[d] * plan.b_stride[d];
    }
    amap[lin] = ia;
    bmap[lin] = ib;
    out[lin] = f(ad[ia], bd[ib]);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      if (++idx[d] < plan.out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return a.graph()->op_node(
      plan.out_shape, std::move(out), op, {a.node_ptr(), b.node_ptr()},
      [f, dfa, dfb, amap = std::move(amap), bmap = std::move(bmap)](Node& nd) {
        Node& pa = *nd.parents[0];
        Node& pb = *nd.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (size_t i = 0; i < nd.grad.size(); ++i) {
          double av = pa.data[amap[i]], bv = pb.data[bmap[i]];
          if (pa.requires_grad) pa.grad[amap[i]] += dfa(av, bv) * nd.grad[i];
          if (pb.requires_grad) pb.grad[bmap[i]] += dfb(av, bv) * nd.grad[i];
        }
      });
}

template <typename F, typename DF>
Tensor unary_op(const Tensor& a, const char* op, F f, DF df_from_in_out) {
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  return a.graph()->op_node(a.shape(), std::move(out), op, {a.node_ptr()},
                            [df_from_in_out](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (size_t i = 0; i < nd.grad.size(); ++i)
                                p.grad[i] += df_from_in_out(p.data[i], nd.data[i]) * nd.grad[i];
                            });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data())
    if (v == 0.0) fail("div: division by zero");
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [](double, double y) { return 1.0 / y; },
                   [](double x, double y) { return -x / (y * y); });
}

// ties route the gradient to the first operand
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
                   [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                   [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
                   [](double x, double y) { return x >= y ? 1.0 : 0.0; },
                   [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(a, "add_scalar", [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(a, "mul_scalar", [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor abs_val(const Tensor& a) {
  return unary_op(a, "abs", [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor log(const Tensor& a) {
  for (double v : a.data())
    if (v <= 0.0) fail("log: domain violation, input " + std::to_string(v) + " <= 0");
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data())
    if (v < 0.0) fail("sqrt: domain violation, input " + std::to_string(v) + " < 0");
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double x, double y) { return 0.5 / (y > 0 ? y : std::sqrt(x) + 1e-300); });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor power(const Tensor& a, double p) {
  bool integer_p = p == std::floor(p);
  for (double v : a.data()) {
    if (v < 0.0 && !integer_p)
      fail("power: negative base with non-integer exponent");
    if (v == 0.0 && p < 0.0) fail("power: zero base with negative exponent");
  }
  return unary_op(a, "power", [p](double x) { return std::pow(x, p); },
                  [p](double x, double) {
                    if (x == 0.0) return p > 1.0 ? 0.0 : (p == 1.0 ? 1.0 : 0.0);
                    return p * std::pow(x, p - 1.0);
                  });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid",
                  [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                               : std::exp(x) / (1.0 + std::exp(x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor artanh(const Tensor& a) {
  for (double v : a.data())
    if (std::fabs(v) >= 1.0)
      fail("artanh: domain violation, |" + std::to_string(v) + "| >= 1");
  return unary_op(a, "artanh", [](double x) { return std::atanh(x); },
                  [](double x, double) { return 1.0 / (1.0 - x * x); });
}

Tensor relu6(const Tensor& a) {
  return unary_op(a, "relu6",
                  [](double x) { return x < 0 ? 0.0 : (x > 6 ? 6.0 : x); },
                  [](double x, double) { return (x > 0 && x < 6) ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
  return unary_op(a, "silu",
                  [](double x) {
                    double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                      : std::exp(x) / (1.0 + std::exp(x));
                    return x * s;
                  },
                  [](double x, double) {
                    double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                      : std::exp(x) / (1.0 + std::exp(x));
                    return s * (1.0 + x * (1.0 - s));
                  });
}

Tensor maximum_scalar(const Tensor& a, double s) {
  return unary_op(a, "maximum_scalar", [s](double x) { return x >= s ? x : s; },
                  [s](double x, double) { return x >= s ? 1.0 : 0.0; });
}

Tensor minimum_scalar(const Tensor& a, double s) {
  return unary_op(a, "minimum_scalar", [s](double x) { return x <= s ? x : s; },
                  [s](double x, double) { return x <= s ? 1.0 : 0.0; });
}

Tensor atan(const Tensor& a) {
  return unary_op(a, "atan", [](double x) { return std::atan(x); },
                  [](double x, double) { return 1.0 / (1.0 + x * x); });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  check_shape_positive(shape, "reshape");
  if (shape_numel(shape) != a.numel())
    fail("reshape: cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  std::vector<double> out = a.data();
  return a.graph()->op_node(shape, std::move(out), "reshape", {a.node_ptr()}, [](Node& nd) {
    detail::accumulate(*nd.parents[0], nd.grad);
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const Shape& s = a.shape();
  if (axes.size() != s.size()) fail("permute: axes rank mismatch for " + shape_str(s));
  Shape out_shape(s.size());
  for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = s[static_cast<size_t>(axes[i])];
  auto in_st = row_major_strides(s);
  auto out_st = row_major_strides(out_shape);
  std::int64_t n = a.numel();
  std::vector<std::int64_t> map(static_cast<size_t>(n));
  std::vector<std::int64_t> idx(s.size(), 0);
  std::vector<double> out(static_cast<size_t>(n));
  const auto& ad = a.data();
  for (std::int64_t lin = 0; lin < n; ++lin) {
    std::int64_t src = 0;
    for (size_t d = 0; d < axes.size(); ++d) src += idx[d] * in_st[static_cast<size_t>(axes[d])];
    map[lin] = src;
    out[lin] = ad[src];
    for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  (void)out_st;
  return a.graph()->op_node(out_shape, std::move(out), "permute", {a.node_ptr()},
                            [map = std::move(map)](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (size_t i = 0; i < nd.grad.size(); ++i)
                                p.grad[map[i]] += nd.grad[i];
                            });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len <= 0 ||
      start + len > s[static_cast<size_t>(axis)])
    fail("slice: invalid range on axis " + std::to_string(axis) + " of " + shape_str(s));
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = len;
  // outer * [axis] * inner layout
  std::int64_t inner = 1, outer = 1;
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
  for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= s[d];
  std::int64_t axis_in = s[static_cast<size_t>(axis)];
  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  const auto& ad = a.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < len; ++j)
      std::copy_n(ad.begin() + (o * axis_in + start + j) * inner, inner,
                  out.begin() + (o * len + j) * inner);
  return a.graph()->op_node(out_shape, std::move(out), "slice", {a.node_ptr()},
                            [axis_in, inner, outer, start, len](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::int64_t o = 0; o < outer; ++o)
                                for (std::int64_t j = 0; j < len; ++j) {
                                  const double* g = nd.grad.data() + (o * len + j) * inner;
                                  double* pg = p.grad.data() + (o * axis_in + start + j) * inner;
                                  for (std::int64_t i = 0; i < inner; ++i) pg[i] += g[i];
                                }
                            });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat: no operands");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size())) fail("concat: bad axis");
  Shape out_shape = s0;
  int axis_total = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != s0.size()) fail("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(s0));
    for (size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != s0[d])
        fail("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    axis_total += s[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;
  std::int64_t inner = 1, outer = 1;
  for (size_t d = static_cast<size_t>(axis) + 1; d < s0.size(); ++d) inner *= s0[d];
  for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= s0[d];
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<int> axis_sizes;
  std::vector<std::shared_ptr<Node>> parent_nodes;
  int off = 0;
  for (const auto& t : parts) {
    int len = t.shape()[static_cast<size_t>(axis)];
    const auto& td = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(td.begin() + o * len * inner, len * inner,
                  out.begin() + (o * axis_total + off) * inner);
    axis_sizes.push_back(len);
    parent_nodes.push_back(t.node_ptr());
    off += len;
  }
  return parts[0].graph()->op_node(
      out_shape, std::move(out), "concat", std::move(parent_nodes),
      [axis_sizes, inner, outer, axis_total](Node& nd) {
        int off2 = 0;
        for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
          Node& p = *nd.parents[pi];
          int len = axis_sizes[pi];
          if (p.requires_grad) {
            p.ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
              const double* g = nd.grad.data() + (o * axis_total + off2) * inner;
              double* pg = p.grad.data() + o * len * inner;
              for (std::int64_t i = 0; i < len * inner; ++i) pg[i] += g[i];
            }
          }
          off2 += len;
        }
      });
}

Tensor expand(const Tensor& a, const Shape& target) {
  const Shape& s = a.shape();
  if (s.size() != target.size())
    fail("expand: rank mismatch " + shape_str(s) + " to " + shape_str(target));
  for (size_t d = 0; d < s.size(); ++d)
    if (s[d] != target[d] && s[d] != 1)
      fail("expand: cannot expand " + shape_str(s) + " to " + shape_str(target));
  auto in_st = row_major_strides(s);
  std::vector<std::int64_t> eff(s.size());
  for (size_t d = 0; d < s.size(); ++d) eff[d] = (s[d] == 1 && target[d] != 1) ? 0 : in_st[d];
  std::int64_t n = shape_numel(target);
  std::vector<double> out(static_cast<size_t>(n));
  std::vector<std::int64_t> map(static_cast<size_t>(n));
  std::vector<std::int64_t> idx(s.size(), 0);
  const auto& ad = a.data();
  for (std::int64_t lin = 0; lin < n; ++lin) {
    std::int64_t src = 0;
    for (size_t d = 0; d < s.size(); ++d) src += idx[d] * eff[d];
    map[lin] = src;
    out[lin] = ad[src];
    for (int d = static_cast<int>(target.size()) - 1; d >= 0; --d) {
      if (++idx[d] < target[d]) break;
      idx[d] = 0;
    }
  }
  return a.graph()->op_node(target, std::move(out), "expand", {a.node_ptr()},
                            [map = std::move(map)](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (size_t i = 0; i < nd.grad.size(); ++i)
                                p.grad[map[i]] += nd.grad[i];
                            });
}

Tensor detach(const Tensor& a, Graph& g, bool requires_grad) {
  return g.leaf(a.shape(), a.data(), requires_grad);
}

// ---------------------------------------------------------------------------
// reductions / normalization
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return a.graph()->op_node(Shape{1}, {s}, "sum", {a.node_ptr()}, [](Node& nd) {
    Node& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (auto& g : p.grad) g += nd.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  double inv = 1.0 / static_cast<double>(a.numel());
  return a.graph()->op_node(Shape{1}, {s * inv}, "mean", {a.node_ptr()}, [inv](Node& nd) {
    Node& p = *nd.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (auto& g : p.grad) g += nd.grad[0] * inv;
  });
}

namespace {

struct AxisView {
  std::int64_t outer, len, inner;
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    fail(std::string(op) + ": bad axis " + std::to_string(axis) + " for " + shape_str(s));
  AxisView v{1, s[static_cast<size_t>(axis)], 1};
  for (size_t d = 0; d < static_cast<size_t>(axis); ++d) v.outer *= s[d];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) v.inner *= s[d];
  return v;
}

Shape reduced_shape(const Shape& s, int axis, bool keepdim) {
  Shape out = s;
  if (keepdim) out[static_cast<size_t>(axis)] = 1;
  else out.erase(out.begin() + axis);
  if (out.empty()) out = Shape{1};
  return out;
}

}  // namespace

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  AxisView v = axis_view(a.shape(), axis, "sum");
  std::vector<double> out(static_cast<size_t>(v.outer * v.inner), 0.0);
  const auto& ad = a.data();
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t j = 0; j < v.len; ++j)
      for (std::int64_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += ad[(o * v.len + j) * v.inner + i];
  return a.graph()->op_node(reduced_shape(a.shape(), axis, keepdim), std::move(out), "sum_axis",
                            {a.node_ptr()}, [v](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::int64_t o = 0; o < v.outer; ++o)
                                for (std::int64_t j = 0; j < v.len; ++j)
                                  for (std::int64_t i = 0; i < v.inner; ++i)
                                    p.grad[(o * v.len + j) * v.inner + i] +=
                                        nd.grad[o * v.inner + i];
                            });
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  Tensor s = sum(a, axis, keepdim);
  return mul_scalar(s, 1.0 / static_cast<double>(a.shape()[static_cast<size_t>(axis)]));
}

Tensor max_reduce(const Tensor& a, int axis, bool keepdim) {
  AxisView v = axis_view(a.shape(), axis, "max_reduce");
  std::vector<double> out(static_cast<size_t>(v.outer * v.inner));
  std::vector<std::int64_t> arg(static_cast<size_t>(v.outer * v.inner));
  const auto& ad = a.data();
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t i = 0; i < v.inner; ++i) {
      double best = ad[(o * v.len) * v.inner + i];
      std::int64_t bj = 0;
      for (std::int64_t j = 1; j < v.len; ++j) {
        double x = ad[(o * v.len + j) * v.inner + i];
        if (x > best) {
          best = x;
          bj = j;
        }
      }
      out[o * v.inner + i] = best;
      arg[o * v.inner + i] = bj;
    }
  return a.graph()->op_node(reduced_shape(a.shape(), axis, keepdim), std::move(out), "max_axis",
                            {a.node_ptr()}, [v, arg = std::move(arg)](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::int64_t o = 0; o < v.outer; ++o)
                                for (std::int64_t i = 0; i < v.inner; ++i)
                                  p.grad[(o * v.len + arg[o * v.inner + i]) * v.inner + i] +=
                                      nd.grad[o * v.inner + i];
                            });
}

Tensor softmax(const Tensor& a, double temperature) {
  if (temperature <= 0.0) fail("softmax: temperature must be positive");
  const Shape& s = a.shape();
  std::int64_t len = s.back();
  std::int64_t rows = a.numel() / len;
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * len;
    double* y = out.data() + r * len;
    double mx = x[0];
    for (std::int64_t i = 1; i < len; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
      y[i] = std::exp((x[i] - mx) / temperature);
      z += y[i];
    }
    for (std::int64_t i = 0; i < len; ++i) y[i] /= z;
  }
  return a.graph()->op_node(s, std::move(out), "softmax", {a.node_ptr()},
                            [len, rows, temperature](Node& nd) {
                              Node& p = *nd.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (std::int64_t r = 0; r < rows; ++r) {
                                const double* y = nd.data.data() + r * len;
                                const double* g = nd.grad.data() + r * len;
                                double dot = 0.0;
                                for (std::int64_t i = 0; i < len; ++i) dot += g[i] * y[i];
                                double* pg = p.grad.data() + r * len;
                                for (std::int64_t i = 0; i < len; ++i)
                                  pg[i] += y[i] * (g[i] - dot) / temperature;
                              }
                            });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  const Shape& s = a.shape();
  std::int64_t len = s.back();
  std::int64_t rows = a.numel() / len;
  if (gain.numel() != len || bias.numel() != len)
    fail("layer_norm: affine params must match last axis " + std::to_string(len));
  const auto& ad = a.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  std::vector<double> out(ad.size());
  std::vector<double> xhat(ad.size());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = ad.data() + r * len;
    double mu = 0.0;
    for (std::int64_t i = 0; i < len; ++i) mu += x[i];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::int64_t i = 0; i < len; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(len);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::int64_t i = 0; i < len; ++i) {
      double xh = (x[i] - mu) * is;
      xhat[r * len + i] = xh;
      out[r * len + i] = gd[i] * xh + bd[i];
    }
  }
  return a.graph()->op_node(
      s, std::move(out), "layer_norm", {a.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [len, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pg = *nd.parents[1];
        Node& pb = *nd.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* g = nd.grad.data() + r * len;
          const double* xh = xhat.data() + r * len;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::int64_t i = 0; i < len; ++i) {
            double dxh = g[i] * pg.data[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[i];
          }
          if (px.requires_grad) {
            double* gx = px.grad.data() + r * len;
            double inv_len = 1.0 / static_cast<double>(len);
            for (std::int64_t i = 0; i < len; ++i) {
              double dxh = g[i] * pg.data[i];
              gx[i] += inv_std[r] * (dxh - inv_len * sum_dxhat - inv_len * xh[i] * sum_dxhat_xhat);
            }
          }
          if (pg.requires_grad)
            for (std::int64_t i = 0; i < len; ++i) pg.grad[i] += g[i] * xh[i];
          if (pb.requires_grad)
            for (std::int64_t i = 0; i < len; ++i) pb.grad[i] += g[i];
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Shape& s = x.shape();
  if (s.size() != 4) fail("batch_norm: expects B*C*H*W, got " + shape_str(s));
  std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  if (gain.numel() != C || bias.numel() != C)
    fail("batch_norm: affine params must have length C=" + std::to_string(C));
  std::int64_t m = B * H * W;
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> inv_std(static_cast<size_t>(C));
  std::int64_t hw = H * W;
  for (std::int64_t c = 0; c < C; ++c) {
    double mu = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = xd.data() + (b * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) mu += p[i];
    }
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = xd.data() + (b * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
    }
    var /= static_cast<double>(m);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[c] = is;
    for (std::int64_t b = 0; b < B; ++b) {
      const double* p = xd.data() + (b * C + c) * hw;
      double* xh = xhat.data() + (b * C + c) * hw;
      double* o = out.data() + (b * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = (p[i] - mu) * is;
        o[i] = gd[c] * xh[i] + bd[c];
      }
    }
  }
  return x.graph()->op_node(
      s, std::move(out), "batch_norm", {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [B, C, hw, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pg = *nd.parents[1];
        Node& pb = *nd.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::int64_t c = 0; c < C; ++c) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::int64_t b = 0; b < B; ++b) {
            const double* g = nd.grad.data() + (b * C + c) * hw;
            const double* xh = xhat.data() + (b * C + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              double dxh = g[i] * pg.data[c];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xh[i];
            }
          }
          double inv_m = 1.0 / static_cast<double>(m);
          for (std::int64_t b = 0; b < B; ++b) {
            const double* g = nd.grad.data() + (b * C + c) * hw;
            const double* xh = xhat.data() + (b * C + c) * hw;
            if (px.requires_grad) {
              double* gx = px.grad.data() + (b * C + c) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                double dxh = g[i] * pg.data[c];
                gx[i] += inv_std[c] * (dxh - inv_m * sum_dxhat - inv_m * xh[i] * sum_dxhat_xhat);
              }
            }
            if (pg.requires_grad)
              for (std::int64_t i = 0; i < hw; ++i) pg.grad[c] += g[i] * xh[i];
            if (pb.requires_grad)
              for (std::int64_t i = 0; i < hw; ++i) pb.grad[c] += g[i];
          }
        }
      });
}

Tensor l2_norm(const Tensor& a) { return sqrt(sum(mul(a, a))); }

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  Tensor dot = sum(mul(a, b));
  return div(dot, mul(l2_norm(a), l2_norm(b)));
}

}  // namespace dsmoe
