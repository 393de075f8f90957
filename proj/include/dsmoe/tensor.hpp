// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense tensor with reverse-mode automatic differentiation.
// Tape-style: every op appends a node to its Graph; backward walks the
// tape in reverse append order exactly once. 64-bit reals throughout,
// row-major flat storage, no views.
#ifndef DSMOE_TENSOR_HPP
#define DSMOE_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dsmoe {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

class Graph;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // scatters node.grad into parents

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Value-semantic handle onto a graph node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::shared_ptr<Node> node, Graph* graph) : node_(std::move(node)), graph_(graph) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return node_->numel(); }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;
  double at(std::int64_t i) const { return node_->data[static_cast<size_t>(i)]; }

  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
  Graph* graph() const { return graph_; }
  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
  Graph* graph_ = nullptr;
};

// Owns the op tape. Leaf tensors (parameters, inputs) are owned by their
// creators and survive clear(); op nodes live on the tape until cleared.
class Graph {
 public:
  Tensor leaf(const Shape& shape, std::vector<double> data, bool requires_grad = false);
  Tensor leaf(const Shape& shape, double fill = 0.0, bool requires_grad = false);
  Tensor scalar(double v, bool requires_grad = false);

  // Appends an op node. Forward data must already be computed.
  Tensor op_node(const Shape& shape, std::vector<double> data, const char* op,
                 std::vector<std::shared_ptr<Node>> parents,
                 std::function<void(Node&)> backward_fn);

  // Reverse-mode sweep from a scalar loss. Rejects non-scalar losses.
  void backward(const Tensor& loss);

  // Drops all op nodes; leaves stay valid.
  void clear() { tape_.clear(); }
  std::size_t tape_size() const { return tape_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> tape_;
};

namespace detail {
void accumulate(Node& parent, const std::vector<double>& g);
}

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);   // numpy-style broadcasting, equal rank
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor abs_val(const Tensor& a);
Tensor log(const Tensor& a);      // rejects x <= 0
Tensor sqrt(const Tensor& a);     // rejects x < 0
Tensor exp(const Tensor& a);
Tensor power(const Tensor& a, double p);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor artanh(const Tensor& a);   // rejects |x| >= 1, never clamps
Tensor relu6(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor maximum_scalar(const Tensor& a, double s);
Tensor minimum_scalar(const Tensor& a, double s);
Tensor atan(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- shape ----
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor expand(const Tensor& a, const Shape& target);  // dims of size 1 -> n
Tensor detach(const Tensor& a, Graph& g, bool requires_grad = false);

// ---- linear algebra / conv ----
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only
struct Conv2dOpts {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dil_h = 1, dil_w = 1;
  int groups = 1;
};
// x: B*Cin*H*W, w: Cout*(Cin/groups)*kh*kw, bias optional (Cout)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dOpts& opts);
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor avg_pool(const Tensor& x, int k, int stride);
Tensor max_pool(const Tensor& x, int k, int stride);
Tensor global_avg_pool(const Tensor& x);  // B*C*H*W -> B*C
Tensor global_max_pool(const Tensor& x);

// img: B*C*H*W; xs,ys: B*N fractional coords -> B*C*N.
// Zero-padded outside the image, matching conv zero padding.
Tensor bilinear_sample(const Tensor& img, const Tensor& xs, const Tensor& ys);

// ---- reductions / normalization ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim);
Tensor mean(const Tensor& a, int axis, bool keepdim);
Tensor max_reduce(const Tensor& a, int axis, bool keepdim);
Tensor softmax(const Tensor& a, double temperature = 1.0);  // last axis; rejects tau <= 0
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-9);
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-9);

// ---- composites ----
Tensor l2_norm(const Tensor& a);                              // scalar
Tensor cosine_similarity(const Tensor& a, const Tensor& b);   // flat vectors -> scalar

}  // namespace dsmoe

#endif
