// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace dsmoe::moe {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inverse(double y) { return std::log(std::expm1(y)); }

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  Conv2dOpts o;
  return conv2d(x, w, &b, o);
}

// LayerNorm across channels at every spatial position
Tensor layer_norm_per_position(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor moved = permute(x, {0, 2, 3, 1});  // B H W C
  Tensor normed = layer_norm(moved, gain, bias);
  (void)B;
  (void)H;
  (void)W;
  (void)C;
  return permute(normed, {0, 3, 1, 2});
}
}  // namespace

int top_k_count(int n_e) {
  if (n_e < 2) fail("top_k_count: need at least 2 experts, got " + std::to_string(n_e));
  int k = static_cast<int>(std::floor(std::log2(static_cast<double>(n_e))));
  return std::max(1, k);
}

ExpertBank::ExpertBank(Graph& g, ParamRegistry& reg, const std::string& name,
                       const MoeConfig& cfg, int c_b, int d_t, Rng& rng)
    : g_(&g), cfg_(cfg), c_b_(c_b), d_t_(d_t) {
  if (cfg.n_experts < 3) fail("expert bank: need N_e >= 3 (two task + cross-modal experts)");
  if (cfg.c_m % 2 != 0) fail("expert bank: c_m must be even for the axis-decomposed expert");
  exec_counts_.assign(static_cast<size_t>(cfg.n_experts), 0);

  auto cstd = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  wphi_ = reg.make_normal(g, name + ".wphi", {cfg.d_g, c_b, 1, 1}, rng, cstd(c_b));
  wphi_b_ = reg.make_fill(g, name + ".wphi_b", {cfg.d_g}, 0.0);
  pseudo_emb_ = reg.make_normal(g, name + ".pseudo_emb", {2, d_t}, rng,
                                1.0 / std::sqrt(static_cast<double>(d_t)));
  wpsi_ = reg.make_normal(g, name + ".wpsi", {d_t, cfg.d_g}, rng,
                          1.0 / std::sqrt(static_cast<double>(d_t)));
  tau_raw_ = reg.make(g, name + ".tau_raw", {1}, {softplus_inverse(cfg.tau_gate_init)});

  if (cfg.mlp_router) {
    int hid = cfg.mlp_hidden;
    mlp_v1_ = reg.make_normal(g, name + ".mlp_v1", {c_b, hid}, rng, cstd(c_b));
    mlp_v1b_ = reg.make_fill(g, name + ".mlp_v1b", {1, hid}, 0.0);
    mlp_v2_ = reg.make_normal(g, name + ".mlp_v2", {hid, hid}, rng, cstd(hid));
    mlp_v2b_ = reg.make_fill(g, name + ".mlp_v2b", {1, hid}, 0.0);
    mlp_v3_ = reg.make_normal(g, name + ".mlp_v3", {hid, cfg.d_g}, rng, cstd(hid));
    mlp_v3b_ = reg.make_fill(g, name + ".mlp_v3b", {1, cfg.d_g}, 0.0);
    mlp_t1_ = reg.make_normal(g, name + ".mlp_t1", {d_t, hid}, rng, cstd(d_t));
    mlp_t1b_ = reg.make_fill(g, name + ".mlp_t1b", {1, hid}, 0.0);
    mlp_t2_ = reg.make_normal(g, name + ".mlp_t2", {hid, hid}, rng, cstd(hid));
    mlp_t2b_ = reg.make_fill(g, name + ".mlp_t2b", {1, hid}, 0.0);
    mlp_t3_ = reg.make_normal(g, name + ".mlp_t3", {hid, cfg.d_g}, rng, cstd(hid));
    mlp_t3b_ = reg.make_fill(g, name + ".mlp_t3b", {1, cfg.d_g}, 0.0);
  }

  int half = cfg.c_m / 2;
  for (int k : {3, 5}) {
    LocalBranch lb;
    std::string p = name + ".local" + std::to_string(k);
    lb.dw_h = reg.make_normal(g, p + ".dw_h", {c_b, 1, 1, k}, rng, 1.0 / std::sqrt(k));
    lb.pw_h = reg.make_normal(g, p + ".pw_h", {half, c_b, 1, 1}, rng, cstd(c_b));
    lb.pw_hb = reg.make_fill(g, p + ".pw_hb", {half}, 0.0);
    lb.dw_v = reg.make_normal(g, p + ".dw_v", {c_b, 1, k, 1}, rng, 1.0 / std::sqrt(k));
    lb.pw_v = reg.make_normal(g, p + ".pw_v", {half, c_b, 1, 1}, rng, cstd(c_b));
    lb.pw_vb = reg.make_fill(g, p + ".pw_vb", {half}, 0.0);
    local_.push_back(std::move(lb));
  }
  local_mix_w_ = reg.make_normal(g, name + ".local_mix_w", {cfg.c_m, cfg.c_m, 1, 1}, rng,
                                 cstd(cfg.c_m));
  local_mix_b_ = reg.make_fill(g, name + ".local_mix_b", {cfg.c_m}, 0.0);

  global_w_ = reg.make_normal(g, name + ".global_w", {cfg.c_m, 2 * c_b, 1, 1}, rng,
                              cstd(2 * c_b));
  global_b_ = reg.make_fill(g, name + ".global_b", {cfg.c_m}, 0.0);

  for (int j = 0; j < cfg.n_experts - 2; ++j) {
    CrossExpert ce;
    std::string p = name + ".cross" + std::to_string(j);
    ce.wv = reg.make_normal(g, p + ".wv", {cfg.c_m, c_b, 1, 1}, rng, cstd(c_b));
    ce.wv_b = reg.make_fill(g, p + ".wv_b", {cfg.c_m}, 0.0);
    ce.wt = reg.make_normal(g, p + ".wt", {d_t, cfg.c_m}, rng,
                            1.0 / std::sqrt(static_cast<double>(d_t)));
    ce.ln_gain = reg.make_fill(g, p + ".ln_gain", {cfg.c_m}, 1.0);
    ce.ln_bias = reg.make_fill(g, p + ".ln_bias", {cfg.c_m}, 0.0);
    cross_.push_back(std::move(ce));
  }
}

double ExpertBank::tau_gate() const { return softplus(tau_raw_.at(0)); }

Tensor ExpertBank::expert_embeddings(const Tensor& t_hat) const {
  int C = t_hat.dim(0);
  std::vector<Tensor> rows{pseudo_emb_};
  int need = cfg_.n_experts - 2;
  int taken = 0;
  while (taken < need) {
    int chunk = std::min(C, need - taken);
    rows.push_back(slice(t_hat, 0, 0, chunk));
    taken += chunk;
  }
  return concat(rows, 0);
}

Tensor ExpertBank::gate_logits(const Tensor& f_b, const Tensor& t_hat) const {
  int B = f_b.dim(0);
  Tensor phi, psi;
  if (cfg_.mlp_router) {
    Tensor v = global_avg_pool(f_b);  // B x c_b
    v = silu(add(matmul(v, mlp_v1_), expand(mlp_v1b_, {B, cfg_.mlp_hidden})));
    v = silu(add(matmul(v, mlp_v2_), expand(mlp_v2b_, {B, cfg_.mlp_hidden})));
    phi = add(matmul(v, mlp_v3_), expand(mlp_v3b_, {B, cfg_.d_g}));
    Tensor e = expert_embeddings(t_hat);  // N_e x d_t
    int n = cfg_.n_experts;
    Tensor t = silu(add(matmul(e, mlp_t1_), expand(mlp_t1b_, {n, cfg_.mlp_hidden})));
    t = silu(add(matmul(t, mlp_t2_), expand(mlp_t2b_, {n, cfg_.mlp_hidden})));
    psi = add(matmul(t, mlp_t3_), expand(mlp_t3b_, {n, cfg_.d_g}));
  } else {
    phi = global_avg_pool(conv1x1(f_b, wphi_, wphi_b_));  // B x d_g
    psi = matmul(expert_embeddings(t_hat), wpsi_);        // N_e x d_g
  }
  return matmul(phi, permute(psi, {1, 0}));  // B x N_e
}

Tensor ExpertBank::gate_weights(const Tensor& f_b, const Tensor& t_hat, double tau) const {
  if (tau <= 0.0) fail("gate: temperature must be positive, got " + std::to_string(tau));
  return softmax(gate_logits(f_b, t_hat), tau);
}

Tensor ExpertBank::gate_weights_learnable(const Tensor& f_b, const Tensor& t_hat) const {
  if (cfg_.mlp_router) return gate_weights(f_b, t_hat, cfg_.tau_route);
  Tensor logits = gate_logits(f_b, t_hat);
  // softplus keeps the learnable temperature positive
  Tensor tau = log(add_scalar(exp(tau_raw_), 1.0));
  Tensor scaled = div(logits, expand(reshape(tau, {1, 1}), logits.shape()));
  return softmax(scaled, 1.0);
}

Tensor ExpertBank::expert_local(const Tensor& f_b) const {
  Tensor acc;
  for (size_t i = 0; i < local_.size(); ++i) {
    int k = (i == 0) ? 3 : 5;
    const LocalBranch& lb = local_[i];
    Conv2dOpts oh;
    oh.groups = c_b_;
    oh.pad_w = (k - 1) / 2;
    Tensor h = conv1x1(conv2d(f_b, lb.dw_h, nullptr, oh), lb.pw_h, lb.pw_hb);
    Conv2dOpts ov;
    ov.groups = c_b_;
    ov.pad_h = (k - 1) / 2;
    Tensor v = conv1x1(conv2d(f_b, lb.dw_v, nullptr, ov), lb.pw_v, lb.pw_vb);
    Tensor branch = concat({h, v}, 1);  // c_m channels
    acc = acc.defined() ? add(acc, branch) : branch;
  }
  return conv1x1(acc, local_mix_w_, local_mix_b_);
}

Tensor ExpertBank::expert_global(const Tensor& f_b) const {
  int H = f_b.dim(2), W = f_b.dim(3);
  std::vector<Tensor> branches;
  for (int s : {16, 32}) {
    int win_h = std::min(s, H), win_w = std::min(s, W);
    // window clamps to the map at toy resolutions (global pooling)
    if (H % win_h != 0 || W % win_w != 0) {
      win_h = H;
      win_w = W;
    }
    int win = std::min(win_h, win_w);
    Tensor pooled = avg_pool(f_b, win, win);
    branches.push_back(upsample_nearest(pooled, win));
  }
  return conv1x1(concat(branches, 1), global_w_, global_b_);
}

Tensor ExpertBank::expert_cross(const Tensor& f_b, const Tensor& t_hat_row, int cross_index) const {
  if (cross_index < 0 || cross_index >= static_cast<int>(cross_.size()))
    fail("expert_cross: index out of range");
  const CrossExpert& ce = cross_[static_cast<size_t>(cross_index)];
  int B = f_b.dim(0), H = f_b.dim(2), W = f_b.dim(3);
  Tensor visual = conv1x1(f_b, ce.wv, ce.wv_b);                  // B x c_m x H x W
  Tensor tvec = matmul(t_hat_row, ce.wt);                        // 1 x c_m
  Tensor tmap = expand(reshape(tvec, {1, cfg_.c_m, 1, 1}), {B, cfg_.c_m, H, W});
  return layer_norm_per_position(add(visual, tmap), ce.ln_gain, ce.ln_bias);
}

Tensor ExpertBank::run_expert(int index, const Tensor& f_b_sample, const Tensor& t_hat) const {
  if (index < 0 || index >= cfg_.n_experts) fail("run_expert: index out of range");
  ++exec_counts_[static_cast<size_t>(index)];
  if (index == 0) return expert_local(f_b_sample);
  if (index == 1) return expert_global(f_b_sample);
  int class_row = (index - 2) % t_hat.dim(0);  // cyclic class binding
  return expert_cross(f_b_sample, slice(t_hat, 0, class_row, 1), index - 2);
}

double ExpertBank::gating_macs(int h, int w) const {
  double hw = static_cast<double>(h) * w;
  if (cfg_.mlp_router) {
    double v = c_b_ * static_cast<double>(cfg_.mlp_hidden) +
               static_cast<double>(cfg_.mlp_hidden) * cfg_.mlp_hidden +
               static_cast<double>(cfg_.mlp_hidden) * cfg_.d_g;
    double t = cfg_.n_experts * (d_t_ * static_cast<double>(cfg_.mlp_hidden) +
                                 static_cast<double>(cfg_.mlp_hidden) * cfg_.mlp_hidden +
                                 static_cast<double>(cfg_.mlp_hidden) * cfg_.d_g);
    return hw * c_b_ + v + t + cfg_.n_experts * static_cast<double>(cfg_.d_g);
  }
  return hw * c_b_ * cfg_.d_g                                   // 1x1 projection
         + cfg_.n_experts * static_cast<double>(d_t_) * cfg_.d_g  // psi embeddings
         + cfg_.n_experts * static_cast<double>(cfg_.d_g);        // inner products
}

double ExpertBank::expert_macs(int index, int h, int w) const {
  double hw = static_cast<double>(h) * w;
  int half = cfg_.c_m / 2;
  if (index == 0) {
    double macs = 0.0;
    for (int k : {3, 5})
      macs += hw * c_b_ * k * 2          // depthwise h + v
              + hw * c_b_ * half * 2.0;  // pointwise h + v
    macs += hw * cfg_.c_m * cfg_.c_m;    // fuse 1x1
    return macs;
  }
  if (index == 1) {
    return hw * c_b_ * 2.0               // two pooling passes
           + hw * 2.0 * c_b_ * cfg_.c_m; // fuse 1x1
  }
  return hw * c_b_ * cfg_.c_m            // visual 1x1
         + static_cast<double>(d_t_) * cfg_.c_m  // text projection
         + hw * cfg_.c_m * 2.0;          // per-position normalization
}

MoeForwardResult moe_forward(const ExpertBank& bank, const Tensor& f_b, const Tensor& t_hat,
                             int k_override) {
  int B = f_b.dim(0);
  int n_e = bank.n_experts();
  int k = k_override > 0 ? k_override : top_k_count(n_e);
  if (k > n_e) fail("moe_forward: k exceeds the number of experts");

  Tensor weights = bank.gate_weights_learnable(f_b, t_hat);  // B x N_e
  MoeForwardResult res;
  std::vector<Tensor> outs;
  for (int b = 0; b < B; ++b) {
    Tensor sample = slice(f_b, 0, b, 1);
    Tensor wrow = slice(weights, 0, b, 1);  // 1 x N_e

    GateDecision dec;
    dec.tau_used = bank.config().mlp_router ? bank.config().tau_route : bank.tau_gate();
    dec.weights.resize(static_cast<size_t>(n_e));
    for (int i = 0; i < n_e; ++i) dec.weights[static_cast<size_t>(i)] = wrow.at(i);

    std::vector<int> order(static_cast<size_t>(n_e));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b2) {
      if (dec.weights[static_cast<size_t>(a)] != dec.weights[static_cast<size_t>(b2)])
        return dec.weights[static_cast<size_t>(a)] > dec.weights[static_cast<size_t>(b2)];
      return a < b2;  // ties: lower index wins
    });
    dec.selected.assign(order.begin(), order.begin() + k);

    // renormalize the selected weights on-graph so gradients flow
    std::vector<Tensor> sel;
    for (int i : dec.selected) sel.push_back(slice(wrow, 1, i, 1));
    Tensor sel_cat = concat(sel, 1);            // 1 x k
    Tensor denom = sum(sel_cat);
    Tensor sample_out;
    for (int si = 0; si < k; ++si) {
      Tensor wnorm = div(sel[static_cast<size_t>(si)], reshape(denom, {1, 1}));  // 1 x 1
      dec.renormalized.push_back(wnorm.at(0));
      Tensor eout = bank.run_expert(dec.selected[static_cast<size_t>(si)], sample, t_hat);
      Tensor weighted = mul(eout, expand(reshape(wnorm, {1, 1, 1, 1}), eout.shape()));
      sample_out = sample_out.defined() ? add(sample_out, weighted) : weighted;
    }
    outs.push_back(sample_out);
    res.decisions.push_back(std::move(dec));
  }
  res.f_moe = B == 1 ? outs[0] : concat(outs, 0);
  return res;
}

FlopsReport count_flops(const ExpertBank& bank, int k, int h, int w) {
  int n_e = bank.n_experts();
  if (k < 1 || k > n_e) fail("count_flops: k must be in [1, N_e]");
  FlopsReport rep;
  rep.k = k;
  rep.gating_flops = 2.0 * bank.gating_macs(h, w);
  for (int i = 0; i < n_e; ++i)
    rep.per_expert_flops.push_back(2.0 * bank.expert_macs(i, h, w));
  // top-k cannot be known without data; the analytic model charges the k
  // cheapest-to-dearest invariant cost by summing the first k experts in
  // index order, which matches the uniform-cost reading of the sweep
  double act = rep.gating_flops, dense = rep.gating_flops;
  for (int i = 0; i < n_e; ++i) {
    dense += rep.per_expert_flops[static_cast<size_t>(i)];
    if (i < k) act += rep.per_expert_flops[static_cast<size_t>(i)];
  }
  rep.activated_flops = act;
  rep.dense_flops = dense;
  return rep;
}

void write_flops_csv(const std::vector<FlopsReport>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("flops csv: cannot write " + path);
  f << "k,activated_flops,dense_flops\n";
  for (const auto& r : rows)
    f << r.k << "," << r.activated_flops << "," << r.dense_flops << "\n";
}

Ensemble::Ensemble(Graph& g, ParamRegistry& reg, const std::string& name, int c_m, int c_b,
                   int d_t, int c_g, Rng& rng)
    : g_(&g), c_m_(c_m), c_b_(c_b), d_t_(d_t), c_g_(c_g) {
  auto cstd = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  for (int rate = 1; rate <= 3; ++rate) {
    dil_w_.push_back(reg.make_normal(g, name + ".dil" + std::to_string(rate) + "_w",
                                     {c_g, c_m, 1, 3}, rng, cstd(3 * c_m)));
    dil_b_.push_back(reg.make_fill(g, name + ".dil" + std::to_string(rate) + "_b", {c_g}, 0.0));
  }
  cross_w_ = reg.make_normal(g, name + ".cross_w", {c_b, c_b + d_t, 3, 3}, rng,
                             cstd(9 * (c_b + d_t)));
  cross_b_ = reg.make_fill(g, name + ".cross_b", {c_b}, 0.0);
}

Tensor Ensemble::forward(const Tensor& f_g, const Tensor& f_b, const Tensor& t_hat) const {
  if (f_g.dim(2) != f_b.dim(2) || f_g.dim(3) != f_b.dim(3))
    fail("ensemble: spatial mismatch between " + shape_str(f_g.shape()) + " and " +
         shape_str(f_b.shape()));
  int B = f_b.dim(0), H = f_b.dim(2), W = f_b.dim(3);
  // spatial stream: horizontal 3-tap kernels at dilation rates 1, 2, 3
  Tensor spatial;
  for (int rate = 1; rate <= 3; ++rate) {
    Conv2dOpts o;
    o.dil_w = rate;
    o.pad_w = rate;
    Tensor r = conv2d(f_g, dil_w_[static_cast<size_t>(rate - 1)],
                      &dil_b_[static_cast<size_t>(rate - 1)], o);
    spatial = spatial.defined() ? add(spatial, r) : r;
  }
  // cross-modal stream: 3x3 conv over the broadcast features joined with the
  // class-averaged text embedding tiled over space
  Tensor t_ctx = mean(t_hat, 0, false);  // d_t
  Tensor t_map = expand(reshape(t_ctx, {1, d_t_, 1, 1}), {B, d_t_, H, W});
  Conv2dOpts o3;
  o3.pad_h = o3.pad_w = 1;
  Tensor cross = conv2d(concat({f_b, t_map}, 1), cross_w_, &cross_b_, o3);
  return concat({spatial, cross}, 1);  // c_g + c_b channels
}

Aggregate::Aggregate(Graph& g, ParamRegistry& reg, const std::string& name, int c_e, int c_m,
                     Rng& rng)
    : g_(&g), c_e_(c_e), c_m_(c_m), c_f_((c_e + c_m) / 2) {
  auto cstd = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  wa_ = reg.make_normal(g, name + ".wa", {c_e, c_m, 1, 1}, rng, cstd(c_m));
  wa_b_ = reg.make_fill(g, name + ".wa_b", {c_e}, 0.0);
  wf_ = reg.make_normal(g, name + ".wf", {c_f_, c_e, 1, 1}, rng, cstd(c_e));
  wf_b_ = reg.make_fill(g, name + ".wf_b", {c_f_}, 0.0);
}

Tensor Aggregate::forward(const Tensor& f_e, const Tensor& f_moe) const {
  if (f_e.dim(1) != c_e_ || f_moe.dim(1) != c_m_)
    fail("aggregate: channel mismatch, F_e " + shape_str(f_e.shape()) + " F_MoE " +
         shape_str(f_moe.shape()));
  if (f_e.dim(2) != f_moe.dim(2) || f_e.dim(3) != f_moe.dim(3))
    fail("aggregate: spatial mismatch");
  Tensor att = sigmoid(conv1x1(f_moe, wa_, wa_b_));
  return conv1x1(mul(f_e, att), wf_, wf_b_);
}

Tensor Aggregate::alignment_loss(const Tensor& f_e, const Tensor& f_moe) const {
  // closed-form per-position gradients of sum_c F_out:
  //   d/dF_e   = s ⊙ A          with s_e = sum_c wf[c, e]
  //   d/dF_MoE = W_a^T (s ⊙ A ⊙ (1 - A) ⊙ F_e)
  // The two vectors live in C_e and C_m dimensions; the shorter one is
  // zero-padded, so the dot runs over the common prefix while both norms
  // stay full.
  Tensor att = sigmoid(conv1x1(f_moe, wa_, wa_b_));
  Tensor s = sum(reshape(wf_, {c_f_, c_e_}), 0, false);              // c_e
  Tensor s_map = expand(reshape(s, {1, c_e_, 1, 1}), att.shape());
  Tensor grad_e = mul(s_map, att);                                    // B x c_e x H x W
  Tensor inner = mul(mul(grad_e, add_scalar(neg(att), 1.0)), f_e);    // s A (1-A) F_e
  Tensor wa_t = permute(reshape(wa_, {c_e_, c_m_}), {1, 0});
  Tensor grad_m = conv2d(inner, reshape(wa_t, {c_m_, c_e_, 1, 1}), nullptr, {});  // B x c_m

  int common = std::min(c_e_, c_m_);
  Tensor dot = sum(mul(slice(grad_e, 1, 0, common), slice(grad_m, 1, 0, common)), 1, true);
  Tensor ne = sqrt(sum(mul(grad_e, grad_e), 1, true));
  Tensor nm = sqrt(sum(mul(grad_m, grad_m), 1, true));
  // zero-gradient positions contribute 0: the dot vanishes with the norms
  Tensor cosine = div(dot, maximum_scalar(mul(ne, nm), 1e-24));
  return mean(cosine);
}

int Aggregate::count_zero_alignment_positions(const Tensor& f_e, const Tensor& f_moe) const {
  Graph scratch;
  Tensor fe = scratch.leaf(f_e.shape(), f_e.data());
  Tensor fm = scratch.leaf(f_moe.shape(), f_moe.data());
  Tensor wa = scratch.leaf(wa_.shape(), wa_.data());
  Tensor wab = scratch.leaf(wa_b_.shape(), wa_b_.data());
  Tensor att = sigmoid(conv2d(fm, wa, &wab, {}));
  std::vector<double> scol(static_cast<size_t>(c_e_), 0.0);
  for (int c = 0; c < c_f_; ++c)
    for (int e = 0; e < c_e_; ++e) scol[static_cast<size_t>(e)] += wf_.at(c * c_e_ + e);
  int B = f_e.dim(0), H = f_e.dim(2), W = f_e.dim(3);
  int zeros = 0;
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double ne = 0.0, nm = 0.0;
        std::vector<double> u(static_cast<size_t>(c_e_));
        for (int e = 0; e < c_e_; ++e) {
          double a = att.at(((b * c_e_ + e) * H + y) * W + x);
          double ge = scol[static_cast<size_t>(e)] * a;
          ne += ge * ge;
          u[static_cast<size_t>(e)] =
              ge * (1.0 - a) * f_e.at(((b * c_e_ + e) * H + y) * W + x);
        }
        for (int m = 0; m < c_m_; ++m) {
          double gm = 0.0;
          for (int e = 0; e < c_e_; ++e) gm += wa_.at(e * c_m_ + m) * u[static_cast<size_t>(e)];
          nm += gm * gm;
        }
        if (ne <= 0.0 || nm <= 0.0) ++zeros;
      }
  return zeros;
}

double alignment_from_backward(
    Graph& g, const std::function<Tensor(const Tensor&, const Tensor&)>& out_fn,
    const Tensor& f_e, const Tensor& f_moe, int* zero_positions) {
  Tensor fe_d = detach(f_e, g, /*requires_grad=*/true);
  Tensor fm_d = detach(f_moe, g, /*requires_grad=*/true);
  Tensor out = out_fn(fe_d, fm_d);
  g.backward(sum(out));
  int B = f_e.dim(0), Ce = f_e.dim(1), H = f_e.dim(2), W = f_e.dim(3);
  int Cm = f_moe.dim(1);
  // a stream the output never touches keeps an empty gradient buffer,
  // which reads as all-zeros
  std::vector<double> ge = fe_d.grad();
  std::vector<double> gm = fm_d.grad();
  if (ge.empty()) ge.assign(static_cast<size_t>(f_e.numel()), 0.0);
  if (gm.empty()) gm.assign(static_cast<size_t>(f_moe.numel()), 0.0);
  double total = 0.0;
  int zeros = 0;
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double dot = 0.0, ne = 0.0, nm = 0.0;
        for (int c = 0; c < Ce; ++c) {
          double v = ge[static_cast<size_t>(((b * Ce + c) * H + y) * W + x)];
          ne += v * v;
        }
        for (int c = 0; c < Cm; ++c) {
          double v = gm[static_cast<size_t>(((b * Cm + c) * H + y) * W + x)];
          nm += v * v;
        }
        if (ne <= 0.0 || nm <= 0.0) {
          ++zeros;
          continue;
        }
        int cc = std::min(Ce, Cm);
        (void)cc;
        for (int c = 0; c < std::min(Ce, Cm); ++c) {
          double a = ge[static_cast<size_t>(((b * Ce + c) * H + y) * W + x)];
          double m = gm[static_cast<size_t>(((b * Cm + c) * H + y) * W + x)];
          dot += a * m;
        }
        total += dot / (std::sqrt(ne) * std::sqrt(nm));
      }
  if (zero_positions) *zero_positions = zeros;
  return total / static_cast<double>(B * H * W);
}

}  // namespace dsmoe::moe
