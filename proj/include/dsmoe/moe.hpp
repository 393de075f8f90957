// SPDX-License-Identifier: Apache-2.0
//
// Text-visual co-attention gating over a bank of heterogeneous experts with
// top-k sparse dispatch, plus the downstream ensembling and differentiable
// aggregation stages.
#ifndef DSMOE_MOE_HPP
#define DSMOE_MOE_HPP

#include <functional>
#include <string>
#include <vector>

#include "dsmoe/params.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe::moe {

// floor(log2(N_e)), minimum 1; rejects N_e < 2
int top_k_count(int n_e);

struct MoeConfig {
  int n_experts = 8;
  int c_m = 16;             // uniform expert output width, must be even
  int d_g = 16;             // gating latent dimension
  double tau_gate_init = 0.1;
  double tau_route = 0.07;  // fixed temperature of the MLP-router variant
  bool mlp_router = false;  // Stage-8 projector routing instead of co-attention
  int mlp_hidden = 128;
};

struct GateDecision {
  std::vector<double> weights;      // softmax over all experts, sums to 1
  std::vector<int> selected;        // k indices, ties broken toward lower index
  std::vector<double> renormalized; // selected weights rescaled to sum 1
  double tau_used = 0.0;
};

class ExpertBank {
 public:
  ExpertBank(Graph& g, ParamRegistry& reg, const std::string& name, const MoeConfig& cfg,
             int c_b, int d_t, Rng& rng);

  int n_experts() const { return cfg_.n_experts; }
  int c_m() const { return cfg_.c_m; }
  const MoeConfig& config() const { return cfg_; }

  // softmax routing weights, one row per sample; tau <= 0 is rejected
  Tensor gate_weights(const Tensor& f_b, const Tensor& t_hat, double tau) const;
  // same but through the learnable softplus temperature (gradients flow)
  Tensor gate_weights_learnable(const Tensor& f_b, const Tensor& t_hat) const;
  double tau_gate() const;

  // evaluates one expert on a single-sample map, bumping its counter
  Tensor run_expert(int index, const Tensor& f_b_sample, const Tensor& t_hat) const;

  const std::vector<long>& execution_counts() const { return exec_counts_; }
  void reset_execution_counts() { exec_counts_.assign(exec_counts_.size(), 0); }

  // analytic multiply-accumulate counts for one sample at h x w
  double gating_macs(int h, int w) const;
  double expert_macs(int index, int h, int w) const;

  Tensor expert_local(const Tensor& f_b) const;
  Tensor expert_global(const Tensor& f_b) const;
  Tensor expert_cross(const Tensor& f_b, const Tensor& t_hat_row, int cross_index) const;

 private:
  Tensor gate_logits(const Tensor& f_b, const Tensor& t_hat) const;
  Tensor expert_embeddings(const Tensor& t_hat) const;  // N_e x d_t

  Graph* g_;
  MoeConfig cfg_;
  int c_b_, d_t_;
  mutable std::vector<long> exec_counts_;

  Tensor wphi_, wphi_b_;   // 1x1 conv to d_g
  Tensor pseudo_emb_;      // 2 x d_t for the task experts
  Tensor wpsi_;            // d_t -> d_g
  Tensor tau_raw_;         // softplus -> tau_gate
  // MLP-router variant
  Tensor mlp_v1_, mlp_v1b_, mlp_v2_, mlp_v2b_, mlp_v3_, mlp_v3b_;
  Tensor mlp_t1_, mlp_t1b_, mlp_t2_, mlp_t2b_, mlp_t3_, mlp_t3b_;
  // expert 1: axis-decomposed local context
  struct LocalBranch {
    Tensor dw_h, pw_h, pw_hb;  // horizontal k-tap depthwise + pointwise
    Tensor dw_v, pw_v, pw_vb;  // vertical
  };
  std::vector<LocalBranch> local_;  // k = 3 and k = 5
  Tensor local_mix_w_, local_mix_b_;
  // expert 2: pyramidal global context
  Tensor global_w_, global_b_;
  // experts 3..N_e: cross-modal fusion
  struct CrossExpert {
    Tensor wv, wv_b;        // 1x1 conv c_b -> c_m
    Tensor wt;              // d_t -> c_m
    Tensor ln_gain, ln_bias;
  };
  std::vector<CrossExpert> cross_;
};

struct MoeForwardResult {
  Tensor f_moe;  // B x c_m x H x W
  std::vector<GateDecision> decisions;
};

// Top-k sparse dispatch with renormalized weights; unselected experts are
// never executed. k_override = 0 uses floor(log2 N_e); k_override = N_e is
// the dense path.
MoeForwardResult moe_forward(const ExpertBank& bank, const Tensor& f_b, const Tensor& t_hat,
                             int k_override = 0);

struct FlopsReport {
  int k = 0;
  double gating_flops = 0.0;
  double activated_flops = 0.0;
  double dense_flops = 0.0;
  std::vector<double> per_expert_flops;
};

FlopsReport count_flops(const ExpertBank& bank, int k, int h, int w);
// comma-separated rows: k,activated_flops,dense_flops
void write_flops_csv(const std::vector<FlopsReport>& rows, const std::string& path);

class Ensemble {
 public:
  Ensemble(Graph& g, ParamRegistry& reg, const std::string& name, int c_m, int c_b, int d_t,
           int c_g, Rng& rng);
  // F_g: gated expert stream (B x c_m x H x W), F_b: broadcast features,
  // t_hat: C x d_t. Output channels c_g + c_b.
  Tensor forward(const Tensor& f_g, const Tensor& f_b, const Tensor& t_hat) const;
  int out_channels() const { return c_g_ + c_b_; }

 private:
  Graph* g_;
  int c_m_, c_b_, d_t_, c_g_;
  std::vector<Tensor> dil_w_, dil_b_;  // horizontal 3-tap kernels, rates 1..3
  Tensor cross_w_, cross_b_;           // 3x3 over [F_b, tiled text]
};

class Aggregate {
 public:
  Aggregate(Graph& g, ParamRegistry& reg, const std::string& name, int c_e, int c_m, Rng& rng);
  int c_f() const { return c_f_; }
  Tensor forward(const Tensor& f_e, const Tensor& f_moe) const;
  // mean spatial cosine between d(sum_c F_out)/dF_e and d(sum_c F_out)/dF_MoE
  // in closed form (differentiable); zero-gradient positions contribute 0
  Tensor alignment_loss(const Tensor& f_e, const Tensor& f_moe) const;
  // positions whose gradient vectors vanish (they contribute 0 above)
  int count_zero_alignment_positions(const Tensor& f_e, const Tensor& f_moe) const;

 private:
  Graph* g_;
  int c_e_, c_m_, c_f_;
  Tensor wa_, wa_b_;  // 1x1 c_m -> c_e channel attention
  Tensor wf_, wf_b_;  // final 1x1 c_e -> c_f
};

// Generic diagnostic: recomputes out_fn on detached copies of the two
// streams, runs one backward pass of sum(F_out), and returns the mean
// per-position cosine of the two gradients. zero_positions counts sites
// where either gradient vanishes (they contribute 0).
double alignment_from_backward(
    Graph& g, const std::function<Tensor(const Tensor&, const Tensor&)>& out_fn,
    const Tensor& f_e, const Tensor& f_moe, int* zero_positions = nullptr);

}  // namespace dsmoe::moe

#endif
