// SPDX-License-Identifier: Apache-2.0
//
// End-to-end model: prompt embedding and distillation, multi-scale visual
// encoding with CBAM, hyperbolic alignment, text-modulated deformable
// broadcasting, sparse expert routing, ensembling, aggregation, and the
// two-scale decoupled detection heads.
#ifndef DSMOE_MODEL_HPP
#define DSMOE_MODEL_HPP

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dsmoe/broadcast.hpp"
#include "dsmoe/config.hpp"
#include "dsmoe/encoder.hpp"
#include "dsmoe/heads.hpp"
#include "dsmoe/hyperbolic.hpp"
#include "dsmoe/metrics.hpp"
#include "dsmoe/moe.hpp"
#include "dsmoe/synth.hpp"
#include "dsmoe/text.hpp"

namespace dsmoe::harness {

struct ForwardDiag {
  std::vector<moe::GateDecision> gate_decisions;
  double alignment = 0.0;
  double mean_anchor_distance = 0.0;
  std::array<int, 4> adaptive_strides{1, 1, 1, 1};
  std::vector<int> dilations;
  int hierarchy_violations = 0;
  int angle_violations = 0;
  long ball_clamps = 0;
};

struct LossResult {
  Tensor total;
  det::TotalLossBreakdown breakdown;
  ForwardDiag diag;
  int dropped_targets = 0;
};

class DsMoeModel {
 public:
  DsMoeModel(const RunConfig& cfg, std::vector<std::string> prompts,
             std::vector<std::string> class_names);

  LossResult loss(const std::vector<const Sample*>& batch);
  std::vector<det::Prediction> detect(const Sample& sample, int image_id);

  Graph& graph() { return graph_; }
  ParamRegistry& params() { return params_; }
  const RunConfig& config() const { return cfg_; }
  const det::AnchorSet& anchors() const { return anchors_; }
  void set_anchors(const det::AnchorSet& a) { anchors_ = a; }
  void set_taxonomy(const hyper::Taxonomy& t) { taxonomy_ = t; }
  const moe::ExpertBank& bank() const { return *bank_; }
  int n_classes() const { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<std::string>& prompts() const { return prompts_; }

  // analytic per-image activated / dense FLOPs of the expert stage
  moe::FlopsReport flops(int k) const;

  void save(const std::string& path) const;
  static std::unique_ptr<DsMoeModel> load(const std::string& path);

  // exposed for diagnostics and tests
  Tensor batch_to_tensor(const std::vector<const Sample*>& batch);
  struct Features {
    Tensor f_out;
    Tensor f_b, f_moe, f_e;
    Tensor align;
    std::vector<det::HeadOutput> heads;  // [0] stride 4, [1] stride 8
  };
  Features forward(const Tensor& images, ForwardDiag* diag);

 private:
  RunConfig cfg_;
  std::vector<std::string> prompts_, class_names_;
  Graph graph_;
  ParamRegistry params_;
  Rng init_rng_;

  std::unique_ptr<text::TextSemantics> text_;
  std::unique_ptr<enc::VisualEncoder> encoder_;
  std::unique_ptr<enc::Cbam> cbam_;
  Tensor neck_w_, neck_b_;
  Tensor w_align_;             // ball_dim x c_cs
  Tensor w_h_;                 // ball_dim x d_t
  std::unique_ptr<sb::SpaceBroadcast> broadcast_;
  std::unique_ptr<moe::ExpertBank> bank_;
  std::unique_ptr<moe::Ensemble> ensemble_;
  std::unique_ptr<moe::Aggregate> aggregate_;
  Tensor adapt_fine_w_, adapt_fine_b_, adapt_coarse_w_, adapt_coarse_b_;
  std::unique_ptr<det::Cbs> cbs_fine_, cbs_coarse_;
  std::unique_ptr<det::C2f> c2f_fine_, c2f_coarse_;
  std::unique_ptr<det::DecoupledHead> head_fine_, head_coarse_;
  det::AnchorSet anchors_;
  hyper::Taxonomy taxonomy_;
};

}  // namespace dsmoe::harness

#endif
