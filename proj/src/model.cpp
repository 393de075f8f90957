// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dsmoe::harness {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

det::AnchorSet default_anchors() {
  det::AnchorSet a;
  a.anchors = {{0.06, 0.06}, {0.12, 0.1}, {0.1, 0.2},
               {0.25, 0.2}, {0.3, 0.35}, {0.55, 0.5}};
  a.per_scale = 3;
  return a;
}
}  // namespace

DsMoeModel::DsMoeModel(const RunConfig& cfg, std::vector<std::string> prompts,
                       std::vector<std::string> class_names)
    : cfg_(cfg), prompts_(std::move(prompts)), class_names_(std::move(class_names)),
      init_rng_(cfg.seed ^ 0x5851f42d4c957f2dULL), anchors_(default_anchors()) {
  cfg_.validate();
  if (prompts_.size() != class_names_.size() || prompts_.empty())
    fail("model: prompts and class names must align");
  taxonomy_.parent.assign(class_names_.size(), std::nullopt);

  text_ = std::make_unique<text::TextSemantics>(graph_, params_, cfg_.d_t, cfg_.heads,
                                                init_rng_);
  encoder_ = std::make_unique<enc::VisualEncoder>(graph_, params_, cfg_.enc_widths, init_rng_);
  int concat_c = cfg_.enc_widths[0] + cfg_.enc_widths[1] + cfg_.enc_widths[2] +
                 cfg_.enc_widths[3];
  neck_w_ = params_.make_normal(graph_, "neck.w", {cfg_.c_cs, concat_c, 1, 1}, init_rng_,
                                std::sqrt(2.0 / concat_c));
  neck_b_ = params_.make_fill(graph_, "neck.b", {cfg_.c_cs}, 0.0);
  cbam_ = std::make_unique<enc::Cbam>(graph_, params_, "cbam", cfg_.c_cs, 4, init_rng_);
  w_align_ = params_.make_normal(graph_, "align.w", {cfg_.ball_dim, cfg_.c_cs}, init_rng_,
                                 1.0 / std::sqrt(cfg_.c_cs));
  w_h_ = params_.make_normal(graph_, "align.w_h", {cfg_.ball_dim, cfg_.d_t}, init_rng_,
                             1.0 / std::sqrt(cfg_.d_t));
  sb::BroadcastConfig bcfg;
  broadcast_ = std::make_unique<sb::SpaceBroadcast>(graph_, params_, "sb", cfg_.c_cs,
                                                    cfg_.ball_dim, cfg_.d_t, cfg_.c_b, bcfg,
                                                    init_rng_);
  moe::MoeConfig mcfg;
  mcfg.n_experts = cfg_.n_experts;
  mcfg.c_m = cfg_.c_m;
  mcfg.d_g = cfg_.d_g;
  mcfg.tau_gate_init = cfg_.tau_gate_init;
  mcfg.tau_route = cfg_.tau_route;
  mcfg.mlp_router = cfg_.mlp_router;
  bank_ = std::make_unique<moe::ExpertBank>(graph_, params_, "moe", mcfg, cfg_.c_b, cfg_.d_t,
                                            init_rng_);
  ensemble_ = std::make_unique<moe::Ensemble>(graph_, params_, "ens", cfg_.c_m, cfg_.c_b,
                                              cfg_.d_t, cfg_.c_g, init_rng_);
  aggregate_ = std::make_unique<moe::Aggregate>(graph_, params_, "agg", cfg_.c_g + cfg_.c_b,
                                                cfg_.c_m, init_rng_);
  int c_f = aggregate_->c_f();
  int shallow_c = 16;
  adapt_fine_w_ = params_.make_normal(graph_, "adapt_fine.w", {shallow_c, cfg_.enc_widths[0], 1, 1},
                                      init_rng_, std::sqrt(2.0 / cfg_.enc_widths[0]));
  adapt_fine_b_ = params_.make_fill(graph_, "adapt_fine.b", {shallow_c}, 0.0);
  adapt_coarse_w_ = params_.make_normal(graph_, "adapt_coarse.w",
                                        {shallow_c, cfg_.enc_widths[1], 1, 1}, init_rng_,
                                        std::sqrt(2.0 / cfg_.enc_widths[1]));
  adapt_coarse_b_ = params_.make_fill(graph_, "adapt_coarse.b", {shallow_c}, 0.0);
  cbs_fine_ = std::make_unique<det::Cbs>(graph_, params_, "cbs_fine", c_f, cfg_.head_channels,
                                         init_rng_);
  cbs_coarse_ = std::make_unique<det::Cbs>(graph_, params_, "cbs_coarse", c_f,
                                           cfg_.head_channels, init_rng_);
  c2f_fine_ = std::make_unique<det::C2f>(graph_, params_, "c2f_fine",
                                         cfg_.head_channels + shallow_c, cfg_.head_channels,
                                         init_rng_);
  c2f_coarse_ = std::make_unique<det::C2f>(graph_, params_, "c2f_coarse",
                                           cfg_.head_channels + shallow_c, cfg_.head_channels,
                                           init_rng_);
  int n_classes = static_cast<int>(class_names_.size());
  head_fine_ = std::make_unique<det::DecoupledHead>(graph_, params_, "head_fine",
                                                    cfg_.head_channels, n_classes,
                                                    cfg_.anchors_per_scale, init_rng_);
  head_coarse_ = std::make_unique<det::DecoupledHead>(graph_, params_, "head_coarse",
                                                      cfg_.head_channels, n_classes,
                                                      cfg_.anchors_per_scale, init_rng_);
}

Tensor DsMoeModel::batch_to_tensor(const std::vector<const Sample*>& batch) {
  if (batch.empty()) fail("model: empty batch");
  int size = batch[0]->image.w;
  std::vector<double> data;
  data.reserve(static_cast<size_t>(batch.size()) * 3 * size * size);
  for (const Sample* s : batch) {
    if (s->image.w != size || s->image.h != size) fail("model: mixed image sizes in batch");
    data.insert(data.end(), s->image.data.begin(), s->image.data.end());
  }
  return graph_.leaf({static_cast<int>(batch.size()), 3, size, size}, std::move(data));
}

DsMoeModel::Features DsMoeModel::forward(const Tensor& images, ForwardDiag* diag) {
  hyper::reset_clamp_events();
  int B = images.dim(0);
  int C = n_classes();

  // Stages 1-2: prompt stubs, positional encoding, attention distillation
  text::PromptSet ps;
  ps.prompts = prompts_;
  ps.class_names = class_names_;
  Tensor t_hat = text_->distill(text_->embed(ps, cfg_.seed)).matrix;  // C x d_t

  // Stage 3: multi-scale encoding
  auto ms = encoder_->encode(images);
  if (diag) diag->adaptive_strides = ms.adaptive;

  // fuse the pyramid at stride 8 and refine with CBAM (Stage 4)
  Tensor merged = concat({avg_pool(ms.levels[0], 2, 2), ms.levels[1],
                          upsample_nearest(ms.levels[2], 2), upsample_nearest(ms.levels[3], 4)},
                         1);
  Conv2dOpts o1;
  Tensor f_enc = relu6(conv2d(merged, neck_w_, &neck_b_, o1));
  Tensor f_cs = cbam_->forward(f_enc);

  // Stage 5: hyperbolic alignment
  Tensor pooled = global_avg_pool(f_cs);                       // B x c_cs
  Tensor v = matmul(pooled, permute(w_align_, {1, 0}));        // B x n
  Tensor anchors_t = hyper::semantic_anchors(t_hat, w_h_);     // C x n
  Tensor v_rows = reshape(expand(reshape(v, {B, 1, cfg_.ball_dim}), {B, C, cfg_.ball_dim}),
                          {B * C, cfg_.ball_dim});
  Tensor anchor_rows = reshape(
      expand(reshape(anchors_t, {1, C, cfg_.ball_dim}), {B, C, cfg_.ball_dim}),
      {B * C, cfg_.ball_dim});
  Tensor g_aligned = reshape(hyper::geometric_fusion_rows(v_rows, anchor_rows, cfg_.beta),
                             {B, C, cfg_.ball_dim});

  // anchor geometry diagnostics feed the dilation rate
  double d_h = 0.0;
  {
    std::vector<hyper::PoincarePoint> pts;
    const auto& ad = anchors_t.data();
    for (int i = 0; i < C; ++i)
      pts.push_back({hyper::Vec(ad.begin() + i * cfg_.ball_dim,
                                ad.begin() + (i + 1) * cfg_.ball_dim)});
    int pairs = 0;
    for (int i = 0; i < C; ++i)
      for (int j = i + 1; j < C; ++j) {
        d_h += hyper::poincare_distance(pts[static_cast<size_t>(i)],
                                        pts[static_cast<size_t>(j)]);
        ++pairs;
      }
    if (pairs > 0) d_h /= pairs;
    if (diag) {
      diag->mean_anchor_distance = d_h;
      auto rep = hyper::hierarchy_check(pts, taxonomy_);
      diag->hierarchy_violations = static_cast<int>(rep.violations.size());
      // Stage-5 angle consistency between the visual tangent vector and the
      // anchor tangent representatives
      const auto& vd = v.data();
      int violations = 0;
      for (int b = 0; b < B; ++b) {
        hyper::Vec vb(vd.begin() + b * cfg_.ball_dim, vd.begin() + (b + 1) * cfg_.ball_dim);
        if (hyper::vec_norm(vb) == 0.0) continue;
        for (int i = 0; i < C; ++i) {
          hyper::Vec ti = hyper::log_map_origin(pts[static_cast<size_t>(i)]);
          if (hyper::vec_norm(ti) == 0.0) continue;
          if (!hyper::angle_consistency(vb, ti)) ++violations;
        }
      }
      diag->angle_violations = violations;
    }
  }

  // Stage 6: deformable space broadcasting
  auto bout = broadcast_->forward(f_cs, g_aligned, t_hat, d_h);
  if (diag)
    for (const auto& dsc : bout.per_scale) diag->dilations.push_back(dsc.dilation);

  // Stages 7-8: gated sparse expert mixture
  auto mres = moe::moe_forward(*bank_, bout.f_b, t_hat, cfg_.k_override);
  if (diag) diag->gate_decisions = mres.decisions;

  // Stages 9-10: ensembling and differentiable aggregation
  Tensor f_e = ensemble_->forward(mres.f_moe, bout.f_b, t_hat);
  Tensor f_out = aggregate_->forward(f_e, mres.f_moe);
  Tensor align = aggregate_->alignment_loss(f_e, mres.f_moe);
  if (diag) {
    diag->alignment = align.item();
    diag->ball_clamps = hyper::clamp_events();
  }

  // decoupled heads at strides 4 and 8
  Features feats;
  feats.f_b = bout.f_b;
  feats.f_moe = mres.f_moe;
  feats.f_e = f_e;
  feats.f_out = f_out;
  feats.align = align;
  Conv2dOpts oa;
  Tensor shallow_fine = conv2d(ms.levels[0], adapt_fine_w_, &adapt_fine_b_, oa);
  Tensor shallow_coarse = conv2d(ms.levels[1], adapt_coarse_w_, &adapt_coarse_b_, oa);
  Tensor fine = c2f_fine_->forward(cbs_fine_->forward(upsample_nearest(f_out, 2)), shallow_fine);
  Tensor coarse = c2f_coarse_->forward(cbs_coarse_->forward(f_out), shallow_coarse);
  feats.heads.push_back(head_fine_->forward(fine));
  feats.heads.push_back(head_coarse_->forward(coarse));
  return feats;
}

LossResult DsMoeModel::loss(const std::vector<const Sample*>& batch) {
  LossResult out;
  Tensor images = batch_to_tensor(batch);
  Features feats = forward(images, &out.diag);
  int B = static_cast<int>(batch.size());
  int C = n_classes();
  int A = cfg_.anchors_per_scale;

  // target assembly: best prior over both scales, colliding slots fall back
  // to the next-best prior
  struct Positive {
    int scale, b, a, cy, cx, cls;
    det::Box gt;
  };
  // Every object supervises its center cell on both head scales with the
  // best prior of that scale; single-site matching starves the box
  // regression of elongated objects at desk resolution.
  std::vector<Positive> positives;
  std::set<std::tuple<int, int, int, int, int>> taken;
  for (int b = 0; b < B; ++b) {
    for (const auto& ann : batch[static_cast<size_t>(b)]->annotations) {
      bool placed = false;
      for (int s = 0; s < anchors_.scales(); ++s) {
        std::vector<std::pair<double, int>> ranked;  // prior iou, anchor
        for (int a = 0; a < A; ++a) {
          auto prior = anchors_.at(s, a);
          ranked.push_back({det::iou_wh(ann.box.w, ann.box.h, prior.first, prior.second), a});
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& x, const auto& y) { return x.first > y.first; });
        int grid_h = feats.heads[static_cast<size_t>(s)].box_raw.dim(2);
        int grid_w = feats.heads[static_cast<size_t>(s)].box_raw.dim(3);
        int cx = std::min(grid_w - 1, static_cast<int>(ann.box.cx * grid_w));
        int cy = std::min(grid_h - 1, static_cast<int>(ann.box.cy * grid_h));
        for (const auto& cand : ranked) {
          auto key = std::make_tuple(s, b, cand.second, cy, cx);
          if (taken.count(key)) continue;
          taken.insert(key);
          positives.push_back({s, b, cand.second, cy, cx, ann.class_id, ann.box});
          placed = true;
          break;
        }
      }
      if (!placed) ++out.dropped_targets;
    }
  }

  // confidence QFL at the positives plus hard-mined negatives (3:1); a
  // plain mean over every cell would dilute the dozen positives against
  // thousands of background sites and the detector would learn silence
  struct NegSite {
    double sigma;
    int scale, b, a, cy, cx;
  };
  std::vector<NegSite> negatives;
  for (int s = 0; s < 2; ++s) {
    const auto& head = feats.heads[static_cast<size_t>(s)];
    int H = head.box_raw.dim(2), W = head.box_raw.dim(3);
    const auto& raw = head.box_raw.data();
    int ch = head.box_raw.dim(1);
    auto raw_at = [&](int b, int c, int y, int x) {
      return raw[static_cast<size_t>(((b * ch + c) * H + y) * W + x)];
    };
    for (int b = 0; b < B; ++b)
      for (int a = 0; a < A; ++a) {
        auto prior = anchors_.at(s, a);
        for (int cy = 0; cy < H; ++cy)
          for (int cx = 0; cx < W; ++cx) {
            if (taken.count(std::make_tuple(s, b, a, cy, cx))) continue;
            // ignore region: sites whose decoded box already overlaps a
            // ground truth well are neither positives nor suppressed, so
            // near-object cells do not receive contradictory supervision
            det::Box decoded = det::decode_box(
                raw_at(b, a * 5 + 0, cy, cx), raw_at(b, a * 5 + 1, cy, cx),
                raw_at(b, a * 5 + 2, cy, cx), raw_at(b, a * 5 + 3, cy, cx), cy, cx, H, W,
                prior.first, prior.second);
            bool ignore = false;
            for (const auto& ann : batch[static_cast<size_t>(b)]->annotations)
              if (det::iou(decoded, ann.box) >= 0.5) ignore = true;
            if (ignore) continue;
            negatives.push_back({raw_at(b, a * 5 + 4, cy, cx), s, b, a, cy, cx});
          }
      }
  }
  size_t n_neg = std::min(negatives.size(),
                          std::max<size_t>(6 * positives.size(), static_cast<size_t>(16 * B)));
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<long>(n_neg),
                    negatives.end(), [](const NegSite& x, const NegSite& y) {
                      if (x.sigma != y.sigma) return x.sigma > y.sigma;  // hardest first
                      if (x.scale != y.scale) return x.scale < y.scale;
                      if (x.b != y.b) return x.b < y.b;
                      if (x.a != y.a) return x.a < y.a;
                      if (x.cy != y.cy) return x.cy < y.cy;
                      return x.cx < y.cx;
                    });
  negatives.resize(n_neg);

  auto gather4 = [&](const Tensor& t, int b, int ch, int y, int x) {
    return reshape(slice(slice(slice(slice(t, 0, b, 1), 1, ch, 1), 2, y, 1), 3, x, 1), {1});
  };
  std::vector<Tensor> conf_sigmas;
  std::vector<double> conf_targets;
  for (const auto& p : positives) {
    const auto& head = feats.heads[static_cast<size_t>(p.scale)];
    conf_sigmas.push_back(gather4(head.box_raw, p.b, p.a * 5 + 4, p.cy, p.cx));
    // quality target: the confidence learns the localization quality of the
    // current decode, which is what QFL's soft labels are for
    int H = head.box_raw.dim(2), W = head.box_raw.dim(3);
    const auto& raw = head.box_raw.data();
    int ch = head.box_raw.dim(1);
    auto raw_at = [&](int c) {
      return raw[static_cast<size_t>(((p.b * ch + c) * H + p.cy) * W + p.cx)];
    };
    auto prior = anchors_.at(p.scale, p.a);
    det::Box decoded = det::decode_box(raw_at(p.a * 5 + 0), raw_at(p.a * 5 + 1),
                                       raw_at(p.a * 5 + 2), raw_at(p.a * 5 + 3), p.cy, p.cx, H,
                                       W, prior.first, prior.second);
    conf_targets.push_back(std::max(0.05, det::iou(decoded, p.gt)));
  }
  for (const auto& n : negatives) {
    const auto& head = feats.heads[static_cast<size_t>(n.scale)];
    conf_sigmas.push_back(gather4(head.box_raw, n.b, n.a * 5 + 4, n.cy, n.cx));
    conf_targets.push_back(0.0);
  }
  Tensor conf_logits = concat(conf_sigmas, 0);
  Tensor conf_sigma = minimum_scalar(maximum_scalar(sigmoid(conf_logits), 1e-7), 1.0 - 1e-7);
  Tensor conf_y = graph_.leaf({static_cast<int>(conf_targets.size())}, conf_targets);
  Tensor conf_qfl = det::qfocal_t(conf_sigma, conf_y, 0.45, 2.0);

  // classification QFL and CIoU regression at the positive sites
  std::vector<Tensor> cls_terms;
  std::vector<Tensor> pred_rows, gt_rows;
  auto gather = [&](const Tensor& t, int b, int ch, int y, int x) {
    return reshape(slice(slice(slice(slice(t, 0, b, 1), 1, ch, 1), 2, y, 1), 3, x, 1), {1, 1});
  };
  for (const auto& p : positives) {
    const auto& head = feats.heads[static_cast<size_t>(p.scale)];
    int H = head.box_raw.dim(2), W = head.box_raw.dim(3);
    // class targets are one-hot over all C channels of the matched anchor
    std::vector<Tensor> probs;
    std::vector<double> targets;
    for (int c = 0; c < C; ++c) {
      Tensor logit = gather(head.cls_logits, p.b, p.a * C + c, p.cy, p.cx);
      probs.push_back(minimum_scalar(maximum_scalar(sigmoid(logit), 1e-7), 1.0 - 1e-7));
      targets.push_back(c == p.cls ? 1.0 : 0.0);
    }
    Tensor sigma = concat(probs, 1);  // 1 x C
    Tensor y_t = graph_.leaf({1, C}, targets);
    cls_terms.push_back(reshape(det::qfocal_t(sigma, y_t, 0.45, 2.0), {C}));

    // differentiable box decode at the matched site
    Tensor tx = gather(head.box_raw, p.b, p.a * 5 + 0, p.cy, p.cx);
    Tensor ty = gather(head.box_raw, p.b, p.a * 5 + 1, p.cy, p.cx);
    Tensor tw = gather(head.box_raw, p.b, p.a * 5 + 2, p.cy, p.cx);
    Tensor th = gather(head.box_raw, p.b, p.a * 5 + 3, p.cy, p.cx);
    auto prior = anchors_.at(p.scale, p.a);
    Tensor cx = mul_scalar(add_scalar(sigmoid(tx), static_cast<double>(p.cx)), 1.0 / W);
    Tensor cy = mul_scalar(add_scalar(sigmoid(ty), static_cast<double>(p.cy)), 1.0 / H);
    Tensor bw = mul_scalar(exp(minimum_scalar(tw, 4.0)), prior.first);
    Tensor bh = mul_scalar(exp(minimum_scalar(th, 4.0)), prior.second);
    pred_rows.push_back(concat({cx, cy, bw, bh}, 1));  // 1 x 4
    gt_rows.push_back(graph_.leaf({1, 4}, {p.gt.cx, p.gt.cy, p.gt.w, p.gt.h}));
  }

  // mined negatives also push their class probabilities toward zero so
  // background sites cannot outrank real detections
  for (const auto& n : negatives) {
    const auto& head = feats.heads[static_cast<size_t>(n.scale)];
    std::vector<Tensor> probs;
    for (int c = 0; c < C; ++c) {
      Tensor logit = gather(head.cls_logits, n.b, n.a * C + c, n.cy, n.cx);
      probs.push_back(minimum_scalar(maximum_scalar(sigmoid(logit), 1e-7), 1.0 - 1e-7));
    }
    Tensor sigma = concat(probs, 1);
    Tensor y_t = graph_.leaf({1, C}, 0.0);
    cls_terms.push_back(reshape(det::qfocal_t(sigma, y_t, 0.45, 2.0), {C}));
  }
  Tensor cls_qfl = cls_terms.empty() ? graph_.leaf({1}, 0.0) : concat(cls_terms, 0);
  Tensor box_ciou;
  if (!pred_rows.empty()) {
    Tensor preds = pred_rows.size() == 1 ? pred_rows[0] : concat(pred_rows, 0);
    Tensor gts = gt_rows.size() == 1 ? gt_rows[0] : concat(gt_rows, 0);
    box_ciou = reshape(det::ciou_loss_rows(preds, gts), {static_cast<int>(pred_rows.size())});
  }

  // optional hierarchy hinge on the semantic anchors
  Tensor hier;
  if (cfg_.lambda_hierarchy > 0.0) {
    // recompute anchor rows on-graph for the penalty
    text::PromptSet ps;
    ps.prompts = prompts_;
    ps.class_names = class_names_;
    Tensor t_hat = text_->distill(text_->embed(ps, cfg_.seed)).matrix;
    Tensor anchors_t = hyper::semantic_anchors(t_hat, w_h_);
    for (size_t c = 0; c < taxonomy_.parent.size(); ++c) {
      if (!taxonomy_.parent[c]) continue;
      int pidx = *taxonomy_.parent[c];
      Tensor prow = slice(anchors_t, 0, pidx, 1);
      Tensor crow = slice(anchors_t, 0, static_cast<int>(c), 1);
      Tensor d_pc = hyper::poincare_distance_rows(prow, crow);
      for (int k = 0; k < C; ++k) {
        if (k == static_cast<int>(c) || k == pidx) continue;
        Tensor krow = slice(anchors_t, 0, k, 1);
        Tensor d_pk = hyper::poincare_distance_rows(prow, krow);
        Tensor hinge = maximum_scalar(add_scalar(sub(d_pc, d_pk), 0.1), 0.0);
        hier = hier.defined() ? add(hier, sum(hinge)) : sum(hinge);
      }
    }
  }

  out.breakdown = det::total_loss(cls_qfl, conf_qfl, box_ciou.defined() ? &box_ciou : nullptr,
                                  feats.align.defined() ? &feats.align : nullptr,
                                  cfg_.lambda_align);
  out.total = out.breakdown.total;
  if (hier.defined()) out.total = add(out.total, mul_scalar(hier, cfg_.lambda_hierarchy));
  if (!std::isfinite(out.total.item())) fail("model: non-finite loss");
  return out;
}

std::vector<det::Prediction> DsMoeModel::detect(const Sample& sample, int image_id) {
  std::vector<const Sample*> batch{&sample};
  Tensor images = batch_to_tensor(batch);
  Features feats = forward(images, nullptr);
  std::vector<det::Prediction> preds;
  for (int s = 0; s < 2; ++s) {
    auto recs = det::decode_head(feats.heads[static_cast<size_t>(s)], anchors_, s, 0);
    for (const auto& r : recs) {
      int best = 0;
      for (int c = 1; c < static_cast<int>(r.class_probs.size()); ++c)
        if (r.class_probs[static_cast<size_t>(c)] > r.class_probs[static_cast<size_t>(best)])
          best = c;
      double score = r.confidence * r.class_probs[static_cast<size_t>(best)];
      if (score < 0.01) continue;
      det::Prediction p;
      p.image_id = image_id;
      p.class_id = best;
      p.confidence = score;
      p.box = r.box;
      preds.push_back(p);
    }
  }
  graph_.clear();
  return preds;
}

moe::FlopsReport DsMoeModel::flops(int k) const {
  int s8 = cfg_.image_size / 8;
  return moe::count_flops(*bank_, k, s8, s8);
}

void DsMoeModel::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) fail("model: cannot write " + path);
  f << "dsmoe-model v1\n";
  static const char* keys[] = {"seed", "image_size", "n_experts", "k_override",
                               "tau_gate_init", "tau_route", "mlp_router", "beta",
                               "lambda_align", "lambda_hierarchy", "d_t", "heads", "ball_dim",
                               "enc_widths", "c_cs", "c_b", "c_m", "c_g", "d_g",
                               "head_channels", "anchors_per_scale", "n_classes"};
  for (const char* k : keys) f << "config " << k << " = " << cfg_.get(k) << "\n";
  f << "classes " << class_names_.size() << "\n";
  for (size_t i = 0; i < class_names_.size(); ++i)
    f << "class " << i << " " << class_names_[i] << "\n";
  for (size_t i = 0; i < prompts_.size(); ++i) f << "prompt " << i << " " << prompts_[i] << "\n";
  f << "anchors " << anchors_.anchors.size() << " " << anchors_.per_scale << "\n";
  char buf[64];
  for (const auto& [w, h] : anchors_.anchors) {
    std::snprintf(buf, sizeof(buf), "%a %a", w, h);
    f << "anchor " << buf << "\n";
  }
  for (const auto& e : params_.entries()) {
    f << "param " << e.name << " " << e.tensor.numel() << "\n";
    const auto& d = e.tensor.data();
    for (size_t i = 0; i < d.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%a", d[i]);
      f << buf << (i + 1 == d.size() ? "" : " ");
    }
    f << "\n";
  }
  f << "end\n";
}

std::unique_ptr<DsMoeModel> DsMoeModel::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("model: cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "dsmoe-model v1") fail("model: bad header in " + path);
  RunConfig cfg;
  std::vector<std::string> classes, prompts;
  det::AnchorSet anchors;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config") {
      std::string key, eq, value;
      ls >> key >> eq;
      std::getline(ls, value);
      size_t a = value.find_first_not_of(' ');
      value = a == std::string::npos ? "" : value.substr(a);
      cfg.set(key, value);
    } else if (tag == "classes") {
      size_t n;
      ls >> n;
      classes.resize(n);
      prompts.resize(n);
    } else if (tag == "class") {
      size_t i;
      std::string name;
      ls >> i >> name;
      classes.at(i) = name;
    } else if (tag == "prompt") {
      size_t i;
      ls >> i;
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest[0] == ' ') rest = rest.substr(1);
      prompts.at(i) = rest;
    } else if (tag == "anchors") {
      size_t n;
      ls >> n >> anchors.per_scale;
      anchors.anchors.reserve(n);
    } else if (tag == "anchor") {
      std::string w, h;
      ls >> w >> h;
      anchors.anchors.emplace_back(std::strtod(w.c_str(), nullptr),
                                   std::strtod(h.c_str(), nullptr));
    } else if (tag == "param") {
      break;
    }
  }
  auto model = std::make_unique<DsMoeModel>(cfg, prompts, classes);
  if (!anchors.anchors.empty()) model->set_anchors(anchors);
  // line currently holds the first "param" header
  while (true) {
    std::istringstream ls(line);
    std::string tag, name;
    std::int64_t numel = 0;
    ls >> tag;
    if (tag == "end") break;
    if (tag != "param") fail("model: expected param block, got '" + line + "'");
    ls >> name >> numel;
    std::string values;
    if (!std::getline(f, values)) fail("model: truncated param " + name);
    Tensor target;
    for (auto& e : model->params_.entries())
      if (e.name == name) target = e.tensor;
    if (!target.defined()) fail("model: unknown param '" + name + "' in " + path);
    if (target.numel() != numel) fail("model: size mismatch for param " + name);
    auto& dst = target.mutable_data();
    const char* p = values.c_str();
    char* endp = nullptr;
    for (std::int64_t i = 0; i < numel; ++i) {
      dst[static_cast<size_t>(i)] = std::strtod(p, &endp);
      p = endp;
    }
    if (!std::getline(f, line)) fail("model: truncated file " + path);
  }
  return model;
}

}  // namespace dsmoe::harness
