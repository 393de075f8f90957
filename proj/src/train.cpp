// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dsmoe/preprocess.hpp"

namespace dsmoe::harness {

double cosine_lr(double lr0, int step, int total_steps) {
  if (total_steps <= 0) return lr0;
  double t = std::min(step, total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t / total_steps));
}

Sample prepare_sample(const Sample& raw, const RunConfig& cfg) {
  Sample s = letterbox_to(raw, cfg.image_size);
  apply_gamma(s.image, cfg.gamma_c, cfg.gamma);
  return s;
}

Trainer::Trainer(DsMoeModel& model, const RunConfig& cfg) : model_(model), cfg_(cfg) {}

void Trainer::adam_step(double lr) {
  auto& entries = model_.params().entries();
  if (m_.empty()) {
    for (auto& e : entries) {
      m_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(e.tensor.numel()), 0.0);
    }
  }
  // global-norm clipping keeps rare spiky batches from derailing the run
  double gnorm2 = 0.0;
  for (auto& e : entries)
    for (double g : e.tensor.grad()) gnorm2 += g * g;
  double clip = 10.0;
  double scale = gnorm2 > clip * clip ? clip / std::sqrt(gnorm2) : 1.0;
  if (scale != 1.0)
    for (auto& e : entries) {
      auto& grad = const_cast<std::vector<double>&>(e.tensor.grad());
      for (double& g : grad) g *= scale;
    }
  ++t_;
  double b1 = cfg_.momentum, b2 = 0.999, eps = 1e-8;
  double bc1 = 1.0 - std::pow(b1, t_);
  double bc2 = 1.0 - std::pow(b2, t_);
  for (size_t pi = 0; pi < entries.size(); ++pi) {
    auto& p = entries[pi].tensor;
    auto& data = p.mutable_data();
    const auto& grad = p.grad();
    if (grad.empty()) continue;
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      double g = grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      data[i] -= lr * (update + cfg_.weight_decay * data[i]);
    }
  }
}

std::vector<StepLog> Trainer::run(const SyntheticCorpus& corpus, int steps,
                                  const std::string& checkpoint_prefix,
                                  const std::function<void(const StepLog&)>& on_step) {
  if (corpus.train_ids.empty()) throw std::invalid_argument("trainer: empty train split");
  if (prepared_.empty()) {
    prepared_.resize(corpus.samples.size());
    for (size_t i = 0; i < corpus.samples.size(); ++i)
      prepared_[i] = prepare_sample(corpus.samples[i], cfg_);
  }

  // pre-anchor sizes recomputed by k-means over the train-split boxes
  std::vector<std::pair<double, double>> wh;
  for (int id : corpus.train_ids)
    for (const auto& a : prepared_[static_cast<size_t>(id)].annotations)
      wh.push_back({a.box.w, a.box.h});
  int n_anchors = 2 * cfg_.anchors_per_scale;
  if (static_cast<int>(wh.size()) >= n_anchors) {
    auto km = det::kmeans_anchors(wh, n_anchors, cfg_.seed, cfg_.anchors_per_scale);
    model_.set_anchors(km.set);
  }

  Rng shuffle_rng(cfg_.seed ^ 0x94d049bb133111ebULL);
  std::vector<int> order = corpus.train_ids;
  size_t cursor = order.size();  // force an initial shuffle

  Rng mix_rng(cfg_.seed ^ 0xd1342543de82ef95ULL);
  std::vector<StepLog> logs;
  logs.reserve(static_cast<size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    std::vector<const Sample*> batch;
    std::vector<Sample> mixed_storage;
    mixed_storage.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      if (cursor >= order.size()) {
        for (int j = static_cast<int>(order.size()) - 1; j > 0; --j)
          std::swap(order[static_cast<size_t>(j)],
                    order[static_cast<size_t>(shuffle_rng.uniform_int(0, j))]);
        cursor = 0;
      }
      const Sample* s = &prepared_[static_cast<size_t>(order[cursor++])];
      if (cfg_.mixup) {
        const Sample* partner =
            &prepared_[static_cast<size_t>(order[static_cast<size_t>(mix_rng.uniform_int(
                0, static_cast<int>(order.size()) - 1))])];
        mixed_storage.push_back(mixup(*s, *partner));
        s = &mixed_storage.back();
      }
      batch.push_back(s);
    }

    double lr = cosine_lr(cfg_.lr, step, steps);
    LossResult res;
    try {
      res = model_.loss(batch);
    } catch (const std::exception& e) {
      model_.graph().clear();
      throw std::runtime_error("training aborted at step " + std::to_string(step) + ": " +
                               e.what());
    }
    double loss_value = res.total.item();
    if (!std::isfinite(loss_value)) {
      std::ostringstream diag;
      diag << "training aborted at step " << step << ": non-finite loss (cls "
           << res.breakdown.cls_mean << ", conf " << res.breakdown.conf_mean << ", box "
           << res.breakdown.box_mean << ")";
      model_.graph().clear();
      throw std::runtime_error(diag.str());
    }
    model_.params().zero_grad();
    model_.graph().backward(res.total);
    adam_step(lr);
    model_.graph().clear();

    StepLog log{step, loss_value, lr};
    logs.push_back(log);
    if (on_step) on_step(log);
    if (cfg_.checkpoint_every > 0 && !checkpoint_prefix.empty() &&
        (step + 1) % cfg_.checkpoint_every == 0)
      model_.save(checkpoint_prefix + "_step" + std::to_string(step + 1) + ".dsmoe");
  }
  return logs;
}

}  // namespace dsmoe::harness
