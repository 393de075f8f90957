// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/eval.hpp"

#include <chrono>
#include <stdexcept>

#include "dsmoe/moe.hpp"
#include "dsmoe/train.hpp"

namespace dsmoe::harness {

EvalReport evaluate_split(DsMoeModel& model, const SyntheticCorpus& corpus,
                          const std::string& split) {
  const auto& ids = corpus.split(split);
  if (ids.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");

  std::vector<det::Prediction> preds;
  std::vector<det::GroundTruth> gts;
  auto t0 = std::chrono::steady_clock::now();
  int image_id = 0;
  for (int id : ids) {
    Sample s = prepare_sample(corpus.samples[static_cast<size_t>(id)], model.config());
    for (const auto& a : s.annotations) gts.push_back({image_id, a.class_id, a.box});
    auto p = model.detect(s, image_id);
    preds.insert(preds.end(), p.begin(), p.end());
    ++image_id;
  }
  auto t1 = std::chrono::steady_clock::now();

  EvalReport report;
  report.class_names = corpus.class_names;
  report.summary = det::evaluate_detections(preds, gts, model.n_classes(), 0.25);
  report.summary.images = static_cast<int>(ids.size());
  report.summary.latency_ms_per_image =
      std::chrono::duration<double, std::milli>(t1 - t0).count() / ids.size();
  int k = model.config().k_override > 0 ? model.config().k_override
                                        : moe::top_k_count(model.config().n_experts);
  report.summary.activated_gflops = model.flops(k).activated_flops / 1e9;
  return report;
}

}  // namespace dsmoe::harness
