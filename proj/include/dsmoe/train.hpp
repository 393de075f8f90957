// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_TRAIN_HPP
#define DSMOE_TRAIN_HPP

#include <functional>
#include <string>
#include <vector>

#include "dsmoe/model.hpp"
#include "dsmoe/synth.hpp"

namespace dsmoe::harness {

// eta(t) = eta0 * 0.5 * (1 + cos(pi t / T))
double cosine_lr(double lr0, int step, int total_steps);

struct StepLog {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

class Trainer {
 public:
  Trainer(DsMoeModel& model, const RunConfig& cfg);

  // preprocesses the corpus once (letterbox + gamma), recomputes anchors by
  // k-means over the train split, then runs the given number of steps
  std::vector<StepLog> run(const SyntheticCorpus& corpus, int steps,
                           const std::string& checkpoint_prefix = "",
                           const std::function<void(const StepLog&)>& on_step = nullptr);

  const std::vector<Sample>& prepared_samples() const { return prepared_; }

 private:
  void adam_step(double lr);

  DsMoeModel& model_;
  RunConfig cfg_;
  std::vector<Sample> prepared_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

// preprocessing used by both training and evaluation
Sample prepare_sample(const Sample& raw, const RunConfig& cfg);

}  // namespace dsmoe::harness

#endif
