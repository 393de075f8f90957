// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_SWEEP_HPP
#define DSMOE_SWEEP_HPP

#include <string>
#include <vector>

#include "dsmoe/config.hpp"
#include "dsmoe/synth.hpp"

namespace dsmoe::harness {

struct SweepRow {
  int k = 0;
  double map50 = 0.0;
  double activated_gflops = 0.0;
  double dense_gflops = 0.0;
  double wall_seconds = 0.0;
};

// Trains one short-budget model per k (cfg.steps each) on the same corpus,
// evaluates on the test split and reports analytic FLOPs. Throws if the
// activated-FLOPs column is not strictly monotone in k.
std::vector<SweepRow> sweep_k(const RunConfig& cfg, const SyntheticCorpus& corpus,
                              const std::vector<int>& ks);

// rows: k,map50,activated_gflops,wall_seconds
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

}  // namespace dsmoe::harness

#endif
