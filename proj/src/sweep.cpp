// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/sweep.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "dsmoe/eval.hpp"
#include "dsmoe/model.hpp"
#include "dsmoe/train.hpp"

namespace dsmoe::harness {

std::vector<SweepRow> sweep_k(const RunConfig& cfg, const SyntheticCorpus& corpus,
                              const std::vector<int>& ks) {
  if (ks.empty()) throw std::invalid_argument("sweep: empty k list");
  std::vector<SweepRow> rows;
  for (int k : ks) {
    if (k < 1 || k > cfg.n_experts)
      throw std::invalid_argument("sweep: k = " + std::to_string(k) +
                                  " outside [1, N_e = " + std::to_string(cfg.n_experts) + "]");
    RunConfig run = cfg;
    run.k_override = k;
    auto t0 = std::chrono::steady_clock::now();
    DsMoeModel model(run, corpus.prompts, corpus.class_names);
    Trainer trainer(model, run);
    trainer.run(corpus, run.steps);
    auto report = evaluate_split(model, corpus, "test");
    auto t1 = std::chrono::steady_clock::now();
    SweepRow row;
    row.k = k;
    row.map50 = report.summary.map50;
    auto fl = model.flops(k);
    row.activated_gflops = fl.activated_flops / 1e9;
    row.dense_gflops = fl.dense_flops / 1e9;
    row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    rows.push_back(row);
  }
  for (size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i].activated_gflops > rows[i - 1].activated_gflops) && ks[i] > ks[i - 1])
      throw std::runtime_error("sweep: activated FLOPs not strictly monotone in k");
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("sweep: cannot write " + path);
  f << "k,map50,activated_gflops,wall_seconds\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.3f\n", r.k, r.map50, r.activated_gflops,
                  r.wall_seconds);
    f << buf;
  }
}

}  // namespace dsmoe::harness
