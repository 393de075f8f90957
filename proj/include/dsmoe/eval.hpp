// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_EVAL_HPP
#define DSMOE_EVAL_HPP

#include <string>

#include "dsmoe/model.hpp"
#include "dsmoe/report.hpp"
#include "dsmoe/synth.hpp"

namespace dsmoe::harness {

// Runs detection over one split (letterbox + gamma preprocessing, batch 1),
// greedy NMS at IoU 0.5, P/R at confidence 0.25. Latency is measured but
// kept out of the emitted file.
EvalReport evaluate_split(DsMoeModel& model, const SyntheticCorpus& corpus,
                          const std::string& split);

}  // namespace dsmoe::harness

#endif
