// SPDX-License-Identifier: Apache-2.0
#ifndef DSMOE_REPORT_HPP
#define DSMOE_REPORT_HPP

#include <string>
#include <vector>

#include "dsmoe/metrics.hpp"

namespace dsmoe::harness {

struct EvalReport {
  det::EvalSummary summary;
  std::vector<std::string> class_names;
};

// Key-value block in fixed key order plus a comma-separated per-class
// table. Wall-clock latency stays out of the file so emitted bytes are
// reproducible; it is reported on the console instead.
void emit_report(const EvalReport& report, const std::string& path);
EvalReport parse_report(const std::string& path);

// full evaluation of a model over one corpus split
class DsMoeModel;

}  // namespace dsmoe::harness

#endif
