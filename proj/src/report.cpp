// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsmoe::harness {

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}
}  // namespace

void emit_report(const EvalReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("report: cannot write " + path);
  const auto& s = report.summary;
  f << "dsmoe-eval-report v1\n";
  f << "images " << s.images << "\n";
  f << "map50 " << fmt(s.map50) << "\n";
  f << "map5095 " << fmt(s.map5095) << "\n";
  f << "precision " << fmt(s.precision) << "\n";
  f << "recall " << fmt(s.recall) << "\n";
  f << "f1 " << fmt(s.f1) << "\n";
  f << "no_predictions " << (s.no_predictions ? 1 : 0) << "\n";
  f << "activated_gflops " << fmt(s.activated_gflops) << "\n";
  f << "classes " << report.class_names.size() << "\n";
  f << "class,ap50,gt_count\n";
  for (size_t c = 0; c < report.class_names.size(); ++c)
    f << report.class_names[c] << "," << fmt(s.per_class_ap50[c]) << ","
      << s.per_class_gt_count[c] << "\n";
}

EvalReport parse_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("report: cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "dsmoe-eval-report v1")
    throw std::invalid_argument("report: bad header in " + path);
  EvalReport r;
  size_t n_classes = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line == "class,ap50,gt_count") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "images") ls >> r.summary.images;
    else if (key == "map50") ls >> r.summary.map50;
    else if (key == "map5095") ls >> r.summary.map5095;
    else if (key == "precision") ls >> r.summary.precision;
    else if (key == "recall") ls >> r.summary.recall;
    else if (key == "f1") ls >> r.summary.f1;
    else if (key == "no_predictions") {
      int v;
      ls >> v;
      r.summary.no_predictions = v != 0;
    } else if (key == "activated_gflops") ls >> r.summary.activated_gflops;
    else if (key == "classes") ls >> n_classes;
    else throw std::invalid_argument("report: unknown key '" + key + "'");
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, ap, gt;
    std::getline(ls, name, ',');
    std::getline(ls, ap, ',');
    std::getline(ls, gt, ',');
    r.class_names.push_back(name);
    r.summary.per_class_ap50.push_back(std::stod(ap));
    r.summary.per_class_gt_count.push_back(std::stoi(gt));
  }
  if (r.class_names.size() != n_classes)
    throw std::invalid_argument("report: class table size mismatch in " + path);
  return r;
}

}  // namespace dsmoe::harness
