// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end over the shared-library C API: corpus generation,
// training, evaluation, the top-k sweep and the analytic FLOPs table.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsmoe.h"

namespace {

struct ConfigHandle {
  dsmoe_config* ptr = nullptr;
  ~ConfigHandle() { dsmoe_config_free(ptr); }
};
struct CorpusHandle {
  dsmoe_corpus* ptr = nullptr;
  ~CorpusHandle() { dsmoe_corpus_free(ptr); }
};
struct ModelHandle {
  dsmoe_model* ptr = nullptr;
  ~ModelHandle() { dsmoe_model_free(ptr); }
};
struct ReportHandle {
  dsmoe_report* ptr = nullptr;
  ~ReportHandle() { dsmoe_report_free(ptr); }
};

int die(const char* what) {
  std::fprintf(stderr, "error: %s: %s\n", what, dsmoe_last_error());
  return 1;
}

dsmoe_config* make_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  dsmoe_config* cfg =
      config_path.empty() ? dsmoe_config_create() : dsmoe_config_load(config_path.c_str());
  if (!cfg) return nullptr;
  for (const auto& kv : overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      dsmoe_config_free(cfg);
      return nullptr;
    }
    if (dsmoe_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) != DSMOE_OK) {
      std::fprintf(stderr, "error: config override '%s': %s\n", kv.c_str(), dsmoe_last_error());
      dsmoe_config_free(cfg);
      return nullptr;
    }
  }
  return cfg;
}

std::vector<int> parse_ks(const std::string& ks_str) {
  std::vector<int> ks;
  std::string cur;
  for (char c : ks_str + ",") {
    if (c == ',') {
      if (!cur.empty()) ks.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return ks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DS-MoE cross-modal defect detection, desk scale"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, model_path, split = "test";
  std::string ks_str = "1,2,4,5,8,16,32";
  std::string loss_curve, anchors_out;
  std::vector<std::string> overrides;
  unsigned long long seed = 42;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file (key = value lines)");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set steps=300")
        ->take_all();
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus onto disk");
  add_common(gen);
  gen->add_option("--seed", seed, "corpus seed (overrides the config)");
  gen->add_option("--out", out_path, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--data", data_dir, "corpus directory (generated from config when absent)");
  train->add_option("--out", out_path, "model output path")->required();
  train->add_option("--loss-curve", loss_curve, "write per-step losses here");
  train->add_option("--anchors-out", anchors_out, "write k-means anchors here");

  auto* eval = app.add_subcommand("eval", "evaluate a trained model on a split");
  add_common(eval);
  eval->add_option("--model", model_path, "trained model file")->required();
  eval->add_option("--data", data_dir, "corpus directory (generated from config when absent)");
  eval->add_option("--split", split, "train / val / test");
  eval->add_option("--out", out_path, "report output path")->required();

  auto* sweep = app.add_subcommand("sweep-k", "train + evaluate across top-k settings");
  add_common(sweep);
  sweep->add_option("--ks", ks_str, "comma-separated k values");
  sweep->add_option("--out", out_path, "csv output path")->required();

  auto* flops = app.add_subcommand("flops", "analytic activated/dense FLOPs table");
  add_common(flops);
  flops->add_option("--ks", ks_str, "comma-separated k values");
  flops->add_option("--out", out_path, "csv output path")->required();

  CLI11_PARSE(app, argc, argv);

  ConfigHandle cfg;
  cfg.ptr = make_config(config_path, overrides);
  if (!cfg.ptr) return 1;

  if (gen->parsed()) {
    if (gen->count("--seed")) {
      if (dsmoe_config_set(cfg.ptr, "seed", std::to_string(seed).c_str()) != DSMOE_OK)
        return die("set seed");
    }
    CorpusHandle corpus;
    corpus.ptr = dsmoe_corpus_generate(cfg.ptr);
    if (!corpus.ptr) return die("generate corpus");
    if (dsmoe_corpus_save(corpus.ptr, out_path.c_str()) != DSMOE_OK) return die("save corpus");
    int tr, va, te;
    dsmoe_corpus_counts(corpus.ptr, &tr, &va, &te);
    std::printf("corpus written to %s (train %d / val %d / test %d)\n", out_path.c_str(), tr, va,
                te);
    return 0;
  }

  if (train->parsed()) {
    CorpusHandle corpus;
    corpus.ptr = data_dir.empty() ? dsmoe_corpus_generate(cfg.ptr)
                                  : dsmoe_corpus_load(data_dir.c_str());
    if (!corpus.ptr) return die("obtain corpus");
    ModelHandle model;
    model.ptr = dsmoe_train(cfg.ptr, corpus.ptr,
                            loss_curve.empty() ? nullptr : loss_curve.c_str());
    if (!model.ptr) return die("train");
    if (dsmoe_model_save(model.ptr, out_path.c_str()) != DSMOE_OK) return die("save model");
    if (!anchors_out.empty() &&
        dsmoe_model_export_anchors(model.ptr, anchors_out.c_str()) != DSMOE_OK)
      return die("export anchors");
    std::printf("model written to %s\n", out_path.c_str());
    return 0;
  }

  if (eval->parsed()) {
    ModelHandle model;
    model.ptr = dsmoe_model_load(model_path.c_str());
    if (!model.ptr) return die("load model");
    CorpusHandle corpus;
    corpus.ptr = data_dir.empty() ? dsmoe_corpus_generate(cfg.ptr)
                                  : dsmoe_corpus_load(data_dir.c_str());
    if (!corpus.ptr) return die("obtain corpus");
    ReportHandle report;
    report.ptr = dsmoe_evaluate(model.ptr, corpus.ptr, split.c_str());
    if (!report.ptr) return die("evaluate");
    if (dsmoe_report_write(report.ptr, out_path.c_str()) != DSMOE_OK) return die("write report");
    std::printf("split %s: mAP@.5 %.4f, mAP@.5:.95 %.4f, P %.4f, R %.4f, F1 %.4f\n",
                split.c_str(), dsmoe_report_metric(report.ptr, "map50"),
                dsmoe_report_metric(report.ptr, "map5095"),
                dsmoe_report_metric(report.ptr, "precision"),
                dsmoe_report_metric(report.ptr, "recall"),
                dsmoe_report_metric(report.ptr, "f1"));
    std::printf("latency %.2f ms/image (not part of the report file)\n",
                dsmoe_report_metric(report.ptr, "latency_ms"));
    std::printf("report written to %s\n", out_path.c_str());
    return 0;
  }

  std::vector<int> ks = parse_ks(ks_str);
  if (sweep->parsed()) {
    if (dsmoe_sweep_k(cfg.ptr, ks.data(), static_cast<int>(ks.size()), out_path.c_str()) !=
        DSMOE_OK)
      return die("sweep-k");
    std::printf("sweep written to %s\n", out_path.c_str());
    return 0;
  }
  if (flops->parsed()) {
    if (dsmoe_flops_table(cfg.ptr, ks.data(), static_cast<int>(ks.size()), out_path.c_str()) !=
        DSMOE_OK)
      return die("flops");
    std::printf("flops table written to %s\n", out_path.c_str());
    return 0;
  }
  return 0;
}
