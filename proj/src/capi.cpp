// SPDX-License-Identifier: Apache-2.0
#include "dsmoe.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "dsmoe/config.hpp"
#include "dsmoe/eval.hpp"
#include "dsmoe/model.hpp"
#include "dsmoe/moe.hpp"
#include "dsmoe/report.hpp"
#include "dsmoe/sweep.hpp"
#include "dsmoe/synth.hpp"
#include "dsmoe/train.hpp"

using dsmoe::harness::DsMoeModel;
using dsmoe::harness::EvalReport;
using dsmoe::harness::RunConfig;
using dsmoe::harness::SyntheticCorpus;

struct dsmoe_config {
  RunConfig cfg;
};
struct dsmoe_corpus {
  SyntheticCorpus corpus;
};
struct dsmoe_model {
  std::unique_ptr<DsMoeModel> model;
};
struct dsmoe_report {
  EvalReport report;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename F>
int guarded(F&& fn) {
  try {
    fn();
    return DSMOE_OK;
  } catch (const std::invalid_argument& e) {
    set_error(e.what());
    return DSMOE_ERR_INVALID_ARGUMENT;
  } catch (const std::ios_base::failure& e) {
    set_error(e.what());
    return DSMOE_ERR_IO;
  } catch (const std::exception& e) {
    set_error(e.what());
    return DSMOE_ERR_RUNTIME;
  }
}

template <typename T, typename F>
T* guarded_make(F&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    set_error(e.what());
    return nullptr;
  }
}

dsmoe::harness::SynthConfig synth_config(const RunConfig& cfg) {
  dsmoe::harness::SynthConfig s;
  s.n_images = cfg.n_images;
  s.image_size = cfg.image_size;
  s.n_classes = cfg.n_classes;
  s.min_instances = cfg.min_instances;
  s.max_instances = cfg.max_instances;
  s.small_object_fraction = cfg.small_object_fraction;
  return s;
}

}  // namespace

extern "C" {

const char* dsmoe_version(void) { return "dsmoe 1.0.0"; }

const char* dsmoe_last_error(void) { return g_last_error.c_str(); }

dsmoe_config* dsmoe_config_create(void) { return new dsmoe_config(); }

dsmoe_config* dsmoe_config_load(const char* path) {
  if (!path) {
    set_error("config_load: null path");
    return nullptr;
  }
  return guarded_make<dsmoe_config>([&] { return new dsmoe_config{RunConfig::load(path)}; });
}

int dsmoe_config_set(dsmoe_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) {
    set_error("config_set: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { cfg->cfg.set(key, value); });
}

int dsmoe_config_get(const dsmoe_config* cfg, const char* key, char* buf, size_t buf_len) {
  if (!cfg || !key || !buf || buf_len == 0) {
    set_error("config_get: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    std::string v = cfg->cfg.get(key);
    if (v.size() + 1 > buf_len) throw std::invalid_argument("config_get: buffer too small");
    std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

int dsmoe_config_save(const dsmoe_config* cfg, const char* path) {
  if (!cfg || !path) {
    set_error("config_save: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { cfg->cfg.save(path); });
}

void dsmoe_config_free(dsmoe_config* cfg) { delete cfg; }

dsmoe_corpus* dsmoe_corpus_generate(const dsmoe_config* cfg) {
  if (!cfg) {
    set_error("corpus_generate: null config");
    return nullptr;
  }
  return guarded_make<dsmoe_corpus>([&] {
    return new dsmoe_corpus{dsmoe::harness::generate_corpus(cfg->cfg.seed, synth_config(cfg->cfg))};
  });
}

dsmoe_corpus* dsmoe_corpus_load(const char* dir) {
  if (!dir) {
    set_error("corpus_load: null dir");
    return nullptr;
  }
  return guarded_make<dsmoe_corpus>([&] { return new dsmoe_corpus{SyntheticCorpus::load(dir)}; });
}

int dsmoe_corpus_save(const dsmoe_corpus* corpus, const char* dir) {
  if (!corpus || !dir) {
    set_error("corpus_save: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { corpus->corpus.save(dir); });
}

int dsmoe_corpus_counts(const dsmoe_corpus* corpus, int* train_n, int* val_n, int* test_n) {
  if (!corpus) {
    set_error("corpus_counts: null corpus");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  if (train_n) *train_n = static_cast<int>(corpus->corpus.train_ids.size());
  if (val_n) *val_n = static_cast<int>(corpus->corpus.val_ids.size());
  if (test_n) *test_n = static_cast<int>(corpus->corpus.test_ids.size());
  return DSMOE_OK;
}

void dsmoe_corpus_free(dsmoe_corpus* corpus) { delete corpus; }

dsmoe_model* dsmoe_train(const dsmoe_config* cfg, const dsmoe_corpus* corpus,
                         const char* loss_curve_path) {
  if (!cfg || !corpus) {
    set_error("train: null argument");
    return nullptr;
  }
  return guarded_make<dsmoe_model>([&] {
    auto model = std::make_unique<DsMoeModel>(cfg->cfg, corpus->corpus.prompts,
                                              corpus->corpus.class_names);
    dsmoe::harness::Trainer trainer(*model, cfg->cfg);
    auto logs = trainer.run(corpus->corpus, cfg->cfg.steps);
    if (loss_curve_path) {
      std::ofstream f(loss_curve_path);
      if (!f) throw std::invalid_argument(std::string("train: cannot write ") + loss_curve_path);
      f.precision(17);
      for (const auto& l : logs) f << l.step << " " << l.loss << " " << l.lr << "\n";
    }
    return new dsmoe_model{std::move(model)};
  });
}

dsmoe_model* dsmoe_model_load(const char* path) {
  if (!path) {
    set_error("model_load: null path");
    return nullptr;
  }
  return guarded_make<dsmoe_model>([&] { return new dsmoe_model{DsMoeModel::load(path)}; });
}

int dsmoe_model_save(const dsmoe_model* model, const char* path) {
  if (!model || !path) {
    set_error("model_save: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { model->model->save(path); });
}

int dsmoe_model_export_anchors(const dsmoe_model* model, const char* path) {
  if (!model || !path) {
    set_error("export_anchors: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { model->model->anchors().save(path); });
}

void dsmoe_model_free(dsmoe_model* model) { delete model; }

dsmoe_report* dsmoe_evaluate(dsmoe_model* model, const dsmoe_corpus* corpus, const char* split) {
  if (!model || !corpus || !split) {
    set_error("evaluate: null argument");
    return nullptr;
  }
  return guarded_make<dsmoe_report>([&] {
    return new dsmoe_report{dsmoe::harness::evaluate_split(*model->model, corpus->corpus, split)};
  });
}

int dsmoe_report_write(const dsmoe_report* report, const char* path) {
  if (!report || !path) {
    set_error("report_write: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] { dsmoe::harness::emit_report(report->report, path); });
}

double dsmoe_report_metric(const dsmoe_report* report, const char* key) {
  if (!report || !key) {
    set_error("report_metric: null argument");
    return std::nan("");
  }
  const auto& s = report->report.summary;
  std::string k = key;
  if (k == "map50") return s.map50;
  if (k == "map5095") return s.map5095;
  if (k == "precision") return s.precision;
  if (k == "recall") return s.recall;
  if (k == "f1") return s.f1;
  if (k == "images") return s.images;
  if (k == "activated_gflops") return s.activated_gflops;
  if (k == "latency_ms") return s.latency_ms_per_image;
  set_error("report_metric: unknown key '" + k + "'");
  return std::nan("");
}

void dsmoe_report_free(dsmoe_report* report) { delete report; }

int dsmoe_sweep_k(const dsmoe_config* cfg, const int* ks, int n_ks, const char* csv_path) {
  if (!cfg || !ks || n_ks <= 0 || !csv_path) {
    set_error("sweep_k: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    auto corpus = dsmoe::harness::generate_corpus(cfg->cfg.seed, synth_config(cfg->cfg));
    std::vector<int> kv(ks, ks + n_ks);
    auto rows = dsmoe::harness::sweep_k(cfg->cfg, corpus, kv);
    dsmoe::harness::write_sweep_csv(rows, csv_path);
  });
}

int dsmoe_flops_table(const dsmoe_config* cfg, const int* ks, int n_ks, const char* csv_path) {
  if (!cfg || !ks || n_ks <= 0 || !csv_path) {
    set_error("flops_table: null argument");
    return DSMOE_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    auto corpus = dsmoe::harness::generate_corpus(
        cfg->cfg.seed, [&] {
          auto s = synth_config(cfg->cfg);
          s.n_images = 1;  // the counting model only needs the class manifest
          return s;
        }());
    DsMoeModel model(cfg->cfg, corpus.prompts, corpus.class_names);
    std::vector<dsmoe::moe::FlopsReport> rows;
    for (int i = 0; i < n_ks; ++i) rows.push_back(model.flops(ks[i]));
    dsmoe::moe::write_flops_csv(rows, csv_path);
  });
}

}  // extern "C"
