/* SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the DS-MoE defect-detection library. All functions return
 * DSMOE_OK / a non-NULL handle on success; on failure they return an error
 * code / NULL and dsmoe_last_error() describes what went wrong. Handles are
 * opaque and must be released with the matching *_free call. Not thread-safe
 * across one handle; distinct handles are independent.
 */
#ifndef DSMOE_H
#define DSMOE_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define DSMOE_OK 0
#define DSMOE_ERR_INVALID_ARGUMENT 1
#define DSMOE_ERR_IO 2
#define DSMOE_ERR_RUNTIME 3

typedef struct dsmoe_config dsmoe_config;
typedef struct dsmoe_corpus dsmoe_corpus;
typedef struct dsmoe_model dsmoe_model;
typedef struct dsmoe_report dsmoe_report;

const char* dsmoe_version(void);
/* message of the most recent failure on this thread; empty if none */
const char* dsmoe_last_error(void);

/* ---- run configuration ("key = value" text files) ---- */
dsmoe_config* dsmoe_config_create(void);
dsmoe_config* dsmoe_config_load(const char* path);
int dsmoe_config_set(dsmoe_config* cfg, const char* key, const char* value);
int dsmoe_config_get(const dsmoe_config* cfg, const char* key, char* buf, size_t buf_len);
int dsmoe_config_save(const dsmoe_config* cfg, const char* path);
void dsmoe_config_free(dsmoe_config* cfg);

/* ---- synthetic corpus ---- */
dsmoe_corpus* dsmoe_corpus_generate(const dsmoe_config* cfg);
dsmoe_corpus* dsmoe_corpus_load(const char* dir);
int dsmoe_corpus_save(const dsmoe_corpus* corpus, const char* dir);
int dsmoe_corpus_counts(const dsmoe_corpus* corpus, int* train_n, int* val_n, int* test_n);
void dsmoe_corpus_free(dsmoe_corpus* corpus);

/* ---- training and models ---- */
/* trains a fresh model on the corpus train split; when loss_curve_path is
 * non-NULL the per-step losses are written there as "step loss lr" lines */
dsmoe_model* dsmoe_train(const dsmoe_config* cfg, const dsmoe_corpus* corpus,
                         const char* loss_curve_path);
dsmoe_model* dsmoe_model_load(const char* path);
int dsmoe_model_save(const dsmoe_model* model, const char* path);
/* anchor priors as "scale w h" lines */
int dsmoe_model_export_anchors(const dsmoe_model* model, const char* path);
void dsmoe_model_free(dsmoe_model* model);

/* ---- evaluation ---- */
dsmoe_report* dsmoe_evaluate(dsmoe_model* model, const dsmoe_corpus* corpus, const char* split);
int dsmoe_report_write(const dsmoe_report* report, const char* path);
/* keys: map50, map5095, precision, recall, f1, images, activated_gflops,
 * latency_ms; returns NaN for unknown keys */
double dsmoe_report_metric(const dsmoe_report* report, const char* key);
void dsmoe_report_free(dsmoe_report* report);

/* ---- sweeps ---- */
/* one short training run per k on a corpus generated from cfg; writes
 * "k,map50,activated_gflops,wall_seconds" rows */
int dsmoe_sweep_k(const dsmoe_config* cfg, const int* ks, int n_ks, const char* csv_path);
/* analytic counting model only; writes "k,activated_flops,dense_flops" rows */
int dsmoe_flops_table(const dsmoe_config* cfg, const int* ks, int n_ks, const char* csv_path);

#ifdef __cplusplus
}
#endif

#endif
