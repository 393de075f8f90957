// SPDX-License-Identifier: Apache-2.0
//
// Exercises the shared-library C interface end to end on a tiny run.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "dsmoe.h"

namespace {

dsmoe_config* tiny_config() {
  dsmoe_config* cfg = dsmoe_config_create();
  REQUIRE(cfg != nullptr);
  const char* kv[][2] = {{"n_images", "16"},     {"steps", "4"},
                         {"batch_size", "4"},    {"d_t", "32"},
                         {"ball_dim", "6"},      {"c_cs", "16"},
                         {"c_b", "8"},           {"c_m", "8"},
                         {"c_g", "8"},           {"d_g", "8"},
                         {"head_channels", "12"}, {"n_experts", "4"},
                         {"enc_widths", "8,12,16,20"}};
  for (auto& p : kv) REQUIRE(dsmoe_config_set(cfg, p[0], p[1]) == DSMOE_OK);
  return cfg;
}

}  // namespace

TEST_CASE("version and error strings exist") {
  CHECK(std::strlen(dsmoe_version()) > 0);
  CHECK(dsmoe_last_error() != nullptr);
}

TEST_CASE("config rejects unknown keys and reports the error") {
  dsmoe_config* cfg = dsmoe_config_create();
  CHECK(dsmoe_config_set(cfg, "definitely_not_a_key", "7") == DSMOE_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(dsmoe_last_error()) > 0);
  char buf[64];
  CHECK(dsmoe_config_get(cfg, "seed", buf, sizeof(buf)) == DSMOE_OK);
  CHECK(std::string(buf) == "42");
  CHECK(dsmoe_config_set(nullptr, "seed", "1") == DSMOE_ERR_INVALID_ARGUMENT);
  dsmoe_config_free(cfg);
}

TEST_CASE("full pipeline through the C interface") {
  dsmoe_config* cfg = tiny_config();

  dsmoe_corpus* corpus = dsmoe_corpus_generate(cfg);
  REQUIRE(corpus != nullptr);
  int tr = 0, va = 0, te = 0;
  CHECK(dsmoe_corpus_counts(corpus, &tr, &va, &te) == DSMOE_OK);
  CHECK(tr + va + te == 16);

  CHECK(dsmoe_corpus_save(corpus, "capi_corpus_tmp") == DSMOE_OK);
  dsmoe_corpus* loaded = dsmoe_corpus_load("capi_corpus_tmp");
  REQUIRE(loaded != nullptr);

  dsmoe_model* model = dsmoe_train(cfg, corpus, "capi_curve.txt");
  REQUIRE(model != nullptr);
  {
    std::FILE* f = std::fopen("capi_curve.txt", "r");
    REQUIRE(f != nullptr);
    int step;
    double loss, lr;
    int rows = 0;
    while (std::fscanf(f, "%d %lf %lf", &step, &loss, &lr) == 3) {
      CHECK(std::isfinite(loss));
      ++rows;
    }
    std::fclose(f);
    CHECK(rows == 4);
  }

  CHECK(dsmoe_model_save(model, "capi_model.dsmoe") == DSMOE_OK);
  CHECK(dsmoe_model_export_anchors(model, "capi_anchors.txt") == DSMOE_OK);
  dsmoe_model* back = dsmoe_model_load("capi_model.dsmoe");
  REQUIRE(back != nullptr);

  dsmoe_report* report = dsmoe_evaluate(back, loaded, "test");
  REQUIRE(report != nullptr);
  double map50 = dsmoe_report_metric(report, "map50");
  CHECK(map50 >= 0.0);
  CHECK(map50 <= 1.0);
  CHECK(dsmoe_report_metric(report, "map5095") <= map50 + 1e-12);
  CHECK(std::isnan(dsmoe_report_metric(report, "not_a_metric")));
  CHECK(dsmoe_report_write(report, "capi_report.txt") == DSMOE_OK);

  CHECK(dsmoe_evaluate(back, loaded, "no_such_split") == nullptr);
  CHECK(std::strlen(dsmoe_last_error()) > 0);

  int ks[] = {1, 2, 4};
  CHECK(dsmoe_flops_table(cfg, ks, 3, "capi_flops.csv") == DSMOE_OK);
  {
    std::FILE* f = std::fopen("capi_flops.csv", "r");
    REQUIRE(f != nullptr);
    char header[128];
    REQUIRE(std::fgets(header, sizeof(header), f) != nullptr);
    CHECK(std::string(header) == "k,activated_flops,dense_flops\n");
    double prev = -1.0;
    int k;
    double act, dense;
    while (std::fscanf(f, "%d,%lf,%lf", &k, &act, &dense) == 3) {
      CHECK(act > prev);
      CHECK(act <= dense);
      prev = act;
    }
    std::fclose(f);
  }

  dsmoe_report_free(report);
  dsmoe_model_free(back);
  dsmoe_model_free(model);
  dsmoe_corpus_free(loaded);
  dsmoe_corpus_free(corpus);
  dsmoe_config_free(cfg);
  std::filesystem::remove_all("capi_corpus_tmp");
  for (const char* p : {"capi_curve.txt", "capi_model.dsmoe", "capi_anchors.txt",
                        "capi_report.txt", "capi_flops.csv"})
    std::remove(p);
}
