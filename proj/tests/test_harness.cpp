// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dsmoe/config.hpp"
#include "dsmoe/eval.hpp"
#include "dsmoe/model.hpp"
#include "dsmoe/preprocess.hpp"
#include "dsmoe/report.hpp"
#include "dsmoe/synth.hpp"
#include "dsmoe/train.hpp"

using namespace dsmoe;
using namespace dsmoe::harness;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.n_images = 24;
  cfg.image_size = 64;
  cfg.batch_size = 4;
  cfg.enc_widths = {8, 12, 16, 20};
  cfg.c_cs = 16;
  cfg.c_b = 8;
  cfg.c_m = 8;
  cfg.c_g = 8;
  cfg.d_g = 8;
  cfg.d_t = 32;
  cfg.ball_dim = 6;
  cfg.head_channels = 12;
  cfg.n_experts = 4;
  cfg.steps = 3;
  return cfg;
}

}  // namespace

TEST_CASE("synthetic corpus generation") {
  SynthConfig cfg;
  cfg.n_images = 20;
  SUBCASE("deterministic regeneration is byte-identical") {
    auto a = generate_corpus(42, cfg);
    auto b = generate_corpus(42, cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
      REQUIRE(a.samples[i].image.data.size() == b.samples[i].image.data.size());
      for (size_t j = 0; j < a.samples[i].image.data.size(); ++j)
        CHECK(a.samples[i].image.data[j] == b.samples[i].image.data[j]);
      REQUIRE(a.samples[i].annotations.size() == b.samples[i].annotations.size());
    }
    CHECK(a.train_ids == b.train_ids);
  }
  SUBCASE("200 images split 6:2:2 into 120/40/40") {
    SynthConfig big;
    big.n_images = 200;
    auto c = generate_corpus(42, big);
    CHECK(c.train_ids.size() == 120);
    CHECK(c.val_ids.size() == 40);
    CHECK(c.test_ids.size() == 40);
  }
  SUBCASE("recorded boxes contain at least 90 percent of rendered pixels") {
    SynthConfig small = cfg;
    small.small_object_fraction = 0.3;
    auto c = generate_corpus(43, small);
    int checked = 0;
    for (const auto& s : c.samples)
      for (size_t i = 0; i < s.annotations.size(); ++i) {
        CHECK(box_pixel_coverage(s, i) >= 0.9);
        ++checked;
      }
    CHECK(checked > 10);
  }
  SUBCASE("save and load round trip") {
    auto c = generate_corpus(42, cfg);
    std::string dir = "corpus_test_tmp";
    c.save(dir);
    auto back = SyntheticCorpus::load(dir);
    REQUIRE(back.samples.size() == c.samples.size());
    CHECK(back.class_names == c.class_names);
    CHECK(back.prompts == c.prompts);
    CHECK(back.train_ids == c.train_ids);
    for (size_t i = 0; i < c.samples.size(); ++i) {
      REQUIRE(back.samples[i].annotations.size() == c.samples[i].annotations.size());
      for (size_t j = 0; j < c.samples[i].annotations.size(); ++j) {
        CHECK(back.samples[i].annotations[j].class_id == c.samples[i].annotations[j].class_id);
        CHECK(back.samples[i].annotations[j].box.cx == c.samples[i].annotations[j].box.cx);
      }
    }
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("preprocessing") {
  SUBCASE("gamma endpoints") {
    Image im = Image::filled(4, 4, 1.0);
    apply_gamma(im, 1.0, 1.5);
    for (double v : im.data) CHECK(v == 1.0);
    Image half = Image::filled(4, 4, 0.5);
    apply_gamma(half, 1.0, 1.5);
    for (double v : half.data) CHECK(v == doctest::Approx(std::pow(0.5, 1.5)).epsilon(1e-12));
  }
  SUBCASE("letterbox preserves aspect ratio of boxes") {
    Sample s;
    s.image = Image::filled(40, 80, 0.3);
    Annotation a;
    a.box = {0.5, 0.5, 0.4, 0.25};
    a.class_id = 1;
    s.annotations.push_back(a);
    Sample out = letterbox_to(s, 64);
    CHECK(out.image.w == 64);
    CHECK(out.image.h == 64);
    // original pixel box: 16 x 20 -> on the 80-square canvas: 16/80 x 20/80
    CHECK(out.annotations[0].box.w == doctest::Approx(16.0 / 80).epsilon(1e-12));
    CHECK(out.annotations[0].box.h == doctest::Approx(20.0 / 80).epsilon(1e-12));
    double ratio_before = (0.4 * 40) / (0.25 * 80);
    double ratio_after = (out.annotations[0].box.w * 64) / (out.annotations[0].box.h * 64);
    CHECK(ratio_after == doctest::Approx(ratio_before).epsilon(1e-9));
  }
  SUBCASE("mixup of an image with itself keeps pixels and dedupes labels") {
    Sample s;
    s.image = Image::filled(8, 8, 0.4);
    Annotation a;
    a.box = {0.5, 0.5, 0.2, 0.2};
    s.annotations.push_back(a);
    Sample out = mixup(s, s);
    for (size_t i = 0; i < out.image.data.size(); ++i)
      CHECK(out.image.data[i] == s.image.data[i]);
    CHECK(out.annotations.size() == 1);
  }
}

TEST_CASE("run config file round trip and validation") {
  RunConfig cfg = tiny_config();
  cfg.mlp_router = true;
  cfg.lambda_align = 0.02;
  cfg.save("cfg_test.txt");
  RunConfig back = RunConfig::load("cfg_test.txt");
  CHECK(back.n_images == cfg.n_images);
  CHECK(back.mlp_router == cfg.mlp_router);
  CHECK(back.lambda_align == cfg.lambda_align);
  CHECK(back.enc_widths == cfg.enc_widths);
  std::remove("cfg_test.txt");

  RunConfig bad = cfg;
  bad.image_size = 60;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(cfg.get("nonsense"), std::invalid_argument);
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(1e-3, 0, 100) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(cosine_lr(1e-3, 50, 100) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(cosine_lr(1e-3, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("model forward, loss, and a few optimizer steps") {
  RunConfig cfg = tiny_config();
  SynthConfig scfg;
  scfg.n_images = cfg.n_images;
  auto corpus = generate_corpus(cfg.seed, scfg);
  DsMoeModel model(cfg, corpus.prompts, corpus.class_names);

  SUBCASE("loss is finite and heads have the expected shapes") {
    Sample s = prepare_sample(corpus.samples[0], cfg);
    std::vector<const Sample*> batch{&s};
    auto res = model.loss(batch);
    CHECK(std::isfinite(res.total.item()));
    CHECK(res.total.item() > 0.0);
    model.graph().clear();
  }

  SUBCASE("three training steps reduce nothing but run deterministically") {
    auto run_once = [&] {
      DsMoeModel m(cfg, corpus.prompts, corpus.class_names);
      Trainer tr(m, cfg);
      auto logs = tr.run(corpus, 3);
      std::vector<double> losses;
      for (const auto& l : logs) losses.push_back(l.loss);
      return losses;
    };
    auto a = run_once();
    auto b = run_once();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  SUBCASE("detect produces valid predictions and evaluation plumbing works") {
    Sample s = prepare_sample(corpus.samples[corpus.test_ids[0]], cfg);
    auto preds = model.detect(s, 0);
    for (const auto& p : preds) {
      CHECK(p.confidence >= 0.0);
      CHECK(p.confidence <= 1.0);
      CHECK_NOTHROW(p.box.validate());
    }
    auto report = evaluate_split(model, corpus, "test");
    CHECK(report.summary.images == static_cast<int>(corpus.test_ids.size()));
    CHECK(report.summary.map5095 <= report.summary.map50 + 1e-12);
  }
}

TEST_CASE("model save and load round trip") {
  RunConfig cfg = tiny_config();
  SynthConfig scfg;
  scfg.n_images = 12;
  auto corpus = generate_corpus(7, scfg);
  DsMoeModel model(cfg, corpus.prompts, corpus.class_names);
  Trainer tr(model, cfg);
  tr.run(corpus, 2);

  model.save("model_test.dsmoe");
  auto back = DsMoeModel::load("model_test.dsmoe");
  // identical parameters
  REQUIRE(back->params().entries().size() == model.params().entries().size());
  for (size_t i = 0; i < model.params().entries().size(); ++i) {
    const auto& a = model.params().entries()[i];
    const auto& b = back->params().entries()[i];
    REQUIRE(a.name == b.name);
    REQUIRE(a.tensor.numel() == b.tensor.numel());
    for (std::int64_t j = 0; j < a.tensor.numel(); ++j)
      CHECK(a.tensor.at(j) == b.tensor.at(j));
  }
  // identical detections
  Sample s = prepare_sample(corpus.samples[0], cfg);
  auto p1 = model.detect(s, 0);
  auto p2 = back->detect(s, 0);
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].confidence == p2[i].confidence);
    CHECK(p1[i].class_id == p2[i].class_id);
    CHECK(p1[i].box.cx == p2[i].box.cx);
  }
  std::remove("model_test.dsmoe");
}

TEST_CASE("report emission round trip with stable bytes") {
  EvalReport r;
  r.class_names = {"pinhole", "scratch"};
  r.summary.images = 10;
  r.summary.map50 = 0.8125;
  r.summary.map5095 = 0.5;
  r.summary.precision = 0.75;
  r.summary.recall = 0.9;
  r.summary.f1 = 2 * 0.75 * 0.9 / (0.75 + 0.9);
  r.summary.activated_gflops = 0.0123;
  r.summary.per_class_ap50 = {0.9, 0.725};
  r.summary.per_class_gt_count = {12, 8};
  r.summary.latency_ms_per_image = 123.456;  // must not appear in the file

  emit_report(r, "report_test.txt");
  auto back = parse_report("report_test.txt");
  CHECK(back.summary.map50 == r.summary.map50);
  CHECK(back.summary.map5095 == r.summary.map5095);
  CHECK(back.summary.f1 == doctest::Approx(r.summary.f1).epsilon(1e-12));
  CHECK(back.class_names == r.class_names);
  CHECK(back.summary.per_class_ap50[1] == r.summary.per_class_ap50[1]);

  emit_report(r, "report_test2.txtt");
  std::ifstream f1("report_test.txt"), f2("report_test2.txtt");
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.find("latency") == std::string::npos);
  std::remove("report_test.txt");
  std::remove("report_test2.txtt");
}
