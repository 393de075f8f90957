// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "dsmoe/gradcheck.hpp"
#include "dsmoe/text.hpp"

using namespace dsmoe;
using namespace dsmoe::text;

namespace {

PromptSet make_prompts(int C) {
  PromptSet ps;
  for (int i = 0; i < C; ++i) {
    ps.prompts.push_back("defect class number " + std::to_string(i));
    ps.class_names.push_back("class_" + std::to_string(i));
  }
  return ps;
}

}  // namespace

TEST_CASE("stub embeddings are deterministic and unit norm") {
  auto a = stub_embed("bright pinhole", 64, 42);
  auto b = stub_embed("bright pinhole", 64, 42);
  REQUIRE(a.size() == 64);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  double r2 = 0.0;
  for (double x : a) r2 += x * x;
  CHECK(std::sqrt(r2) == doctest::Approx(1.0).epsilon(1e-12));

  auto c = stub_embed("bright pinhole", 64, 43);
  bool all_same = true;
  for (size_t i = 0; i < a.size(); ++i) all_same = all_same && a[i] == c[i];
  CHECK_FALSE(all_same);  // seed participates

  // empty prompt is a valid deterministic vector; freeze a couple of
  // coordinates as a regression fixture
  auto e1 = stub_embed("", 8, 42);
  auto e2 = stub_embed("", 8, 42);
  for (size_t i = 0; i < e1.size(); ++i) CHECK(e1[i] == e2[i]);
  double er2 = 0.0;
  for (double x : e1) er2 += x * x;
  CHECK(std::sqrt(er2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("positional encoding base pattern") {
  SUBCASE("row zero alternates 0, 1") {
    auto pe = positional_encoding_base(3, 8);
    for (int j = 0; j < 4; ++j) {
      CHECK(pe[static_cast<size_t>(2 * j)] == 0.0);
      CHECK(pe[static_cast<size_t>(2 * j + 1)] == 1.0);
    }
  }
  SUBCASE("entries bounded in [-1, 1]") {
    auto pe = positional_encoding_base(16, 10);
    for (double v : pe) {
      CHECK(v <= 1.0);
      CHECK(v >= -1.0);
    }
  }
  SUBCASE("full 4x8 matrix matches direct scalar evaluation") {
    auto pe = positional_encoding_base(4, 8);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double freq = std::pow(10000.0, -2.0 * j / 8.0);
        CHECK(pe[static_cast<size_t>(i * 8 + 2 * j)] == doctest::Approx(std::sin(i * freq)).epsilon(1e-15));
        CHECK(pe[static_cast<size_t>(i * 8 + 2 * j + 1)] == doctest::Approx(std::cos(i * freq)).epsilon(1e-15));
      }
  }
}

TEST_CASE("embed_prompts produces C x d_t with stub + positional encoding") {
  Graph g;
  ParamRegistry reg;
  Rng rng(1);
  TextSemantics ts(g, reg, 64, 8, rng);

  SUBCASE("18 classes at d_t = 64, all rows finite") {
    auto ps = make_prompts(18);
    TextEmbeddings t = ts.embed(ps, 42);
    REQUIRE(t.matrix.shape() == Shape{18, 64});
    for (double v : t.matrix.data()) CHECK(std::isfinite(v));
  }

  SUBCASE("same prompt twice differs only by positional encoding") {
    PromptSet ps;
    ps.prompts = {"identical text", "identical text"};
    ps.class_names = {"a", "b"};
    TextEmbeddings t = ts.embed(ps, 42);
    auto pe = positional_encoding_base(2, 64);
    for (int j = 0; j < 64; ++j) {
      double row0 = t.matrix.at(j) - pe[static_cast<size_t>(j)];
      double row1 = t.matrix.at(64 + j) - pe[static_cast<size_t>(64 + j)];
      CHECK(row0 == doctest::Approx(row1).epsilon(1e-15));
    }
  }

  SUBCASE("odd d_t is rejected") {
    ParamRegistry reg2;
    Rng rng2(2);
    CHECK_THROWS_AS(TextSemantics(g, reg2, 63, 7, rng2), std::invalid_argument);
  }
}

TEST_CASE("distillation") {
  SUBCASE("single class: attention weight is 1, residual + LayerNorm") {
    Graph g;
    ParamRegistry reg;
    Rng rng(3);
    TextSemantics ts(g, reg, 16, 8, rng);
    auto ps = make_prompts(1);
    TextEmbeddings t = ts.embed(ps, 42);
    TextEmbeddings d = ts.distill(t);
    CHECK(d.distilled);
    REQUIRE(d.matrix.shape() == Shape{1, 16});
    // with C = 1 softmax over one logit is exactly 1, so the attention
    // output is just the value row through the output projection
    Tensor v = matmul(t.matrix, matmul(g.leaf({16, 16}, reg.entries()[2].tensor.data()),
                                       g.leaf({16, 16}, reg.entries()[3].tensor.data())));
    Tensor expect = layer_norm(add(t.matrix, v), reg.entries()[5].tensor, reg.entries()[6].tensor);
    for (int j = 0; j < 16; ++j)
      CHECK(d.matrix.at(j) == doctest::Approx(expect.at(j)).epsilon(1e-12));
  }

  SUBCASE("identical rows stay identical") {
    Graph g;
    ParamRegistry reg;
    Rng rng(4);
    TextSemantics ts(g, reg, 16, 8, rng);
    PromptSet ps;
    ps.prompts = {"same", "same", "same"};
    ps.class_names = {"a", "b", "c"};
    std::vector<double> rows(3 * 16);
    auto v = stub_embed("same", 16, 7);
    for (int i = 0; i < 3; ++i) std::copy(v.begin(), v.end(), rows.begin() + i * 16);
    TextEmbeddings t{g.leaf({3, 16}, rows), 16, false};
    TextEmbeddings d = ts.distill(t);
    for (int j = 0; j < 16; ++j) {
      CHECK(d.matrix.at(j) == doctest::Approx(d.matrix.at(16 + j)).epsilon(1e-12));
      CHECK(d.matrix.at(j) == doctest::Approx(d.matrix.at(32 + j)).epsilon(1e-12));
    }
  }

  SUBCASE("layer-norm row property before affine") {
    Graph g;
    ParamRegistry reg;
    Rng rng(5);
    TextSemantics ts(g, reg, 32, 8, rng);  // gain 1, bias 0 at init
    auto ps = make_prompts(6);
    TextEmbeddings d = ts.distill(ts.embed(ps, 42));
    for (int i = 0; i < 6; ++i) {
      double mu = 0.0;
      for (int j = 0; j < 32; ++j) mu += d.matrix.at(i * 32 + j);
      mu /= 32.0;
      double var = 0.0;
      for (int j = 0; j < 32; ++j) {
        double x = d.matrix.at(i * 32 + j) - mu;
        var += x * x;
      }
      var /= 32.0;
      CHECK(std::fabs(mu) < 1e-9);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  SUBCASE("residual identity with zeroed value projection") {
    Graph g;
    ParamRegistry reg;
    Rng rng(6);
    TextSemantics ts(g, reg, 16, 8, rng);
    auto& wv = reg.entries()[2];
    REQUIRE(wv.name == "text.wv");
    std::fill(wv.tensor.mutable_data().begin(), wv.tensor.mutable_data().end(), 0.0);
    auto ps = make_prompts(4);
    TextEmbeddings t = ts.embed(ps, 42);
    TextEmbeddings d = ts.distill(t);
    Tensor expect = layer_norm(t.matrix, reg.entries()[5].tensor, reg.entries()[6].tensor);
    for (int i = 0; i < 4 * 16; ++i)
      CHECK(d.matrix.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("self-attention is permutation equivariant") {
  Graph g;
  ParamRegistry reg;
  Rng rng(7);
  TextSemantics ts(g, reg, 16, 8, rng);
  int C = 5;
  std::vector<double> rows(static_cast<size_t>(C) * 16);
  Rng data_rng(100);
  for (auto& x : rows) x = data_rng.normal();
  Tensor t = g.leaf({C, 16}, rows);
  Tensor out = ts.self_attention(t);

  std::vector<int> perm{3, 0, 4, 1, 2};
  std::vector<double> prows(rows.size());
  for (int i = 0; i < C; ++i)
    std::copy(rows.begin() + perm[static_cast<size_t>(i)] * 16,
              rows.begin() + (perm[static_cast<size_t>(i)] + 1) * 16, prows.begin() + i * 16);
  Tensor tp = g.leaf({C, 16}, prows);
  Tensor outp = ts.self_attention(tp);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < 16; ++j)
      CHECK(outp.at(i * 16 + j) ==
            doctest::Approx(out.at(perm[static_cast<size_t>(i)] * 16 + j)).epsilon(1e-12));
}

TEST_CASE("distillation gradient passes finite differences") {
  int C = 4, d_t = 16;
  auto f = [&](Graph& g, const Tensor& x) {
    ParamRegistry reg;
    Rng rng(8);
    TextSemantics ts(g, reg, d_t, 8, rng);
    TextEmbeddings t{x, d_t, false};
    return sum(ts.distill(t).matrix);
  };
  Rng rng(9);
  std::vector<double> x0(static_cast<size_t>(C * d_t));
  for (auto& v : x0) v = rng.normal();
  auto rep = check_gradients(f, x0, {C, d_t}, 1e-4, 1e-3);
  CAPTURE(rep.message);
  CHECK(rep.pass);
}

TEST_CASE("determinism: fixed prompts and seed give bit-identical distilled rows") {
  auto run = [] {
    Graph g;
    ParamRegistry reg;
    Rng rng(10);
    TextSemantics ts(g, reg, 32, 8, rng);
    auto ps = make_prompts(5);
    return ts.distill(ts.embed(ps, 42)).matrix.data();
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("prompt file round trip") {
  PromptSet ps = make_prompts(3);
  ps.prompts[1] = "";  // empty prompts are allowed and embed deterministically
  ps.save("prompts_test.txt", "manifest_test.txt");
  PromptSet back = PromptSet::load("prompts_test.txt", "manifest_test.txt");
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.prompts[static_cast<size_t>(i)] == ps.prompts[static_cast<size_t>(i)]);
    CHECK(back.class_names[static_cast<size_t>(i)] == ps.class_names[static_cast<size_t>(i)]);
  }
  std::remove("prompts_test.txt");
  std::remove("manifest_test.txt");
}
