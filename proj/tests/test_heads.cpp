// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "dsmoe/gradcheck.hpp"
#include "dsmoe/heads.hpp"
#include "dsmoe/rng.hpp"

using namespace dsmoe;
using namespace dsmoe::det;

namespace {

Tensor random_map(Graph& g, Rng& rng, int B, int C, int H, int W) {
  std::vector<double> d(static_cast<size_t>(B * C * H * W));
  for (auto& v : d) v = rng.normal();
  return g.leaf({B, C, H, W}, d);
}

Tensor find_param(ParamRegistry& reg, const std::string& name) {
  for (auto& e : reg.entries())
    if (e.name == name) return e.tensor;
  FAIL("param not found: ", name);
  return Tensor();
}

AnchorSet toy_anchors() {
  AnchorSet a;
  a.anchors = {{0.08, 0.1}, {0.15, 0.12}, {0.2, 0.25}, {0.3, 0.28}, {0.45, 0.4}, {0.6, 0.55}};
  a.per_scale = 3;
  return a;
}

}  // namespace

TEST_CASE("cbs block") {
  SUBCASE("zero input stays zero") {
    Graph g;
    ParamRegistry reg;
    Rng rng(1);
    Cbs cbs(g, reg, "cbs", 3, 5, rng);
    Tensor out = cbs.forward(g.leaf({2, 3, 6, 6}, 0.0));
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == 0.0);
  }
  SUBCASE("batch statistics before affine: mean 0, variance 1") {
    Graph g;
    ParamRegistry reg;
    Rng rng(2);
    Cbs cbs(g, reg, "cbs", 3, 4, rng);
    Rng dr(3);
    Tensor x = random_map(g, dr, 4, 3, 6, 6);
    // probe the BN output directly with identity affine (init state)
    Conv2dOpts o;
    o.pad_h = o.pad_w = 1;
    Tensor conv = conv2d(x, find_param(reg, "cbs.w"), nullptr, o);
    Tensor bn = batch_norm(conv, find_param(reg, "cbs.bn_gain"), find_param(reg, "cbs.bn_bias"));
    int B = 4, C = 4, HW = 36;
    for (int c = 0; c < C; ++c) {
      double mu = 0.0, var = 0.0;
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < HW; ++i) mu += bn.at((b * C + c) * HW + i);
      mu /= B * HW;
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < HW; ++i) {
          double v = bn.at((b * C + c) * HW + i) - mu;
          var += v * v;
        }
      var /= B * HW;
      CHECK(std::fabs(mu) < 1e-9);
      CHECK(std::fabs(var - 1.0) < 1e-6);
    }
  }
  SUBCASE("gradient passes finite differences in batch mode") {
    auto f = [](Graph& g, const Tensor& x) {
      ParamRegistry reg;
      Rng rng(4);
      Cbs cbs(g, reg, "cbs", 2, 3, rng);
      Tensor out = cbs.forward(x);
      Rng rr(5);
      std::vector<double> w(static_cast<size_t>(out.numel()));
      for (auto& v : w) v = rr.normal();
      return sum(mul(out, g.leaf(out.shape(), w)));
    };
    Rng dr(6);
    std::vector<double> x0(static_cast<size_t>(2 * 2 * 4 * 4));
    for (auto& v : x0) v = dr.normal();
    auto rep = check_gradients(f, x0, {2, 2, 4, 4}, 1e-4, 1e-3);
    CAPTURE(rep.message);
    CHECK(rep.pass);
  }
}

TEST_CASE("c2f fusion") {
  Graph g;
  ParamRegistry reg;
  Rng rng(7);
  C2f c2f(g, reg, "c2f", /*c_in=*/10, /*c_out=*/8, rng);
  Rng dr(8);
  Tensor f_norm = random_map(g, dr, 1, 6, 5, 5);
  Tensor f_shallow = random_map(g, dr, 1, 4, 5, 5);

  SUBCASE("output keeps the spatial dims") {
    Tensor out = c2f.forward(f_norm, f_shallow);
    CHECK(out.shape() == Shape{1, 8, 5, 5});
  }

  SUBCASE("zero residual scale reduces to a single folded 1x1 conv") {
    find_param(reg, "c2f.b1_scale").mutable_data()[0] = 0.0;
    find_param(reg, "c2f.b2_scale").mutable_data()[0] = 0.0;
    Tensor out = c2f.forward(f_norm, f_shallow);
    // fold: out = W_fuse [a; b; b; b] + b_fuse with [a; b] = W_pre x + b_pre
    int h = c2f.hidden();
    const auto& wf = find_param(reg, "c2f.fuse_w").data();   // 8 x 4h
    const auto& bf = find_param(reg, "c2f.fuse_b").data();
    const auto& wp = find_param(reg, "c2f.pre_w").data();    // 2h x 10
    const auto& bp = find_param(reg, "c2f.pre_b").data();
    int c_in = 10, c_out = 8;
    std::vector<double> weff(static_cast<size_t>(c_out * 2 * h), 0.0);
    for (int oc = 0; oc < c_out; ++oc)
      for (int j = 0; j < h; ++j) {
        weff[static_cast<size_t>(oc * 2 * h + j)] = wf[static_cast<size_t>(oc * 4 * h + j)];
        weff[static_cast<size_t>(oc * 2 * h + h + j)] =
            wf[static_cast<size_t>(oc * 4 * h + h + j)] +
            wf[static_cast<size_t>(oc * 4 * h + 2 * h + j)] +
            wf[static_cast<size_t>(oc * 4 * h + 3 * h + j)];
      }
    std::vector<double> wnet(static_cast<size_t>(c_out * c_in), 0.0);
    std::vector<double> bnet(static_cast<size_t>(c_out), 0.0);
    for (int oc = 0; oc < c_out; ++oc) {
      bnet[static_cast<size_t>(oc)] = bf[static_cast<size_t>(oc)];
      for (int j = 0; j < 2 * h; ++j) {
        bnet[static_cast<size_t>(oc)] +=
            weff[static_cast<size_t>(oc * 2 * h + j)] * bp[static_cast<size_t>(j)];
        for (int ic = 0; ic < c_in; ++ic)
          wnet[static_cast<size_t>(oc * c_in + ic)] +=
              weff[static_cast<size_t>(oc * 2 * h + j)] * wp[static_cast<size_t>(j * c_in + ic)];
      }
    }
    Tensor wn = g.leaf({c_out, c_in, 1, 1}, wnet);
    Tensor bn = g.leaf({c_out}, bnet);
    Tensor expect = conv2d(concat({f_norm, f_shallow}, 1), wn, &bn, {});
    for (std::int64_t i = 0; i < out.numel(); ++i)
      CHECK(out.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-10));
  }

  SUBCASE("spatial mismatch rejected") {
    Tensor small = random_map(dr.uniform() < 2 ? g : g, dr, 1, 4, 3, 3);
    CHECK_THROWS_AS(c2f.forward(f_norm, small), std::invalid_argument);
  }

  SUBCASE("gradient passes finite differences") {
    auto f = [](Graph& g, const Tensor& x) {
      ParamRegistry reg2;
      Rng rng2(7);
      C2f c2(g, reg2, "c2f", 8, 8, rng2);
      Tensor fn = slice(x, 1, 0, 5);
      Tensor fs = slice(x, 1, 5, 3);
      Tensor out = c2.forward(fn, fs);
      Rng rr(9);
      std::vector<double> w(static_cast<size_t>(out.numel()));
      for (auto& v : w) v = rr.normal();
      return sum(mul(out, g.leaf(out.shape(), w)));
    };
    Rng dr2(10);
    std::vector<double> x0(static_cast<size_t>(1 * 8 * 4 * 4));
    for (auto& v : x0) v = dr2.normal();
    auto rep = check_gradients(f, x0, {1, 8, 4, 4}, 1e-4, 1e-3);
    CAPTURE(rep.message);
    CHECK(rep.pass);
  }
}

TEST_CASE("decoupled head decode") {
  Graph g;
  ParamRegistry reg;
  Rng rng(11);
  int C = 4, A = 3;
  DecoupledHead head(g, reg, "head", 6, C, A, rng);
  AnchorSet anchors = toy_anchors();

  SUBCASE("zero logits decode to cell centers, anchor priors, probability one half") {
    for (const char* n : {"head.cls2_w", "head.box2_w", "head.box2_b", "head.cls2_b"})
      find_param(reg, n).mutable_data().assign(find_param(reg, n).numel(), 0.0);
    Rng dr(12);
    Tensor f = random_map(g, dr, 1, 6, 4, 4);
    auto out = head.forward(f);
    auto recs = decode_head(out, anchors, /*scale=*/0, /*batch_index=*/0);
    REQUIRE(recs.size() == static_cast<size_t>(4 * 4 * A));
    int idx = 0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        for (int a = 0; a < A; ++a, ++idx) {
          const auto& r = recs[static_cast<size_t>(idx)];
          CHECK(r.box.cx == doctest::Approx((x + 0.5) / 4.0).epsilon(1e-12));
          CHECK(r.box.cy == doctest::Approx((y + 0.5) / 4.0).epsilon(1e-12));
          CHECK(r.box.w == doctest::Approx(anchors.at(0, a).first).epsilon(1e-12));
          CHECK(r.box.h == doctest::Approx(anchors.at(0, a).second).epsilon(1e-12));
          CHECK(r.confidence == 0.5);
          for (double p : r.class_probs) CHECK(p == 0.5);
        }
  }

  SUBCASE("decoded boxes always satisfy the box invariants") {
    Rng dr(13);
    Tensor f = random_map(g, dr, 2, 6, 4, 4);
    auto out = head.forward(f);
    for (int b = 0; b < 2; ++b)
      for (const auto& r : decode_head(out, anchors, 1, b)) CHECK_NOTHROW(r.box.validate());
  }

  SUBCASE("encode then decode recovers the box") {
    Rng dr(14);
    for (int t = 0; t < 200; ++t) {
      Box gt;
      gt.w = dr.uniform(0.05, 0.6);
      gt.h = dr.uniform(0.05, 0.6);
      gt.cx = dr.uniform(gt.w / 2, 1.0 - gt.w / 2);
      gt.cy = dr.uniform(gt.h / 2, 1.0 - gt.h / 2);
      int grid = 8;
      auto tgt = encode_box(gt, 0, anchors, 1, grid, grid);
      auto prior = anchors.at(1, tgt.anchor);
      Box back = decode_box(tgt.tx, tgt.ty, tgt.tw, tgt.th, tgt.cell_y, tgt.cell_x, grid, grid,
                            prior.first, prior.second);
      CHECK(back.cx == doctest::Approx(gt.cx).epsilon(1e-9));
      CHECK(back.cy == doctest::Approx(gt.cy).epsilon(1e-9));
      CHECK(back.w == doctest::Approx(gt.w).epsilon(1e-9));
      CHECK(back.h == doctest::Approx(gt.h).epsilon(1e-9));
    }
  }

  SUBCASE("anchor assignment picks the best prior over both scales") {
    Box small{0.5, 0.5, 0.08, 0.1};
    auto asg = assign_anchor(small, anchors);
    CHECK(asg.scale == 0);
    CHECK(asg.anchor == 0);
    Box large{0.5, 0.5, 0.58, 0.56};
    auto asg2 = assign_anchor(large, anchors);
    CHECK(asg2.scale == 1);
    CHECK(asg2.anchor == 2);
  }
}
