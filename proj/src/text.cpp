// SPDX-License-Identifier: Apache-2.0
#include "dsmoe/text.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dsmoe::text {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
}  // namespace

void PromptSet::validate() const {
  if (prompts.empty()) fail("prompt set: need at least one prompt");
  if (class_names.size() != prompts.size())
    fail("prompt set: class manifest has " + std::to_string(class_names.size()) +
         " names for " + std::to_string(prompts.size()) + " prompts");
  std::set<std::string> seen;
  for (const auto& n : class_names)
    if (!seen.insert(n).second) fail("prompt set: duplicate class name '" + n + "'");
}

PromptSet PromptSet::load(const std::string& prompts_path, const std::string& manifest_path) {
  PromptSet ps;
  std::ifstream pin(prompts_path);
  if (!pin) fail("prompt set: cannot open " + prompts_path);
  std::string line;
  while (std::getline(pin, line)) ps.prompts.push_back(line);
  // trailing blank line from a final newline is not a prompt
  if (!ps.prompts.empty() && ps.prompts.back().empty()) ps.prompts.pop_back();

  std::ifstream min(manifest_path);
  if (!min) fail("prompt set: cannot open " + manifest_path);
  ps.class_names.assign(ps.prompts.size(), "");
  while (std::getline(min, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int idx;
    std::string name;
    if (!(ls >> idx >> name)) fail("prompt set: malformed manifest line '" + line + "'");
    if (idx < 0 || static_cast<size_t>(idx) >= ps.prompts.size())
      fail("prompt set: manifest index " + std::to_string(idx) + " out of range");
    ps.class_names[static_cast<size_t>(idx)] = name;
  }
  ps.validate();
  return ps;
}

void PromptSet::save(const std::string& prompts_path, const std::string& manifest_path) const {
  std::ofstream pout(prompts_path);
  if (!pout) fail("prompt set: cannot write " + prompts_path);
  for (const auto& p : prompts) pout << p << "\n";
  std::ofstream mout(manifest_path);
  if (!mout) fail("prompt set: cannot write " + manifest_path);
  for (size_t i = 0; i < class_names.size(); ++i) mout << i << " " << class_names[i] << "\n";
}

std::vector<double> stub_embed(const std::string& prompt, int d_t, std::uint64_t seed) {
  Rng rng(hash_string(prompt) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
  std::vector<double> v(static_cast<size_t>(d_t));
  for (auto& x : v) x = rng.normal();
  double r2 = 0.0;
  for (double x : v) r2 += x * x;
  double r = std::sqrt(r2);
  if (r == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= r;
  return v;
}

std::vector<double> positional_encoding_base(int C, int d_t) {
  std::vector<double> pe(static_cast<size_t>(C) * d_t);
  for (int i = 0; i < C; ++i)
    for (int j = 0; 2 * j < d_t; ++j) {
      double freq = std::pow(10000.0, -2.0 * j / static_cast<double>(d_t));
      double arg = i * freq;
      pe[static_cast<size_t>(i * d_t + 2 * j)] = std::sin(arg);
      pe[static_cast<size_t>(i * d_t + 2 * j + 1)] = std::cos(arg);
    }
  return pe;
}

TextSemantics::TextSemantics(Graph& g, ParamRegistry& reg, int d_t, int heads, Rng& init_rng)
    : g_(&g), d_t_(d_t), heads_(heads) {
  if (d_t % 2 != 0) fail("text: d_t must be even for the sin/cos pairing");
  if (d_t % heads != 0)
    fail("text: d_t=" + std::to_string(d_t) + " not divisible by heads=" + std::to_string(heads));
  double std_in = 1.0 / std::sqrt(static_cast<double>(d_t));
  wq_ = reg.make_normal(g, "text.wq", {d_t, d_t}, init_rng, std_in);
  wk_ = reg.make_normal(g, "text.wk", {d_t, d_t}, init_rng, std_in);
  wv_ = reg.make_normal(g, "text.wv", {d_t, d_t}, init_rng, std_in);
  // output projection starts near identity so the residual path dominates
  std::vector<double> wo(static_cast<size_t>(d_t) * d_t);
  for (int i = 0; i < d_t; ++i)
    for (int j = 0; j < d_t; ++j)
      wo[static_cast<size_t>(i * d_t + j)] = (i == j ? 1.0 : 0.0) + 0.01 * init_rng.normal();
  wo_ = reg.make(g, "text.wo", {d_t, d_t}, std::move(wo));
  pe_scale_ = reg.make_fill(g, "text.pe_scale", {1, d_t}, 1.0);
  ln_gain_ = reg.make_fill(g, "text.ln_gain", {d_t}, 1.0);
  ln_bias_ = reg.make_fill(g, "text.ln_bias", {d_t}, 0.0);
}

Tensor TextSemantics::positional_encoding(int C) const {
  Tensor base = g_->leaf({C, d_t_}, positional_encoding_base(C, d_t_));
  return mul(base, expand(pe_scale_, {C, d_t_}));
}

TextEmbeddings TextSemantics::embed(const PromptSet& ps, std::uint64_t seed) const {
  ps.validate();
  int C = ps.size();
  std::vector<double> rows(static_cast<size_t>(C) * d_t_);
  for (int i = 0; i < C; ++i) {
    auto v = stub_embed(ps.prompts[static_cast<size_t>(i)], d_t_, seed);
    std::copy(v.begin(), v.end(), rows.begin() + static_cast<std::int64_t>(i) * d_t_);
  }
  Tensor stub = g_->leaf({C, d_t_}, std::move(rows));
  TextEmbeddings out;
  out.matrix = add(stub, positional_encoding(C));
  out.d_t = d_t_;
  return out;
}

Tensor TextSemantics::self_attention(const Tensor& t) const {
  int C = t.dim(0);
  int dh = d_t_ / heads_;
  Tensor q = matmul(t, wq_);
  Tensor k = matmul(t, wk_);
  Tensor v = matmul(t, wv_);
  std::vector<Tensor> heads_out;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads_; ++h) {
    Tensor qh = slice(q, 1, h * dh, dh);
    Tensor kh = slice(k, 1, h * dh, dh);
    Tensor vh = slice(v, 1, h * dh, dh);
    Tensor scores = mul_scalar(matmul(qh, permute(kh, {1, 0})), inv_sqrt_dh);
    Tensor attn = softmax(scores, 1.0);
    heads_out.push_back(matmul(attn, vh));
  }
  Tensor merged = heads_ == 1 ? heads_out[0] : concat(heads_out, 1);
  (void)C;
  return matmul(merged, wo_);
}

TextEmbeddings TextSemantics::distill(const TextEmbeddings& t) const {
  if (t.matrix.dim(1) != d_t_)
    fail("text: embedding width " + std::to_string(t.matrix.dim(1)) + " does not match d_t " +
         std::to_string(d_t_));
  TextEmbeddings out;
  out.matrix = layer_norm(add(t.matrix, self_attention(t.matrix)), ln_gain_, ln_bias_);
  out.d_t = d_t_;
  out.distilled = true;
  return out;
}

}  // namespace dsmoe::text
