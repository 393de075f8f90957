// SPDX-License-Identifier: Apache-2.0
//
// Class-prompt embeddings. The frozen LLM encoder is replaced by a
// hash-seeded deterministic stub: distinct prompts map to distinct, stable
// unit-norm vectors, which is all the downstream routing needs.
#ifndef DSMOE_TEXT_HPP
#define DSMOE_TEXT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dsmoe/params.hpp"
#include "dsmoe/tensor.hpp"

namespace dsmoe::text {

struct PromptSet {
  std::vector<std::string> prompts;
  std::vector<std::string> class_names;

  int size() const { return static_cast<int>(prompts.size()); }
  void validate() const;  // C >= 1, names unique and aligned with prompts

  // prompts: one per line. manifest: "<index> <name>" per line.
  static PromptSet load(const std::string& prompts_path, const std::string& manifest_path);
  void save(const std::string& prompts_path, const std::string& manifest_path) const;
};

struct TextEmbeddings {
  Tensor matrix;  // C x d_t
  int d_t = 0;
  bool distilled = false;
};

// deterministic unit-norm stub vector for one prompt
std::vector<double> stub_embed(const std::string& prompt, int d_t, std::uint64_t seed);

// sinusoidal base pattern, no learnable scale applied
std::vector<double> positional_encoding_base(int C, int d_t);

class TextSemantics {
 public:
  TextSemantics(Graph& g, ParamRegistry& reg, int d_t, int heads, Rng& init_rng);

  int d_t() const { return d_t_; }
  int heads() const { return heads_; }

  // base sinusoid wrapped by the learnable per-dimension scale
  Tensor positional_encoding(int C) const;

  // Stage 1: stub embeddings + positional encoding; rejects odd d_t
  TextEmbeddings embed(const PromptSet& ps, std::uint64_t seed) const;

  // multi-head self-attention block used by distill; exposed for the
  // permutation-equivariance property
  Tensor self_attention(const Tensor& t) const;

  // Stage 2: LayerNorm(T + MHA(T))
  TextEmbeddings distill(const TextEmbeddings& t) const;

 private:
  Graph* g_;
  int d_t_, heads_;
  Tensor wq_, wk_, wv_, wo_;
  Tensor pe_scale_;
  Tensor ln_gain_, ln_bias_;
};

}  // namespace dsmoe::text

#endif
