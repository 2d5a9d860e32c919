#pragma once

#include <map>
#include <string>
#include <vector>

#include "ket/checkpoint.hpp"
#include "ket/encoder.hpp"
#include "ket/kb.hpp"
#include "ket/tensor.hpp"
#include "ket/vocab.hpp"

namespace ket {

// Attention from the knowledge state over description embeddings, followed
// by a residual LayerNorm. No FFN inside the integration block.
struct IntegrationParams {
  AttentionParams attn;
  Tensor ln_gamma, ln_beta;

  static IntegrationParams init(const ModelConfig& cfg, Rng& rng, double stddev);
  void collect(const std::string& prefix, NamedParams& out);
};

// The layer-i triple: the text-stack block, the description-stack block and
// the integration block that couples them.
struct KnowledgeLayerView {
  EncoderLayerParams& text;
  EncoderLayerParams& desc;
  IntegrationParams& integ;
};

// Two full encoder stacks plus per-layer integration. The text stack reads
// the [k]-bearing input; the description stack encodes each commonsense
// description; layer i of the description stack feeds only layer i of the
// text stack through integration block i.
struct KnowledgeEncoder {
  ModelConfig cfg;
  EncoderParams text_side;
  EncoderParams desc_side;
  std::vector<IntegrationParams> integration;
  Tensor k_token_emb;                // [1 x hidden], the [k] input state
  std::vector<Tensor> null_desc_emb;  // per layer [1 x hidden], row 0 of emb

  static KnowledgeEncoder random_init(const ModelConfig& cfg);

  // Both stacks start as value copies of the same pretrained vanilla
  // encoder (prefix "enc." in the checkpoint) and are independent
  // parameters afterwards. Integration blocks, the [k] embedding and the
  // null description embeddings are drawn fresh from `seed`.
  static KnowledgeEncoder adapt_from_pretrained(const Checkpoint& pretrained, uint64_t seed);

  KnowledgeLayerView layer(int64_t i);
  NamedParams named_parameters();
};

struct KnowledgeForwardOptions {
  bool force_zero_cs_emb = false;  // replaces every cs_emb with the zero vector
  bool record_attention = true;
  const DropoutCtx* dropout = nullptr;
};

struct KnowledgeOutput {
  Tensor k_final;  // [1 x hidden]
  Tensor h_final;  // remaining tokens in input order ([CLS] first)
  std::vector<Tensor> k_layers;  // per layer
  std::vector<Tensor> h_layers;
  // integration weights: [layer][head][candidate row], queried from k
  std::vector<std::vector<std::vector<double>>> integ_attn;

  Tensor cls() const;
  // State of the token at `full_pos` in the [CLS], [k], w1, ... layout.
  Tensor token_state(int64_t full_pos) const;
};

// Description-stack encodings reused across examples within one tape scope.
// Only valid while dropout is off: identical strings encode identically.
using DescMemo = std::map<std::string, std::vector<Tensor>>;

// Per-layer description matrices, each (real_count + 1) x hidden: row 0 is
// the layer's learned null embedding, row j is the [CLS] state of
// description j after description-stack layer i+1.
std::vector<Tensor> encode_descriptions(const CandidateSet& cs, const KnowledgeEncoder& m,
                                        const Vocabulary& vocab,
                                        const DropoutCtx* dp = nullptr,
                                        DescMemo* memo = nullptr);

// cs_emb = LayerNorm(k_prev + MultiHeadAttn(k_prev, emb, emb)).
Tensor integrate(const Tensor& k_prev, const Tensor& emb, const IntegrationParams& p,
                 std::vector<std::vector<double>>* attn_record = nullptr);

// One coupled layer over the joint sequence [k; H]:
//   S' = LayerNorm(S + Attn(S));  M = FFN(S')
//   k_i = LayerNorm(S'_k + M_k + cs_emb);  H_i = LayerNorm(S'_H + M_H)
// full_mask covers the joint sequence, k first.
std::pair<Tensor, Tensor> knowledge_layer_forward(const Tensor& k_prev, const Tensor& h_prev,
                                                  const std::vector<int>& full_mask,
                                                  const Tensor& cs_emb,
                                                  const EncoderLayerParams& p,
                                                  const DropoutCtx* dp = nullptr);

// Full forward over a [CLS],[k],... sequence with retrieved candidates.
KnowledgeOutput knowledge_encode(const TokenSequence& seq, const CandidateSet& cs,
                                 const KnowledgeEncoder& m, const Vocabulary& vocab,
                                 const KnowledgeForwardOptions& opts = {},
                                 DescMemo* memo = nullptr);

// Same text-side pass over caller-supplied description matrices (one per
// layer). Lets analyses drop rows without re-encoding descriptions.
KnowledgeOutput knowledge_encode_with_emb(const TokenSequence& seq,
                                          const std::vector<Tensor>& emb_layers,
                                          const KnowledgeEncoder& m,
                                          const KnowledgeForwardOptions& opts = {});

}  // namespace ket
