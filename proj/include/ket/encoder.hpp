#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ket/tensor.hpp"
#include "ket/vocab.hpp"

namespace ket {

struct ModelConfig {
  int64_t layers = 2;
  int64_t hidden = 32;
  int64_t heads = 2;
  int64_t ffn = 64;
  int64_t vocab_size = kReservedCount;
  int64_t max_len = 32;
  int64_t n_max = 64;  // retrieved commonsense cap, excluding the null entry
  double dropout = 0.0;
  uint64_t seed = 0;

  int64_t head_dim() const { return hidden / heads; }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Per-head projections; the output projection is stored per head as a
// [head_dim x hidden] block so head contexts are summed, which is the same
// arithmetic as concatenating heads and applying one [hidden x hidden] map.
struct AttentionParams {
  struct Head {
    Tensor wq, bq, wk, bk, wv, bv, wo;
  };
  std::vector<Head> heads;
  Tensor bo;

  static AttentionParams init(int64_t hidden, int64_t n_heads, Rng& rng, double stddev);
  void collect(const std::string& prefix, NamedParams& out);
};

struct EncoderLayerParams {
  AttentionParams attn;
  Tensor w_in, b_in, w_out, b_out;  // position-wise FFN around a GELU
  Tensor ln1_gamma, ln1_beta;       // after attention
  Tensor ln2_gamma, ln2_beta;       // after FFN

  static EncoderLayerParams init(const ModelConfig& cfg, Rng& rng, double stddev);
  void collect(const std::string& prefix, NamedParams& out);
  void copy_values_from(const EncoderLayerParams& src);
};

// One vanilla stack: token/position/segment embeddings plus `layers` blocks.
struct EncoderParams {
  ModelConfig cfg;
  Tensor tok_emb, pos_emb, seg_emb;
  std::vector<EncoderLayerParams> layers;

  static EncoderParams init(const ModelConfig& cfg, Rng& rng, double stddev = 0.02);
  void collect(const std::string& prefix, NamedParams& out);
  NamedParams named_parameters(const std::string& prefix);
  void copy_values_from(const EncoderParams& src);
};

// Per-head attention weights captured during a forward pass
// (head -> query row -> key row).
struct AttnRecord {
  std::vector<std::vector<std::vector<double>>> weights;
};

struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;
};

// key_mask has one entry per key row; masked keys get an additive -1e30
// before the softmax and their weights are hard-zeroed after it, so
// masking is exact. Throws if every key is masked.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const std::vector<int>& key_mask, const AttentionParams& p,
                            AttnRecord* record = nullptr);

// Post-norm block: LayerNorm(h + attention), then LayerNorm(x + FFN(x)).
Tensor encoder_layer_forward(const Tensor& h, const std::vector<int>& mask,
                             const EncoderLayerParams& p, const DropoutCtx* dp = nullptr);

// Returns layers+1 activation matrices; index 0 is the summed embeddings.
std::vector<Tensor> encode(const TokenSequence& seq, const EncoderParams& p,
                           const DropoutCtx* dp = nullptr);

// Shared FFN sublayer (exposed for the knowledge-layer variant).
Tensor feed_forward(const Tensor& x, const EncoderLayerParams& p);

Tensor maybe_dropout(const Tensor& x, const DropoutCtx* dp);

}  // namespace ket
