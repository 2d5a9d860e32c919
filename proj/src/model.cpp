#include "ket/model.hpp"

#include <stdexcept>

#include <json.hpp>

namespace ket {

namespace {
constexpr double kNewParamStd = 0.02;
}

// ---- parameters ------------------------------------------------------------

IntegrationParams IntegrationParams::init(const ModelConfig& cfg, Rng& rng, double stddev) {
  IntegrationParams p;
  p.attn = AttentionParams::init(cfg.hidden, cfg.heads, rng, stddev);
  p.ln_gamma = Tensor::full({1, cfg.hidden}, 1.0, true);
  p.ln_beta = Tensor::zeros({1, cfg.hidden}, true);
  return p;
}

void IntegrationParams::collect(const std::string& prefix, NamedParams& out) {
  attn.collect(prefix + "attn.", out);
  out.emplace_back(prefix + "ln.gamma", &ln_gamma);
  out.emplace_back(prefix + "ln.beta", &ln_beta);
}

KnowledgeEncoder KnowledgeEncoder::random_init(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  KnowledgeEncoder m;
  m.cfg = cfg;
  m.text_side = EncoderParams::init(cfg, rng, kNewParamStd);
  m.desc_side = EncoderParams::init(cfg, rng, kNewParamStd);
  for (int64_t i = 0; i < cfg.layers; ++i) {
    m.integration.push_back(IntegrationParams::init(cfg, rng, kNewParamStd));
    m.null_desc_emb.push_back(Tensor::randn({1, cfg.hidden}, rng, 0.0, kNewParamStd, true));
  }
  m.k_token_emb = Tensor::randn({1, cfg.hidden}, rng, 0.0, kNewParamStd, true);
  return m;
}

KnowledgeEncoder KnowledgeEncoder::adapt_from_pretrained(const Checkpoint& pretrained,
                                                         uint64_t seed) {
  nlohmann::json j = nlohmann::json::parse(pretrained.config_json);
  const std::string cfg_json = j.contains("model") ? j["model"].dump() : pretrained.config_json;
  const ModelConfig cfg = ModelConfig::from_json(cfg_json);

  KnowledgeEncoder m;
  m.cfg = cfg;
  Rng rng(seed);
  // Both stacks are populated from the same pretrained weights but own
  // separate storage, so later updates to one never touch the other.
  m.text_side = EncoderParams::init(cfg, rng, kNewParamStd);
  m.desc_side = EncoderParams::init(cfg, rng, kNewParamStd);
  pretrained.load_into(m.text_side.named_parameters("enc."), /*allow_unused=*/true);
  pretrained.load_into(m.desc_side.named_parameters("enc."), /*allow_unused=*/true);

  Rng fresh(seed);
  for (int64_t i = 0; i < cfg.layers; ++i) {
    m.integration.push_back(IntegrationParams::init(cfg, fresh, kNewParamStd));
    m.null_desc_emb.push_back(Tensor::randn({1, cfg.hidden}, fresh, 0.0, kNewParamStd, true));
  }
  m.k_token_emb = Tensor::randn({1, cfg.hidden}, fresh, 0.0, kNewParamStd, true);
  return m;
}

KnowledgeLayerView KnowledgeEncoder::layer(int64_t i) {
  if (i < 0 || i >= cfg.layers) {
    throw std::out_of_range("knowledge encoder: layer " + std::to_string(i) + " outside [0, " +
                            std::to_string(cfg.layers) + ")");
  }
  const size_t idx = static_cast<size_t>(i);
  return KnowledgeLayerView{text_side.layers[idx], desc_side.layers[idx], integration[idx]};
}

NamedParams KnowledgeEncoder::named_parameters() {
  NamedParams out;
  text_side.collect("text.", out);
  desc_side.collect("desc.", out);
  for (size_t i = 0; i < integration.size(); ++i) {
    integration[i].collect("integ.layer" + std::to_string(i) + ".", out);
  }
  out.emplace_back("k_token.emb", &k_token_emb);
  for (size_t i = 0; i < null_desc_emb.size(); ++i) {
    out.emplace_back("null_desc.layer" + std::to_string(i), &null_desc_emb[i]);
  }
  return out;
}

// ---- outputs ---------------------------------------------------------------

Tensor KnowledgeOutput::cls() const { return slice_rows(h_final, 0, 1); }

Tensor KnowledgeOutput::token_state(int64_t full_pos) const {
  if (full_pos == 1) return k_final;
  const int64_t row = full_pos == 0 ? 0 : full_pos - 1;
  return slice_rows(h_final, row, 1);
}

// ---- forward ---------------------------------------------------------------

std::vector<Tensor> encode_descriptions(const CandidateSet& cs, const KnowledgeEncoder& m,
                                        const Vocabulary& vocab, const DropoutCtx* dp,
                                        DescMemo* memo) {
  cs.validate(m.cfg.n_max);
  const int64_t layers = m.cfg.layers;
  if (memo != nullptr && dp != nullptr && dp->rate > 0.0) {
    throw std::logic_error("encode_descriptions: memoization is invalid with live dropout");
  }
  std::vector<std::vector<Tensor>> per_layer_rows(static_cast<size_t>(layers));
  for (int64_t i = 0; i < layers; ++i) {
    per_layer_rows[static_cast<size_t>(i)].push_back(m.null_desc_emb[static_cast<size_t>(i)]);
  }
  for (int64_t j = 0; j < cs.real_count(); ++j) {
    const std::string& rendered = cs.real(j).rendered;
    const std::vector<Tensor>* cls_states = nullptr;
    std::vector<Tensor> fresh;
    if (memo != nullptr) {
      const auto it = memo->find(rendered);
      if (it != memo->end()) {
        // A cached state only carries gradient on the tape that produced
        // it; reuse under a different tape would silently detach it.
        const Tape* tp = Tape::active();
        if (tp != nullptr && !it->second.empty() &&
            it->second.front().produced_by_tape() != tp->id()) {
          throw std::logic_error("encode_descriptions: cache entry reused across tapes");
        }
        cls_states = &it->second;
      }
    }
    if (cls_states == nullptr) {
      const TokenSequence seq = tokenize(vocab, rendered, nullptr, m.cfg.max_len, false);
      const std::vector<Tensor> acts = encode(seq, m.desc_side, dp);
      for (int64_t i = 0; i < layers; ++i) {
        fresh.push_back(slice_rows(acts[static_cast<size_t>(i) + 1], 0, 1));
      }
      if (memo != nullptr) {
        cls_states = &memo->emplace(rendered, std::move(fresh)).first->second;
      } else {
        cls_states = &fresh;
      }
    }
    for (int64_t i = 0; i < layers; ++i) {
      per_layer_rows[static_cast<size_t>(i)].push_back((*cls_states)[static_cast<size_t>(i)]);
    }
  }
  std::vector<Tensor> emb_layers;
  emb_layers.reserve(static_cast<size_t>(layers));
  for (int64_t i = 0; i < layers; ++i) {
    emb_layers.push_back(concat_rows(per_layer_rows[static_cast<size_t>(i)]));
  }
  return emb_layers;
}

Tensor integrate(const Tensor& k_prev, const Tensor& emb, const IntegrationParams& p,
                 std::vector<std::vector<double>>* attn_record) {
  if (!k_prev.is_matrix() || k_prev.rows() != 1) {
    throw std::invalid_argument("integrate: knowledge state must be [1 x hidden], got " +
                                shape_str(k_prev.shape()));
  }
  if (!emb.is_matrix() || emb.rows() < 1 || emb.cols() != k_prev.cols()) {
    throw std::invalid_argument("integrate: description matrix " + shape_str(emb.shape()) +
                                " incompatible with state " + shape_str(k_prev.shape()));
  }
  const std::vector<int> mask(static_cast<size_t>(emb.rows()), 1);
  AttnRecord rec;
  const Tensor a = multi_head_attention(k_prev, emb, emb, mask, p.attn,
                                        attn_record ? &rec : nullptr);
  if (attn_record) {
    attn_record->clear();
    for (const auto& head : rec.weights) attn_record->push_back(head.front());
  }
  return layer_norm(add(k_prev, a), p.ln_gamma, p.ln_beta);
}

std::pair<Tensor, Tensor> knowledge_layer_forward(const Tensor& k_prev, const Tensor& h_prev,
                                                  const std::vector<int>& full_mask,
                                                  const Tensor& cs_emb,
                                                  const EncoderLayerParams& p,
                                                  const DropoutCtx* dp) {
  if (k_prev.rows() != 1 || k_prev.cols() != h_prev.cols()) {
    throw std::invalid_argument("knowledge layer: state shapes disagree: k " +
                                shape_str(k_prev.shape()) + ", h " + shape_str(h_prev.shape()));
  }
  if (cs_emb.shape() != k_prev.shape()) {
    throw std::invalid_argument("knowledge layer: cs_emb must match the knowledge state, got " +
                                shape_str(cs_emb.shape()));
  }
  const int64_t m = h_prev.rows();
  const Tensor s = concat_rows({k_prev, h_prev});
  Tensor a = multi_head_attention(s, s, s, full_mask, p.attn);
  a = maybe_dropout(a, dp);
  const Tensor s1 = layer_norm(add(s, a), p.ln1_gamma, p.ln1_beta);
  Tensor f = feed_forward(s1, p);
  f = maybe_dropout(f, dp);
  const Tensor base = add(s1, f);
  const Tensor k_base = slice_rows(base, 0, 1);
  const Tensor h_base = slice_rows(base, 1, m);
  // The commonsense summary enters only the knowledge token's residual.
  const Tensor k_next = layer_norm(add(k_base, cs_emb), p.ln2_gamma, p.ln2_beta);
  const Tensor h_next = layer_norm(h_base, p.ln2_gamma, p.ln2_beta);
  return {k_next, h_next};
}

KnowledgeOutput knowledge_encode_with_emb(const TokenSequence& seq,
                                          const std::vector<Tensor>& emb_layers,
                                          const KnowledgeEncoder& m,
                                          const KnowledgeForwardOptions& opts) {
  const int64_t n = seq.length();
  if (n < 3) throw std::invalid_argument("knowledge encode: sequence too short");
  if (n > m.cfg.max_len) {
    throw std::invalid_argument("knowledge encode: sequence length " + std::to_string(n) +
                                " exceeds max_len " + std::to_string(m.cfg.max_len));
  }
  if (seq.ids[0] != kClsId || seq.ids[1] != kKnowId) {
    throw std::invalid_argument("knowledge encode: sequence must begin [CLS], [k]");
  }
  if (static_cast<int64_t>(emb_layers.size()) != m.cfg.layers) {
    throw std::invalid_argument("knowledge encode: " + std::to_string(emb_layers.size()) +
                                " description matrices for " + std::to_string(m.cfg.layers) +
                                " layers");
  }

  // Token order is [CLS], [k], w1, ...; the knowledge state is carried
  // separately, so H holds the remaining tokens in input order and the
  // joint attention sequence is [k; H].
  std::vector<int64_t> ids_h, pos_h, seg_h;
  std::vector<int> mask_full;
  mask_full.push_back(1);  // the knowledge token is always attendable
  for (int64_t i = 0; i < n; ++i) {
    if (i == 1) continue;
    ids_h.push_back(seq.ids[static_cast<size_t>(i)]);
    pos_h.push_back(i);
    seg_h.push_back(seq.segment_ids[static_cast<size_t>(i)]);
    mask_full.push_back(seq.attention_mask[static_cast<size_t>(i)]);
  }

  const EncoderParams& tp = m.text_side;
  Tensor h = add(add(embedding_lookup(tp.tok_emb, ids_h), embedding_lookup(tp.pos_emb, pos_h)),
                 embedding_lookup(tp.seg_emb, seg_h));
  Tensor k = add(add(m.k_token_emb, embedding_lookup(tp.pos_emb, {1})),
                 embedding_lookup(tp.seg_emb, {0}));
  h = maybe_dropout(h, opts.dropout);
  k = maybe_dropout(k, opts.dropout);

  KnowledgeOutput out;
  const Tensor zero_cs = Tensor::zeros({1, m.cfg.hidden});
  for (int64_t i = 0; i < m.cfg.layers; ++i) {
    Tensor cs_emb;
    if (opts.force_zero_cs_emb) {
      cs_emb = zero_cs;
      if (opts.record_attention) out.integ_attn.emplace_back();
    } else {
      std::vector<std::vector<double>> rec;
      cs_emb = integrate(k, emb_layers[static_cast<size_t>(i)],
                         m.integration[static_cast<size_t>(i)],
                         opts.record_attention ? &rec : nullptr);
      if (opts.record_attention) out.integ_attn.push_back(std::move(rec));
    }
    std::tie(k, h) = knowledge_layer_forward(k, h, mask_full, cs_emb,
                                             tp.layers[static_cast<size_t>(i)], opts.dropout);
    out.k_layers.push_back(k);
    out.h_layers.push_back(h);
  }
  out.k_final = k;
  out.h_final = h;
  return out;
}

KnowledgeOutput knowledge_encode(const TokenSequence& seq, const CandidateSet& cs,
                                 const KnowledgeEncoder& m, const Vocabulary& vocab,
                                 const KnowledgeForwardOptions& opts, DescMemo* memo) {
  const std::vector<Tensor> emb_layers =
      encode_descriptions(cs, m, vocab, opts.dropout, memo);
  return knowledge_encode_with_emb(seq, emb_layers, m, opts);
}

}  // namespace ket
