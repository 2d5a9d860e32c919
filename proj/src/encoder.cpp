#include "ket/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace ket {

void ModelConfig::validate() const {
  if (layers < 0) throw std::invalid_argument("config: layers must be non-negative");
  if (hidden <= 0 || heads <= 0 || ffn <= 0) {
    throw std::invalid_argument("config: hidden, heads and ffn must be positive");
  }
  if (hidden % heads != 0) {
    throw std::invalid_argument("config: hidden " + std::to_string(hidden) +
                                " not divisible by heads " + std::to_string(heads));
  }
  if (vocab_size < kReservedCount) {
    throw std::invalid_argument("config: vocab_size must cover the reserved tokens");
  }
  if (max_len < 4) throw std::invalid_argument("config: max_len must be at least 4");
  if (n_max < 1) throw std::invalid_argument("config: n_max must be at least 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("config: dropout must be in [0, 1)");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["layers"] = layers;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["ffn"] = ffn;
  j["vocab_size"] = vocab_size;
  j["max_len"] = max_len;
  j["n_max"] = n_max;
  j["dropout"] = dropout;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.layers = j.value("layers", c.layers);
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.n_max = j.value("n_max", c.n_max);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---- parameter structs -----------------------------------------------------

AttentionParams AttentionParams::init(int64_t hidden, int64_t n_heads, Rng& rng, double stddev) {
  const int64_t dh = hidden / n_heads;
  AttentionParams p;
  p.heads.resize(static_cast<size_t>(n_heads));
  for (Head& h : p.heads) {
    h.wq = Tensor::randn({hidden, dh}, rng, 0.0, stddev, true);
    h.bq = Tensor::zeros({1, dh}, true);
    h.wk = Tensor::randn({hidden, dh}, rng, 0.0, stddev, true);
    h.bk = Tensor::zeros({1, dh}, true);
    h.wv = Tensor::randn({hidden, dh}, rng, 0.0, stddev, true);
    h.bv = Tensor::zeros({1, dh}, true);
    h.wo = Tensor::randn({dh, hidden}, rng, 0.0, stddev, true);
  }
  p.bo = Tensor::zeros({1, hidden}, true);
  return p;
}

void AttentionParams::collect(const std::string& prefix, NamedParams& out) {
  for (size_t i = 0; i < heads.size(); ++i) {
    const std::string hp = prefix + "h" + std::to_string(i) + ".";
    out.emplace_back(hp + "wq", &heads[i].wq);
    out.emplace_back(hp + "bq", &heads[i].bq);
    out.emplace_back(hp + "wk", &heads[i].wk);
    out.emplace_back(hp + "bk", &heads[i].bk);
    out.emplace_back(hp + "wv", &heads[i].wv);
    out.emplace_back(hp + "bv", &heads[i].bv);
    out.emplace_back(hp + "wo", &heads[i].wo);
  }
  out.emplace_back(prefix + "bo", &bo);
}

EncoderLayerParams EncoderLayerParams::init(const ModelConfig& cfg, Rng& rng, double stddev) {
  EncoderLayerParams p;
  p.attn = AttentionParams::init(cfg.hidden, cfg.heads, rng, stddev);
  p.w_in = Tensor::randn({cfg.hidden, cfg.ffn}, rng, 0.0, stddev, true);
  p.b_in = Tensor::zeros({1, cfg.ffn}, true);
  p.w_out = Tensor::randn({cfg.ffn, cfg.hidden}, rng, 0.0, stddev, true);
  p.b_out = Tensor::zeros({1, cfg.hidden}, true);
  p.ln1_gamma = Tensor::full({1, cfg.hidden}, 1.0, true);
  p.ln1_beta = Tensor::zeros({1, cfg.hidden}, true);
  p.ln2_gamma = Tensor::full({1, cfg.hidden}, 1.0, true);
  p.ln2_beta = Tensor::zeros({1, cfg.hidden}, true);
  return p;
}

void EncoderLayerParams::collect(const std::string& prefix, NamedParams& out) {
  attn.collect(prefix + "attn.", out);
  out.emplace_back(prefix + "ffn.w_in", &w_in);
  out.emplace_back(prefix + "ffn.b_in", &b_in);
  out.emplace_back(prefix + "ffn.w_out", &w_out);
  out.emplace_back(prefix + "ffn.b_out", &b_out);
  out.emplace_back(prefix + "ln1.gamma", &ln1_gamma);
  out.emplace_back(prefix + "ln1.beta", &ln1_beta);
  out.emplace_back(prefix + "ln2.gamma", &ln2_gamma);
  out.emplace_back(prefix + "ln2.beta", &ln2_beta);
}

void EncoderLayerParams::copy_values_from(const EncoderLayerParams& src) {
  NamedParams mine, theirs;
  collect("", mine);
  const_cast<EncoderLayerParams&>(src).collect("", theirs);
  for (size_t i = 0; i < mine.size(); ++i) mine[i].second->data() = theirs[i].second->data();
}

EncoderParams EncoderParams::init(const ModelConfig& cfg, Rng& rng, double stddev) {
  cfg.validate();
  EncoderParams p;
  p.cfg = cfg;
  p.tok_emb = Tensor::randn({cfg.vocab_size, cfg.hidden}, rng, 0.0, stddev, true);
  p.pos_emb = Tensor::randn({cfg.max_len, cfg.hidden}, rng, 0.0, stddev, true);
  p.seg_emb = Tensor::randn({2, cfg.hidden}, rng, 0.0, stddev, true);
  p.layers.reserve(static_cast<size_t>(cfg.layers));
  for (int64_t i = 0; i < cfg.layers; ++i) {
    p.layers.push_back(EncoderLayerParams::init(cfg, rng, stddev));
  }
  return p;
}

void EncoderParams::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + "emb.tok", &tok_emb);
  out.emplace_back(prefix + "emb.pos", &pos_emb);
  out.emplace_back(prefix + "emb.seg", &seg_emb);
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(prefix + "layer" + std::to_string(i) + ".", out);
  }
}

NamedParams EncoderParams::named_parameters(const std::string& prefix) {
  NamedParams out;
  collect(prefix, out);
  return out;
}

void EncoderParams::copy_values_from(const EncoderParams& src) {
  if (layers.size() != src.layers.size()) {
    throw std::invalid_argument("encoder: layer count mismatch when copying parameters");
  }
  NamedParams mine, theirs;
  collect("", mine);
  const_cast<EncoderParams&>(src).collect("", theirs);
  for (size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].second->shape() != theirs[i].second->shape()) {
      throw std::invalid_argument("encoder: shape mismatch for " + mine[i].first + ": " +
                                  shape_str(mine[i].second->shape()) + " vs " +
                                  shape_str(theirs[i].second->shape()));
    }
    mine[i].second->data() = theirs[i].second->data();
  }
}

// ---- forward ---------------------------------------------------------------

Tensor maybe_dropout(const Tensor& x, const DropoutCtx* dp) {
  if (dp == nullptr || dp->rate == 0.0) return x;
  if (dp->rng == nullptr) throw std::logic_error("dropout: enabled without an rng");
  return dropout(x, dp->rate, *dp->rng);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const std::vector<int>& key_mask, const AttentionParams& p,
                            AttnRecord* record) {
  if (q.cols() != k.cols() || k.shape() != v.shape()) {
    throw std::invalid_argument("attention: incompatible shapes q " + shape_str(q.shape()) +
                                ", k " + shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const int64_t nk = k.rows();
  if (static_cast<int64_t>(key_mask.size()) != nk) {
    throw std::invalid_argument("attention: mask covers " + std::to_string(key_mask.size()) +
                                " keys for " + std::to_string(nk) + " rows");
  }
  bool any_alive = false;
  for (const int m : key_mask) any_alive = any_alive || m != 0;
  if (!any_alive) {
    throw std::invalid_argument("attention: every key is masked; weights cannot normalize");
  }
  const int64_t dh = p.heads.empty() ? 0 : p.heads.front().wq.cols();
  if (dh == 0) throw std::invalid_argument("attention: no heads");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Additive bias pushes masked scores to -1e30; the elementwise multiply
  // afterwards pins their weights to exactly zero.
  std::vector<double> bias_row(static_cast<size_t>(nk));
  for (int64_t j = 0; j < nk; ++j) {
    bias_row[static_cast<size_t>(j)] = key_mask[static_cast<size_t>(j)] ? 0.0 : -1e30;
  }
  const Tensor bias = Tensor::row(bias_row);
  Tensor hard;
  {
    std::vector<double> hard_data(static_cast<size_t>(q.rows() * nk));
    for (int64_t i = 0; i < q.rows(); ++i) {
      for (int64_t j = 0; j < nk; ++j) {
        hard_data[static_cast<size_t>(i * nk + j)] = key_mask[static_cast<size_t>(j)] ? 1.0 : 0.0;
      }
    }
    hard = Tensor(Shape{q.rows(), nk}, std::move(hard_data));
  }

  if (record) record->weights.clear();
  Tensor out;
  for (const AttentionParams::Head& head : p.heads) {
    const Tensor qh = add(matmul(q, head.wq), head.bq);
    const Tensor kh = add(matmul(k, head.wk), head.bk);
    const Tensor vh = add(matmul(v, head.wv), head.bv);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    scores = add(scores, bias);
    Tensor w = softmax(scores, 1);
    w = mul(w, hard);
    if (record) {
      std::vector<std::vector<double>> rows;
      for (int64_t i = 0; i < w.rows(); ++i) {
        rows.emplace_back(w.data().begin() + i * nk, w.data().begin() + (i + 1) * nk);
      }
      record->weights.push_back(std::move(rows));
    }
    const Tensor ctx = matmul(w, vh);
    const Tensor head_out = matmul(ctx, head.wo);
    out = out.defined() ? add(out, head_out) : head_out;
  }
  return add(out, p.bo);
}

Tensor feed_forward(const Tensor& x, const EncoderLayerParams& p) {
  const Tensor hidden = gelu(add(matmul(x, p.w_in), p.b_in));
  return add(matmul(hidden, p.w_out), p.b_out);
}

Tensor encoder_layer_forward(const Tensor& h, const std::vector<int>& mask,
                             const EncoderLayerParams& p, const DropoutCtx* dp) {
  Tensor a = multi_head_attention(h, h, h, mask, p.attn);
  a = maybe_dropout(a, dp);
  const Tensor x1 = layer_norm(add(h, a), p.ln1_gamma, p.ln1_beta);
  Tensor f = feed_forward(x1, p);
  f = maybe_dropout(f, dp);
  return layer_norm(add(x1, f), p.ln2_gamma, p.ln2_beta);
}

std::vector<Tensor> encode(const TokenSequence& seq, const EncoderParams& p,
                           const DropoutCtx* dp) {
  const int64_t n = seq.length();
  if (n == 0) throw std::invalid_argument("encode: empty sequence");
  if (n > p.cfg.max_len) {
    throw std::invalid_argument("encode: sequence length " + std::to_string(n) +
                                " exceeds max_len " + std::to_string(p.cfg.max_len));
  }
  if (seq.attention_mask.size() != seq.ids.size() || seq.segment_ids.size() != seq.ids.size()) {
    throw std::invalid_argument("encode: ids, mask and segments must have equal length");
  }
  std::vector<int64_t> positions(static_cast<size_t>(n));
  std::vector<int64_t> segments(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    positions[static_cast<size_t>(i)] = i;
    segments[static_cast<size_t>(i)] = seq.segment_ids[static_cast<size_t>(i)];
  }
  Tensor e = add(add(embedding_lookup(p.tok_emb, seq.ids),
                     embedding_lookup(p.pos_emb, positions)),
                 embedding_lookup(p.seg_emb, segments));
  e = maybe_dropout(e, dp);
  std::vector<Tensor> acts;
  acts.reserve(p.layers.size() + 1);
  acts.push_back(e);
  for (const EncoderLayerParams& layer : p.layers) {
    acts.push_back(encoder_layer_forward(acts.back(), seq.attention_mask, layer, dp));
  }
  return acts;
}

}  // namespace ket
