#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "ket/encoder.hpp"
#include "ket/rng.hpp"
#include "ket/tensor.hpp"
#include "ket/vocab.hpp"

using namespace ket;

namespace {

std::vector<double> manual_layer_norm(const std::vector<double>& row,
                                      const std::vector<double>& gamma,
                                      const std::vector<double>& beta, double eps = 1e-12) {
  const size_t d = row.size();
  double mean = 0.0;
  for (double v : row) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : row) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  std::vector<double> out(d);
  for (size_t j = 0; j < d; ++j) {
    out[j] = (row[j] - mean) / std::sqrt(var + eps) * gamma[j] + beta[j];
  }
  return out;
}

double manual_gelu(double v) {
  const double c = std::sqrt(2.0 / M_PI);
  return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
}

// Straight-line per-row reference for one post-norm encoder layer.
std::vector<std::vector<double>> reference_layer(const Tensor& h, const std::vector<int>& mask,
                                                 const EncoderLayerParams& p) {
  const int64_t n = h.rows(), d = h.cols();
  const int64_t nh = static_cast<int64_t>(p.attn.heads.size());
  const int64_t dh = d / nh;

  std::vector<std::vector<double>> attn_out(static_cast<size_t>(n),
                                            std::vector<double>(static_cast<size_t>(d), 0.0));
  for (int64_t hi = 0; hi < nh; ++hi) {
    const AttentionParams::Head& head = p.attn.heads[static_cast<size_t>(hi)];
    auto project = [&](const Tensor& w, const Tensor& b) {
      std::vector<std::vector<double>> out(static_cast<size_t>(n),
                                           std::vector<double>(static_cast<size_t>(dh), 0.0));
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < dh; ++j) {
          double s = b.at(0, j);
          for (int64_t k = 0; k < d; ++k) s += h.at(i, k) * w.at(k, j);
          out[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
        }
      }
      return out;
    };
    const auto q = project(head.wq, head.bq);
    const auto k = project(head.wk, head.bk);
    const auto v = project(head.wv, head.bv);
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> scores(static_cast<size_t>(n));
      double mx = -1e300;
      for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t c = 0; c < dh; ++c) {
          s += q[static_cast<size_t>(i)][static_cast<size_t>(c)] *
               k[static_cast<size_t>(j)][static_cast<size_t>(c)];
        }
        s /= std::sqrt(static_cast<double>(dh));
        if (!mask[static_cast<size_t>(j)]) s = -1e30;
        scores[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (int64_t j = 0; j < n; ++j) {
        scores[static_cast<size_t>(j)] = mask[static_cast<size_t>(j)] ? scores[static_cast<size_t>(j)] / z : 0.0;
      }
      std::vector<double> ctx(static_cast<size_t>(dh), 0.0);
      for (int64_t j = 0; j < n; ++j) {
        for (int64_t c = 0; c < dh; ++c) {
          ctx[static_cast<size_t>(c)] +=
              scores[static_cast<size_t>(j)] * v[static_cast<size_t>(j)][static_cast<size_t>(c)];
        }
      }
      for (int64_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (int64_t j = 0; j < dh; ++j) s += ctx[static_cast<size_t>(j)] * head.wo.at(j, c);
        attn_out[static_cast<size_t>(i)][static_cast<size_t>(c)] += s;
      }
    }
  }

  std::vector<std::vector<double>> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> resid(static_cast<size_t>(d));
    for (int64_t c = 0; c < d; ++c) {
      resid[static_cast<size_t>(c)] =
          h.at(i, c) + attn_out[static_cast<size_t>(i)][static_cast<size_t>(c)] + p.attn.bo.at(0, c);
    }
    const std::vector<double> x1 =
        manual_layer_norm(resid, p.ln1_gamma.data(), p.ln1_beta.data());

    const int64_t f = p.w_in.cols();
    std::vector<double> mid(static_cast<size_t>(f));
    for (int64_t j = 0; j < f; ++j) {
      double s = p.b_in.at(0, j);
      for (int64_t c = 0; c < d; ++c) s += x1[static_cast<size_t>(c)] * p.w_in.at(c, j);
      mid[static_cast<size_t>(j)] = manual_gelu(s);
    }
    std::vector<double> resid2(static_cast<size_t>(d));
    for (int64_t c = 0; c < d; ++c) {
      double s = p.b_out.at(0, c);
      for (int64_t j = 0; j < f; ++j) s += mid[static_cast<size_t>(j)] * p.w_out.at(j, c);
      resid2[static_cast<size_t>(c)] = x1[static_cast<size_t>(c)] + s;
    }
    out[static_cast<size_t>(i)] = manual_layer_norm(resid2, p.ln2_gamma.data(), p.ln2_beta.data());
  }
  return out;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.max_len = 16;
  cfg.vocab_size = kReservedCount + 10;
  return cfg;
}

AttentionParams identity_attention(int64_t d) {
  Rng rng(0);
  AttentionParams p = AttentionParams::init(d, 1, rng, 0.0);
  for (int64_t i = 0; i < d; ++i) {
    p.heads[0].wq.data()[static_cast<size_t>(i * d + i)] = 1.0;
    p.heads[0].wk.data()[static_cast<size_t>(i * d + i)] = 1.0;
    p.heads[0].wv.data()[static_cast<size_t>(i * d + i)] = 1.0;
    p.heads[0].wo.data()[static_cast<size_t>(i * d + i)] = 1.0;
  }
  return p;
}

}  // namespace

TEST_CASE("config validation and json round trip") {
  ModelConfig cfg = small_config();
  cfg.validate();
  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.layers == cfg.layers);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.heads == cfg.heads);
  CHECK(back.ffn == cfg.ffn);
  CHECK(back.vocab_size == cfg.vocab_size);
  CHECK(back.max_len == cfg.max_len);
  CHECK(back.n_max == cfg.n_max);
  CHECK(back.seed == cfg.seed);

  ModelConfig bad = cfg;
  bad.layers = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.hidden = 6;
  bad.heads = 4;  // 6 is not divisible by 4
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.max_len = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.vocab_size = kReservedCount - 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.n_max = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  ModelConfig zero = cfg;
  zero.layers = 0;  // a pure embedding stack is allowed
  zero.validate();
}

TEST_CASE("attention with identity projections reproduces a hand softmax") {
  AttentionParams p = identity_attention(2);
  Tensor q({1, 2}, {1.0, 0.0});
  Tensor kv({2, 2}, {1.0, 0.0, 0.0, 1.0});
  AttnRecord rec;
  Tensor out = multi_head_attention(q, kv, kv, {1, 1}, p, &rec);

  const double s0 = 1.0 / std::sqrt(2.0), s1 = 0.0;
  const double e0 = std::exp(s0 - s0), e1 = std::exp(s1 - s0);
  const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
  CHECK(out.at(0, 0) == doctest::Approx(w0).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(w1).epsilon(1e-12));
  REQUIRE(rec.weights.size() == 1);
  REQUIRE(rec.weights[0].size() == 1);
  CHECK(rec.weights[0][0][0] == doctest::Approx(w0).epsilon(1e-12));
  CHECK(rec.weights[0][0][1] == doctest::Approx(w1).epsilon(1e-12));
}

TEST_CASE("masked keys carry exactly zero weight") {
  Rng rng(4);
  AttentionParams p = AttentionParams::init(4, 2, rng, 0.2);
  Tensor q = Tensor::randn({2, 4}, rng, 0.0, 1.0);
  Tensor kv = Tensor::randn({3, 4}, rng, 0.0, 1.0);
  AttnRecord rec;
  multi_head_attention(q, kv, kv, {1, 0, 1}, p, &rec);
  for (const auto& head : rec.weights) {
    for (const auto& row : head) {
      CHECK(row[1] == 0.0);
      CHECK(row[0] + row[2] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK_THROWS_WITH_AS(multi_head_attention(q, kv, kv, {0, 0, 0}, p, nullptr),
                       doctest::Contains("every key is masked"), std::invalid_argument);
  CHECK_THROWS_AS(multi_head_attention(q, kv, kv, {1, 1}, p, nullptr), std::invalid_argument);
}

TEST_CASE("identical value rows pass through identity projections") {
  AttentionParams p = identity_attention(3);
  Rng rng(9);
  Tensor q = Tensor::randn({2, 3}, rng, 0.0, 1.0);
  Tensor k = Tensor::randn({4, 3}, rng, 0.0, 1.0);
  Tensor v({4, 3}, {5, -2, 7, 5, -2, 7, 5, -2, 7, 5, -2, 7});
  Tensor out = multi_head_attention(q, k, v, {1, 1, 1, 1}, p);
  for (int64_t i = 0; i < 2; ++i) {
    CHECK(out.at(i, 0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(out.at(i, 1) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(out.at(i, 2) == doctest::Approx(7.0).epsilon(1e-12));
  }
}

TEST_CASE("attention output stays inside the convex hull of values") {
  AttentionParams p = identity_attention(3);
  Rng rng(12);
  Tensor q = Tensor::randn({3, 3}, rng, 0.0, 2.0);
  Tensor k = Tensor::randn({5, 3}, rng, 0.0, 2.0);
  Tensor v = Tensor::randn({5, 3}, rng, 0.0, 2.0);
  Tensor out = multi_head_attention(q, k, v, {1, 1, 1, 1, 1}, p);
  for (int64_t c = 0; c < 3; ++c) {
    double lo = v.at(0, c), hi = v.at(0, c);
    for (int64_t j = 1; j < 5; ++j) {
      lo = std::min(lo, v.at(j, c));
      hi = std::max(hi, v.at(j, c));
    }
    for (int64_t i = 0; i < 3; ++i) {
      CHECK(out.at(i, c) >= lo - 1e-12);
      CHECK(out.at(i, c) <= hi + 1e-12);
    }
  }
}

TEST_CASE("zeroed projections reduce the layer to stacked layer norms") {
  ModelConfig cfg = small_config();
  Rng rng(0);
  EncoderLayerParams p = EncoderLayerParams::init(cfg, rng, 0.0);  // stddev 0: all weights zero
  Tensor h = Tensor::randn({3, cfg.hidden}, rng, 0.0, 1.5);
  Tensor out = encoder_layer_forward(h, std::vector<int>(3, 1), p);
  for (int64_t i = 0; i < 3; ++i) {
    std::vector<double> row(static_cast<size_t>(cfg.hidden));
    for (int64_t c = 0; c < cfg.hidden; ++c) row[static_cast<size_t>(c)] = h.at(i, c);
    const std::vector<double> ones(static_cast<size_t>(cfg.hidden), 1.0);
    const std::vector<double> zeros(static_cast<size_t>(cfg.hidden), 0.0);
    const auto want = manual_layer_norm(manual_layer_norm(row, ones, zeros), ones, zeros);
    for (int64_t c = 0; c < cfg.hidden; ++c) {
      CHECK(out.at(i, c) == doctest::Approx(want[static_cast<size_t>(c)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("encoder layer matches the straight-line reference") {
  ModelConfig cfg = small_config();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    EncoderLayerParams p = EncoderLayerParams::init(cfg, rng, 0.3);
    // exercise nonzero biases and affine norms too
    for (Tensor* t : {&p.attn.bo, &p.b_in, &p.b_out, &p.ln1_beta, &p.ln2_beta}) {
      *t = Tensor::randn(t->shape(), rng, 0.0, 0.1, true);
    }
    Tensor h = Tensor::randn({4, cfg.hidden}, rng, 0.0, 1.0);
    const std::vector<int> mask{1, 1, 1, 0};
    Tensor out = encoder_layer_forward(h, mask, p);
    const auto want = reference_layer(h, mask, p);
    for (int64_t i = 0; i < 4; ++i) {
      for (int64_t c = 0; c < cfg.hidden; ++c) {
        CHECK(out.at(i, c) ==
              doctest::Approx(want[static_cast<size_t>(i)][static_cast<size_t>(c)]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("padding length does not change real token states") {
  ModelConfig cfg = small_config();
  Rng rng(21);
  EncoderParams p = EncoderParams::init(cfg, rng, 0.2);
  Vocabulary v = Vocabulary::build({"the cat sat"});
  TokenSequence short_seq = tokenize(v, "the cat sat", nullptr, 8, true);
  TokenSequence long_seq = tokenize(v, "the cat sat", nullptr, 16, true);
  const auto a = encode(short_seq, p);
  const auto b = encode(long_seq, p);
  REQUIRE(a.size() == b.size());
  const int64_t real = 6;  // [CLS] [k] the cat sat [SEP]
  for (size_t l = 0; l < a.size(); ++l) {
    for (int64_t i = 0; i < real; ++i) {
      for (int64_t c = 0; c < cfg.hidden; ++c) {
        CHECK(a[l].at(i, c) == doctest::Approx(b[l].at(i, c)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("a zero-layer encoder returns the summed embeddings") {
  ModelConfig cfg = small_config();
  cfg.layers = 0;
  Rng rng(2);
  EncoderParams p = EncoderParams::init(cfg, rng, 0.2);
  Vocabulary v = Vocabulary::build({"cat"});
  TokenSequence seq = tokenize(v, "cat", nullptr, 4, false);
  const auto acts = encode(seq, p);
  REQUIRE(acts.size() == 1);
  const int64_t cat = v.id("cat");
  for (int64_t c = 0; c < cfg.hidden; ++c) {
    const double want = p.tok_emb.at(cat, c) + p.pos_emb.at(1, c) + p.seg_emb.at(0, c);
    CHECK(acts[0].at(1, c) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("stacked layers compose the single-layer forward") {
  ModelConfig cfg = small_config();
  Rng rng(3);
  EncoderParams p = EncoderParams::init(cfg, rng, 0.2);
  Vocabulary v = Vocabulary::build({"one two three"});
  TokenSequence seq = tokenize(v, "one two three", nullptr, 8, false);
  const auto acts = encode(seq, p);
  REQUIRE(acts.size() == 3);
  Tensor l1 = encoder_layer_forward(acts[0], seq.attention_mask, p.layers[0]);
  Tensor l2 = encoder_layer_forward(l1, seq.attention_mask, p.layers[1]);
  CHECK(acts[1].data() == l1.data());
  CHECK(acts[2].data() == l2.data());
}

TEST_CASE("encode rejects malformed sequences") {
  ModelConfig cfg = small_config();
  Rng rng(1);
  EncoderParams p = EncoderParams::init(cfg, rng, 0.2);
  Vocabulary v;
  TokenSequence seq = tokenize(v, "a b", nullptr, cfg.max_len + 4, false);
  CHECK_THROWS_WITH_AS(encode(seq, p), doctest::Contains("exceeds max_len"),
                       std::invalid_argument);
  TokenSequence broken = tokenize(v, "a b", nullptr, 8, false);
  broken.attention_mask.pop_back();
  CHECK_THROWS_AS(encode(broken, p), std::invalid_argument);
  CHECK_THROWS_AS(encode(TokenSequence{}, p), std::invalid_argument);
}

TEST_CASE("encode is deterministic and safe to run concurrently") {
  ModelConfig cfg = small_config();
  Rng rng(17);
  EncoderParams p = EncoderParams::init(cfg, rng, 0.2);
  Vocabulary v = Vocabulary::build({"alpha beta gamma"});
  TokenSequence seq = tokenize(v, "alpha beta gamma", nullptr, 12, true);
  const auto base = encode(seq, p);

  const auto again = encode(seq, p);
  for (size_t l = 0; l < base.size(); ++l) CHECK(base[l].data() == again[l].data());

  std::vector<std::thread> workers;
  std::vector<int> ok(4, 0);
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([&, t]() {
      const auto acts = encode(seq, p);
      bool same = acts.size() == base.size();
      for (size_t l = 0; same && l < acts.size(); ++l) same = acts[l].data() == base[l].data();
      ok[static_cast<size_t>(t)] = same ? 1 : 0;
    });
  }
  for (auto& w : workers) w.join();
  for (int t = 0; t < 4; ++t) CHECK(ok[static_cast<size_t>(t)] == 1);
}

TEST_CASE("attention and a full layer pass a finite-difference check") {
  ModelConfig cfg = small_config();
  Rng rng(8);
  EncoderLayerParams p = EncoderLayerParams::init(cfg, rng, 0.3);
  Tensor h = Tensor::randn({3, cfg.hidden}, rng, 0.0, 1.0);
  Tensor w = Tensor::randn({3, cfg.hidden}, rng, 0.0, 1.0);
  const std::vector<int> mask{1, 1, 0};
  auto f = [&](const Tensor& t) {
    return sum(mul(encoder_layer_forward(t, mask, p), w));
  };
  CHECK(finite_diff_check(f, h) < 5e-6);

  // parameter-side gradient through the attention block
  Tensor wq0 = p.attn.heads[0].wq;
  auto g = [&](const Tensor& t) {
    AttentionParams q = p.attn;
    q.heads[0].wq = t;
    return sum(mul(multi_head_attention(h, h, h, mask, q), w));
  };
  CHECK(finite_diff_check(g, wq0) < 5e-6);
}
