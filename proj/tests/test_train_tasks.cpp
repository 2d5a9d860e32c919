#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ket/dataset.hpp"
#include "ket/kb.hpp"
#include "ket/optim.hpp"
#include "ket/tasks.hpp"
#include "ket/tensor.hpp"
#include "ket/train.hpp"
#include "ket/vocab.hpp"

using namespace ket;

namespace {

ModelConfig tiny_config(const Vocabulary& v) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.max_len = 12;
  cfg.n_max = 4;
  cfg.vocab_size = v.size();
  cfg.seed = 3;
  return cfg;
}

struct VanillaFixture {
  Vocabulary vocab;
  EncoderParams enc;
  TaskHead head;
  TaskModel model;

  VanillaFixture(const std::vector<std::string>& texts, TaskKind kind, int64_t classes = 2)
      : vocab(Vocabulary::build(texts)) {
    ModelConfig cfg = tiny_config(vocab);
    Rng rng(cfg.seed);
    enc = EncoderParams::init(cfg, rng, 0.2);
    head = TaskHead::init(kind, cfg, classes);
    model.vanilla = &enc;
    model.vocab = &vocab;
    model.head = &head;
  }
};

CommonsenseKB task_kb() {
  TemplateTable t = TemplateTable::parse("xReact\tAs a result, PersonX feels {tail}.\n");
  return CommonsenseKB::ingest_text(
      "alpha stone\txReact\tcalm\n"
      "beta stone\txReact\tupset\n"
      "old bridge\txReact\ttired\n",
      t);
}

struct KnowledgeFixture {
  CommonsenseKB kb;
  Vocabulary vocab;
  KnowledgeEncoder enc;
  TaskHead head;
  TaskModel model;

  explicit KnowledgeFixture(TaskKind kind = TaskKind::classification, int64_t classes = 2)
      : kb(task_kb()) {
    std::vector<std::string> texts{"they crossed the old bridge", "he found the alpha stone",
                                   "she kept the beta stone"};
    for (const CommonsenseEntry& e : kb.entries()) texts.push_back(e.rendered);
    vocab = Vocabulary::build(texts);
    ModelConfig cfg = tiny_config(vocab);
    // with a single layer the summary stops at [k]; two let it reach [CLS]
    cfg.layers = 2;
    enc = KnowledgeEncoder::random_init(cfg);
    head = TaskHead::init(kind, cfg, classes);
    model.knowledge = &enc;
    model.vocab = &vocab;
    model.kb = &kb;
    model.head = &head;
  }
};

double logsumexp(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double z = 0.0;
  for (double x : v) z += std::exp(x - mx);
  return mx + std::log(z);
}

}  // namespace

// ---- optimizer -------------------------------------------------------------

TEST_CASE("adamw first step follows the closed form") {
  Tensor x({1, 3}, {1.0, -2.0, 0.5}, true);
  AdamWOptions opts;
  opts.lr = 0.1;
  opts.weight_decay = 0.0;
  opts.max_grad_norm = 0.0;  // disabled
  AdamW opt({{"x", &x}}, opts);

  const std::vector<double> g{0.3, -0.7, 0.0};
  x.grad_acc() = g;
  const double norm = opt.step();
  CHECK(norm == doctest::Approx(std::sqrt(0.3 * 0.3 + 0.7 * 0.7)).epsilon(1e-15));
  CHECK(opt.step_count() == 1);
  // bias correction cancels on the first step: dx = -lr * g / (|g| + eps)
  const std::vector<double> want{1.0 - 0.1 * 0.3 / (0.3 + 1e-8),
                                 -2.0 - 0.1 * -0.7 / (0.7 + 1e-8), 0.5};
  for (size_t i = 0; i < 3; ++i) CHECK(x.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("adamw decouples weight decay from the gradient") {
  Tensor x({1, 2}, {4.0, -8.0}, true);
  AdamWOptions opts;
  opts.lr = 0.5;
  opts.weight_decay = 0.1;
  AdamW opt({{"x", &x}}, opts);
  x.grad_acc();  // present all-zero buffer: decay-only step
  opt.step();
  CHECK(x.data()[0] == doctest::Approx(4.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-15));
  CHECK(x.data()[1] == doctest::Approx(-8.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-15));
}

TEST_CASE("parameters without a gradient buffer are skipped entirely") {
  Tensor a({1, 2}, {1.0, 2.0}, true);
  Tensor b({1, 2}, {3.0, 4.0}, true);
  AdamWOptions opts;
  opts.lr = 0.1;
  opts.weight_decay = 0.5;  // decay would visibly move a skipped parameter
  AdamW opt({{"a", &a}, {"b", &b}}, opts);

  a.grad_acc() = {1.0, 1.0};
  opt.step();
  CHECK(b.data() == std::vector<double>{3.0, 4.0});  // untouched, not even decayed
  CHECK(a.data() != std::vector<double>{1.0, 2.0});

  opt.zero_grad();
  CHECK_FALSE(a.has_grad());
  const std::vector<double> a_after = a.data();
  b.grad_acc() = {1.0, 1.0};
  opt.step();
  CHECK(a.data() == a_after);
  CHECK(b.data() != std::vector<double>{3.0, 4.0});
}

TEST_CASE("adamw clips by global norm and reports the pre-clip norm") {
  Tensor x({1, 2}, {0.0, 0.0}, true);
  Tensor y({1, 2}, {0.0, 0.0}, true);
  AdamWOptions clip;
  clip.lr = 0.01;
  clip.weight_decay = 0.0;
  clip.max_grad_norm = 1.0;
  AdamW opt_clip({{"x", &x}, {"y", &y}}, clip);
  x.grad_acc() = {3.0, 0.0};
  y.grad_acc() = {0.0, 4.0};
  CHECK(opt_clip.step() == doctest::Approx(5.0).epsilon(1e-15));

  // the same update as feeding pre-scaled gradients with clipping off
  Tensor x2({1, 2}, {0.0, 0.0}, true);
  Tensor y2({1, 2}, {0.0, 0.0}, true);
  AdamWOptions noclip = clip;
  noclip.max_grad_norm = 0.0;
  AdamW opt_scaled({{"x", &x2}, {"y", &y2}}, noclip);
  x2.grad_acc() = {3.0 / 5.0, 0.0};
  y2.grad_acc() = {0.0, 4.0 / 5.0};
  opt_scaled.step();
  CHECK(x.data() == x2.data());
  CHECK(y.data() == y2.data());
}

TEST_CASE("adamw rejects non-finite gradients by name") {
  Tensor x({1, 2}, {0.0, 0.0}, true);
  AdamW opt({{"layer.weight", &x}});
  x.grad_acc() = {1.0, std::nan("")};
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("layer.weight"), std::runtime_error);
}

TEST_CASE("adamw validates its options") {
  Tensor x({1, 1}, {0.0}, true);
  AdamWOptions opts;
  opts.lr = 0.0;
  CHECK_THROWS_AS(AdamW({{"x", &x}}, opts), std::invalid_argument);
  opts = AdamWOptions{};
  opts.beta1 = 1.0;
  CHECK_THROWS_AS(AdamW({{"x", &x}}, opts), std::invalid_argument);
  opts = AdamWOptions{};
  opts.eps = 0.0;
  CHECK_THROWS_AS(AdamW({{"x", &x}}, opts), std::invalid_argument);
}

// ---- heads and task forwards ----------------------------------------------

TEST_CASE("a fresh head scores every class uniformly") {
  VanillaFixture fx({"good day", "bad day"}, TaskKind::classification, 3);
  Example ex;
  ex.text = "good day";
  ex.label = 2;
  TaskOutput out = task_forward(fx.model, ex);
  REQUIRE(out.probs.cols() == 3);
  for (int64_t c = 0; c < 3; ++c) CHECK(out.probs.at(0, c) == doctest::Approx(1.0 / 3.0));
  CHECK(out.loss.value() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(out.prediction == 0);  // argmax breaks ties toward the first class
}

TEST_CASE("classification composes encoder state and linear head") {
  VanillaFixture fx({"good day", "bad day"}, TaskKind::classification, 2);
  Rng rng(9);
  fx.head.w = Tensor::randn(fx.head.w.shape(), rng, 0.0, 0.5, true);
  fx.head.b = Tensor::randn(fx.head.b.shape(), rng, 0.0, 0.5, true);

  Example ex;
  ex.text = "bad day";
  ex.label = 1;
  TaskOutput out = task_forward(fx.model, ex);

  const TokenSequence seq = tokenize(fx.vocab, ex.text, nullptr, fx.enc.cfg.max_len, false);
  const Tensor cls = slice_rows(encode(seq, fx.enc).back(), 0, 1);
  std::vector<double> logits(2);
  for (int64_t c = 0; c < 2; ++c) {
    double s = fx.head.b.at(0, c);
    for (int64_t j = 0; j < fx.enc.cfg.hidden; ++j) s += cls.at(0, j) * fx.head.w.at(j, c);
    logits[static_cast<size_t>(c)] = s;
  }
  const double lse = logsumexp(logits);
  for (int64_t c = 0; c < 2; ++c) {
    CHECK(out.probs.at(0, c) == doctest::Approx(std::exp(logits[static_cast<size_t>(c)] - lse))
                                    .epsilon(1e-12));
  }
  CHECK(out.loss.value() == doctest::Approx(lse - logits[1]).epsilon(1e-12));

  ex.label = 2;
  CHECK_THROWS_WITH_AS(task_forward(fx.model, ex), doctest::Contains("outside"),
                       std::invalid_argument);
  CHECK_THROWS_AS(TaskHead::init(TaskKind::classification, fx.enc.cfg, 1),
                  std::invalid_argument);
}

TEST_CASE("marker substitution replaces exactly the first underscore") {
  CHECK(substitute_marker("the _ ran", "dog") == "the dog ran");
  CHECK(substitute_marker("_ then _", "a") == "a then _");
  CHECK_THROWS_WITH_AS(substitute_marker("no marker", "x"), doctest::Contains("'_'"),
                       std::invalid_argument);
}

TEST_CASE("identical choice candidates split the probability evenly") {
  VanillaFixture fx({"the stone door opened"}, TaskKind::multiple_choice);
  Rng rng(4);
  fx.head.w = Tensor::randn(fx.head.w.shape(), rng, 0.0, 0.5, true);
  Example ex;
  ex.text = "the _ opened";
  ex.candidates = {"stone door", "stone door"};
  ex.answer = 0;
  TaskOutput out = task_forward(fx.model, ex);
  CHECK(out.probs.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.probs.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.loss.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(out.prediction == 0);
}

TEST_CASE("multiple choice ranks candidates by their substituted encodings") {
  VanillaFixture fx({"the stone door opened wide"}, TaskKind::multiple_choice);
  Rng rng(14);
  fx.head.w = Tensor::randn(fx.head.w.shape(), rng, 0.0, 0.5, true);
  fx.head.b = Tensor::randn(fx.head.b.shape(), rng, 0.0, 0.5, true);

  Example ex;
  ex.text = "the _ opened";
  ex.candidates = {"stone", "door", "wide"};
  ex.answer = 1;
  TaskOutput out = task_forward(fx.model, ex);

  std::vector<double> logits;
  for (const std::string& cand : ex.candidates) {
    const std::string text = substitute_marker(ex.text, cand);
    const TokenSequence seq = tokenize(fx.vocab, text, nullptr, fx.enc.cfg.max_len, false);
    const Tensor cls = slice_rows(encode(seq, fx.enc).back(), 0, 1);
    double s = fx.head.b.at(0, 0);
    for (int64_t j = 0; j < fx.enc.cfg.hidden; ++j) s += cls.at(0, j) * fx.head.w.at(j, 0);
    logits.push_back(s);
  }
  const double lse = logsumexp(logits);
  for (size_t c = 0; c < 3; ++c) {
    CHECK(out.probs.at(0, static_cast<int64_t>(c)) ==
          doctest::Approx(std::exp(logits[c] - lse)).epsilon(1e-12));
  }
  CHECK(out.loss.value() == doctest::Approx(lse - logits[1]).epsilon(1e-12));

  Example bad = ex;
  bad.candidates = {"only"};
  CHECK_THROWS_WITH_AS(task_forward(fx.model, bad), doctest::Contains("at least 2"),
                       std::invalid_argument);
}

TEST_CASE("mlm scores are masked-span log likelihoods") {
  VanillaFixture fx({"the red door opened", "red door", "blue gate"}, TaskKind::mlm_scoring);
  Rng rng(6);
  fx.head.vocab_bias = Tensor::randn(fx.head.vocab_bias.shape(), rng, 0.0, 0.3, true);
  const CandidateSet null_cs = CandidateSet::null_only();

  SUBCASE("single token matches a hand computation") {
    const Tensor score = mlm_score(fx.model, "the _ opened", "red", null_cs);
    // frame: [CLS] the [MASK] opened [SEP] padded; span at position 2
    TokenSequence seq;
    seq.ids = {kClsId, fx.vocab.id("the"), kMaskId, fx.vocab.id("opened"), kSepId};
    seq.attention_mask.assign(5, 1);
    seq.segment_ids.assign(5, 0);
    while (static_cast<int64_t>(seq.ids.size()) < fx.enc.cfg.max_len) {
      seq.ids.push_back(kPadId);
      seq.attention_mask.push_back(0);
      seq.segment_ids.push_back(0);
    }
    const Tensor state = slice_rows(encode(seq, fx.enc).back(), 2, 1);
    std::vector<double> logits(static_cast<size_t>(fx.vocab.size()));
    for (int64_t t = 0; t < fx.vocab.size(); ++t) {
      double s = fx.head.vocab_bias.at(0, t);
      for (int64_t j = 0; j < fx.enc.cfg.hidden; ++j) s += state.at(0, j) * fx.enc.tok_emb.at(t, j);
      logits[static_cast<size_t>(t)] = s;
    }
    const double want = logits[static_cast<size_t>(fx.vocab.id("red"))] - logsumexp(logits);
    CHECK(score.value() == doctest::Approx(want).epsilon(1e-10));
    CHECK(score.value() < 0.0);
  }

  SUBCASE("multi-token candidates sum per-position log probabilities") {
    const Tensor two = mlm_score(fx.model, "the _ opened", "red door", null_cs);
    CHECK(two.value() < 0.0);
    // the two-mask frame scores each position against its own target
    TokenSequence seq;
    seq.ids = {kClsId, fx.vocab.id("the"), kMaskId, kMaskId, fx.vocab.id("opened"), kSepId};
    seq.attention_mask.assign(6, 1);
    seq.segment_ids.assign(6, 0);
    while (static_cast<int64_t>(seq.ids.size()) < fx.enc.cfg.max_len) {
      seq.ids.push_back(kPadId);
      seq.attention_mask.push_back(0);
      seq.segment_ids.push_back(0);
    }
    const Tensor acts = encode(seq, fx.enc).back();
    double want = 0.0;
    const std::vector<std::string> targets{"red", "door"};
    for (int64_t t = 0; t < 2; ++t) {
      const Tensor state = slice_rows(acts, 2 + t, 1);
      std::vector<double> logits(static_cast<size_t>(fx.vocab.size()));
      for (int64_t w = 0; w < fx.vocab.size(); ++w) {
        double s = fx.head.vocab_bias.at(0, w);
        for (int64_t j = 0; j < fx.enc.cfg.hidden; ++j) {
          s += state.at(0, j) * fx.enc.tok_emb.at(w, j);
        }
        logits[static_cast<size_t>(w)] = s;
      }
      want += logits[static_cast<size_t>(fx.vocab.id(targets[static_cast<size_t>(t)]))] -
              logsumexp(logits);
    }
    CHECK(two.value() == doctest::Approx(want).epsilon(1e-10));
  }

  SUBCASE("contract violations") {
    CHECK_THROWS_WITH_AS(mlm_score(fx.model, "no marker", "red", null_cs),
                         doctest::Contains("span marker"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(mlm_score(fx.model, "the _ opened", "...", null_cs),
                         doctest::Contains("no tokens"), std::invalid_argument);
    const std::string long_cand =
        "red door red door red door red door red door red door red door";
    CHECK_THROWS_WITH_AS(mlm_score(fx.model, "the _ opened", long_cand, null_cs),
                         doctest::Contains("does not fit"), std::invalid_argument);
  }

  SUBCASE("task forward turns scores into a softmax and picks the answer loss") {
    Example ex;
    ex.text = "the _ opened";
    ex.candidates = {"red door", "blue gate"};
    ex.answer = 1;
    TaskOutput out = task_forward(fx.model, ex);
    const double s0 = mlm_score(fx.model, ex.text, "red door", null_cs).value();
    const double s1 = mlm_score(fx.model, ex.text, "blue gate", null_cs).value();
    const double lse = logsumexp({s0, s1});
    CHECK(out.probs.at(0, 0) == doctest::Approx(std::exp(s0 - lse)).epsilon(1e-12));
    CHECK(out.probs.at(0, 1) == doctest::Approx(std::exp(s1 - lse)).epsilon(1e-12));
    CHECK(out.loss.value() == doctest::Approx(-s1).epsilon(1e-12));

    Example paired = ex;
    paired.text_pair = "extra";
    CHECK_THROWS_WITH_AS(task_forward(fx.model, paired), doctest::Contains("sentence pairs"),
                         std::invalid_argument);
  }
}

// ---- candidate plumbing ----------------------------------------------------

TEST_CASE("forward candidates come from retrieval, pins or the null set") {
  KnowledgeFixture fx;

  Example ex;
  ex.text = "he found the alpha stone";
  CandidateSet cs = forward_candidates(fx.model, ex, ex.text);
  REQUIRE(cs.real_count() == 1);
  CHECK(cs.real(0).head == "alpha stone");

  ex.cs = std::vector<int64_t>{2, 3};
  cs = forward_candidates(fx.model, ex, ex.text);
  REQUIRE(cs.real_count() == 2);
  CHECK(cs.real(0).id == 2);
  CHECK(cs.real(1).id == 3);

  TaskModel no_kb = fx.model;
  no_kb.kb = nullptr;
  CHECK_THROWS_WITH_AS(forward_candidates(no_kb, ex, ex.text),
                       doctest::Contains("no knowledge base"), std::invalid_argument);
  ex.cs.reset();
  CHECK(forward_candidates(no_kb, ex, ex.text).real_count() == 0);

  // the pair participates in retrieval
  Example paired;
  paired.text = "he found the";
  paired.text_pair = "old bridge ahead";
  cs = forward_candidates(fx.model, paired, paired.text);
  REQUIRE(cs.real_count() == 1);
  CHECK(cs.real(0).head == "old bridge");

  // vanilla models always run with the null candidate only
  VanillaFixture vf({"x"}, TaskKind::classification);
  Example any;
  any.text = "he found the alpha stone";
  CHECK(forward_candidates(vf.model, any, any.text).real_count() == 0);
}

TEST_CASE("example candidate ids united across substitutions") {
  KnowledgeFixture fx;
  Example ex;
  ex.text = "he found the _";
  ex.candidates = {"alpha stone", "beta stone"};
  ex.answer = 0;
  CHECK(example_candidate_ids(fx.model, ex) == std::vector<int64_t>{1, 2});

  Example plain;
  plain.text = "they crossed the old bridge";
  CHECK(example_candidate_ids(fx.model, plain) == std::vector<int64_t>{3});

  Example pinned = plain;
  pinned.cs = std::vector<int64_t>{1, 3};
  CHECK(example_candidate_ids(fx.model, pinned) == std::vector<int64_t>{1, 3});

  VanillaFixture vf({"x"}, TaskKind::classification);
  CHECK(example_candidate_ids(vf.model, plain).empty());

  // the n_max cap keeps the lowest ids
  CHECK(example_candidate_ids(fx.kb, ex, 5, 1) == std::vector<int64_t>{1});
}

TEST_CASE("knowledge forwards differ between retrieved and null candidates") {
  KnowledgeFixture fx;
  Example ex;
  ex.text = "he found the alpha stone";
  ex.label = 0;
  Rng rng(2);
  fx.head.w = Tensor::randn(fx.head.w.shape(), rng, 0.0, 0.5, true);
  TaskOutput with_kb = task_forward(fx.model, ex);
  const CandidateSet null_cs = CandidateSet::null_only();
  TaskOutput without = task_forward(fx.model, ex, nullptr, nullptr, &null_cs);
  CHECK(with_kb.probs.at(0, 0) != without.probs.at(0, 0));
}

// ---- training loop ---------------------------------------------------------

TEST_CASE("train with zero epochs changes nothing") {
  VanillaFixture fx({"up day", "down day"}, TaskKind::classification);
  Dataset data;
  Example a;
  a.text = "up day";
  a.label = 0;
  Example b;
  b.text = "down day";
  b.label = 1;
  data.examples = {a, b};

  NamedParams params = fx.model.named_parameters();
  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : params) before.push_back(t->data());

  TrainConfig cfg;
  cfg.epochs = 0;
  TrainResult r = train(fx.model, data, nullptr, cfg);
  CHECK(r.epochs.empty());
  for (size_t i = 0; i < params.size(); ++i) CHECK(params[i].second->data() == before[i]);
}

TEST_CASE("a tiny classification set is memorized") {
  VanillaFixture fx({"alpha alpha", "beta beta", "gamma gamma", "delta delta"},
                    TaskKind::classification);
  Dataset data;
  const std::vector<std::string> texts{"alpha alpha", "beta beta", "gamma gamma", "delta delta"};
  for (size_t i = 0; i < texts.size(); ++i) {
    Example ex;
    ex.text = texts[i];
    ex.label = static_cast<int64_t>(i % 2);
    data.examples.push_back(ex);
  }

  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.batch_size = 4;
  cfg.epochs = 150;
  cfg.seed = 1;
  TrainResult r = train(fx.model, data, nullptr, cfg);
  REQUIRE(r.epochs.size() == 150);
  CHECK(r.epochs.back().train_loss < 0.05);
  CHECK(r.epochs.back().train_accuracy == 1.0);
  CHECK(r.epochs.back().eval_accuracy == -1.0);

  // the reported loss is the mean per-example loss under the final weights
  EvalStats recount = evaluate(fx.model, data);
  CHECK(r.epochs.back().train_loss == doctest::Approx(recount.mean_loss).epsilon(1e-12));
}

TEST_CASE("training is bitwise reproducible from the seed") {
  auto run = [](std::vector<std::vector<double>>* out) {
    VanillaFixture fx({"one way", "two ways"}, TaskKind::classification);
    Dataset data;
    Example a;
    a.text = "one way";
    a.label = 0;
    Example b;
    b.text = "two ways";
    b.label = 1;
    data.examples = {a, b};
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.epochs = 3;
    cfg.batch_size = 1;
    cfg.seed = 42;
    train(fx.model, data, nullptr, cfg);
    for (const auto& [name, t] : fx.model.named_parameters()) out->push_back(t->data());
  };
  std::vector<std::vector<double>> first, second;
  run(&first);
  run(&second);
  REQUIRE(first.size() == second.size());
  for (size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("training moves the knowledge model and tracks metrics") {
  KnowledgeFixture fx;
  Dataset data;
  Example a;
  a.text = "he found the alpha stone";
  a.label = 0;
  Example b;
  b.text = "she kept the beta stone";
  b.label = 1;
  data.examples = {a, b};

  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  TrainResult r = train(fx.model, data, &data, cfg);
  REQUIRE(r.epochs.size() == 2);
  for (const EpochMetrics& em : r.epochs) {
    CHECK(em.train_loss > 0.0);
    CHECK(em.eval_accuracy >= 0.0);
    CHECK(em.eval_accuracy <= 1.0);
  }

  const std::string tsv = metrics_tsv(r);
  CHECK(tsv.find("epoch\ttrain_loss\ttrain_accuracy\teval_accuracy\n") == 0);
  CHECK(tsv.find("\n1\t") != std::string::npos);

  TrainResult no_eval;
  EpochMetrics em;
  em.epoch = 1;
  em.train_loss = 0.5;
  em.train_accuracy = 0.75;
  no_eval.epochs.push_back(em);
  CHECK(metrics_tsv(no_eval).find("\t-\n") != std::string::npos);
}

TEST_CASE("evaluate fans out across threads without changing results") {
  KnowledgeFixture fx;
  Rng rng(8);
  fx.head.w = Tensor::randn(fx.head.w.shape(), rng, 0.0, 0.5, true);
  Dataset data;
  const std::vector<std::string> texts{"he found the alpha stone", "she kept the beta stone",
                                       "they crossed the old bridge", "he found the beta stone"};
  for (size_t i = 0; i < texts.size(); ++i) {
    Example ex;
    ex.text = texts[i];
    ex.label = static_cast<int64_t>(i % 2);
    data.examples.push_back(ex);
  }
  const EvalStats serial = evaluate(fx.model, data, 1);
  const EvalStats parallel = evaluate(fx.model, data, 3);
  CHECK(serial.count == parallel.count);
  CHECK(serial.accuracy == parallel.accuracy);
  CHECK(serial.mean_loss == parallel.mean_loss);
}

TEST_CASE("unlabeled examples are rejected with a clear message") {
  VanillaFixture fx({"plain text"}, TaskKind::classification);
  Dataset data;
  Example ex;
  ex.text = "plain text";
  data.examples = {ex};
  CHECK_THROWS_WITH_AS(evaluate(fx.model, data), doctest::Contains("neither a label nor"),
                       std::invalid_argument);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_WITH_AS(train(fx.model, data, nullptr, cfg),
                       doctest::Contains("neither a label nor"), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(fx.model, Dataset{}), std::invalid_argument);
  CHECK_THROWS_AS(train(fx.model, Dataset{}, nullptr, cfg), std::invalid_argument);
}

TEST_CASE("train config validates and round trips") {
  TrainConfig cfg;
  cfg.lr = 0.5;
  cfg.batch_size = 3;
  cfg.epochs = 7;
  cfg.weight_decay = 0.125;
  cfg.seed = 99;
  cfg.grad_clip = 2.5;
  TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.lr == cfg.lr);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK(back.seed == cfg.seed);
  CHECK(back.grad_clip == cfg.grad_clip);

  TrainConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.weight_decay = -0.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

// ---- dataset ---------------------------------------------------------------

TEST_CASE("jsonl datasets parse, validate and round trip") {
  const std::string content =
      "{\"text\": \"walk the dog\", \"label\": 1}\n"
      "\n"
      "{\"text\": \"pick _\", \"candidates\": [\"a\", \"b\"], \"answer\": 1, \"cs\": [4, 9]}\r\n"
      "{\"text\": \"pair\", \"text_pair\": \"second\", \"label\": 0}\n";
  Dataset ds = parse_jsonl(content, "unit");
  REQUIRE(ds.size() == 3);
  CHECK(ds.examples[0].text == "walk the dog");
  CHECK(ds.examples[0].label == 1);
  CHECK_FALSE(ds.examples[0].text_pair.has_value());
  CHECK(ds.examples[1].candidates == std::vector<std::string>{"a", "b"});
  CHECK(ds.examples[1].answer == 1);
  CHECK(ds.examples[1].cs == std::vector<int64_t>{4, 9});
  CHECK(ds.examples[2].text_pair == "second");

  Dataset back = parse_jsonl(to_jsonl(ds), "roundtrip");
  REQUIRE(back.size() == ds.size());
  for (int64_t i = 0; i < ds.size(); ++i) {
    CHECK(back.examples[static_cast<size_t>(i)].text == ds.examples[static_cast<size_t>(i)].text);
    CHECK(back.examples[static_cast<size_t>(i)].label ==
          ds.examples[static_cast<size_t>(i)].label);
    CHECK(back.examples[static_cast<size_t>(i)].candidates ==
          ds.examples[static_cast<size_t>(i)].candidates);
    CHECK(back.examples[static_cast<size_t>(i)].answer ==
          ds.examples[static_cast<size_t>(i)].answer);
    CHECK(back.examples[static_cast<size_t>(i)].cs == ds.examples[static_cast<size_t>(i)].cs);
  }

  CHECK_THROWS_WITH_AS(parse_jsonl("{\"text\": \"x\"}\nnot json\n", "unit"),
                       doctest::Contains("unit line 2"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_jsonl("{\"label\": 3}\n", "unit"),
                       doctest::Contains("missing string field 'text'"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      parse_jsonl("{\"text\": \"x\", \"candidates\": [\"a\"], \"answer\": 1}\n", "unit"),
      doctest::Contains("outside candidate range"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_jsonl("{\"text\": \"x\", \"label\": \"one\"}\n", "unit"),
                       doctest::Contains("bad field type"), std::runtime_error);

  const std::string path = "/tmp/ket_dataset_test.jsonl";
  save_jsonl(ds, path);
  Dataset loaded = load_jsonl(path);
  CHECK(loaded.size() == ds.size());
  std::remove(path.c_str());
}
