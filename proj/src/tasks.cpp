#include "ket/tasks.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "ket/text.hpp"

namespace ket {

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "multiple_choice") return TaskKind::multiple_choice;
  if (s == "mlm_scoring") return TaskKind::mlm_scoring;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::classification: return "classification";
    case TaskKind::multiple_choice: return "multiple_choice";
    case TaskKind::mlm_scoring: return "mlm_scoring";
  }
  throw std::logic_error("unreachable task kind");
}

TaskHead TaskHead::init(TaskKind kind, const ModelConfig& cfg, int64_t num_classes) {
  TaskHead h;
  h.kind = kind;
  h.num_classes = num_classes;
  switch (kind) {
    case TaskKind::classification:
      if (num_classes < 2) throw std::invalid_argument("task head: need at least 2 classes");
      h.w = Tensor::zeros({cfg.hidden, num_classes}, true);
      h.b = Tensor::zeros({1, num_classes}, true);
      break;
    case TaskKind::multiple_choice:
      h.w = Tensor::zeros({cfg.hidden, 1}, true);
      h.b = Tensor::zeros({1, 1}, true);
      break;
    case TaskKind::mlm_scoring:
      h.vocab_bias = Tensor::zeros({1, cfg.vocab_size}, true);
      break;
  }
  return h;
}

void TaskHead::collect(const std::string& prefix, NamedParams& out) {
  if (w.defined()) out.emplace_back(prefix + "w", &w);
  if (b.defined()) out.emplace_back(prefix + "b", &b);
  if (vocab_bias.defined()) out.emplace_back(prefix + "vocab_bias", &vocab_bias);
}

const ModelConfig& TaskModel::config() const {
  if (knowledge != nullptr) return knowledge->cfg;
  if (vanilla != nullptr) return vanilla->cfg;
  throw std::logic_error("task model has no encoder");
}

NamedParams TaskModel::named_parameters() {
  NamedParams out;
  if (knowledge != nullptr) {
    out = knowledge->named_parameters();
  } else if (vanilla != nullptr) {
    vanilla->collect("enc.", out);
  } else {
    throw std::logic_error("task model has no encoder");
  }
  if (head != nullptr) head->collect("head.", out);
  return out;
}

std::string substitute_marker(const std::string& text, const std::string& candidate) {
  const size_t pos = text.find('_');
  if (pos == std::string::npos) {
    throw std::invalid_argument("choice task text is missing the substitution marker '_'");
  }
  return text.substr(0, pos) + candidate + text.substr(pos + 1);
}

namespace {

std::string retrieval_text(const Example& ex, const std::string& substituted_text) {
  if (ex.text_pair) return substituted_text + " " + *ex.text_pair;
  return substituted_text;
}

// Final [CLS] state of the appropriate encoder.
Tensor cls_state(TaskModel& m, const std::string& text, const std::string* pair,
                 const CandidateSet& cs, const DropoutCtx* dp, DescMemo* memo) {
  if (m.is_knowledge()) {
    const TokenSequence seq = tokenize(*m.vocab, text, pair, m.config().max_len, true);
    KnowledgeForwardOptions opts;
    opts.record_attention = false;
    opts.dropout = dp;
    return knowledge_encode(seq, cs, *m.knowledge, *m.vocab, opts, memo).cls();
  }
  const TokenSequence seq = tokenize(*m.vocab, text, pair, m.config().max_len, false);
  const std::vector<Tensor> acts = encode(seq, *m.vanilla, dp);
  return slice_rows(acts.back(), 0, 1);
}

Tensor linear_logits(const TaskHead& head, const Tensor& cls) {
  return add(matmul(cls, head.w), head.b);
}

int64_t argmax_row(const Tensor& probs) {
  const std::vector<double>& v = probs.data();
  return static_cast<int64_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

CandidateSet forward_candidates(const TaskModel& m, const Example& ex,
                                const std::string& substituted_text) {
  if (!m.is_knowledge()) return CandidateSet::null_only();
  if (ex.cs) {
    if (m.kb == nullptr) {
      throw std::invalid_argument("example pins candidate ids but no knowledge base is loaded");
    }
    return m.kb->candidate_set(*ex.cs, m.config().n_max);
  }
  if (m.kb == nullptr) return CandidateSet::null_only();
  return m.kb->retrieve(retrieval_text(ex, substituted_text), m.window, m.config().n_max);
}

std::vector<int64_t> example_candidate_ids(const CommonsenseKB& kb, const Example& ex,
                                           int64_t window, int64_t n_max) {
  if (ex.cs) return *ex.cs;
  std::set<int64_t> ids;
  const auto gather = [&](const std::string& text) {
    const std::string full = ex.text_pair ? text + " " + *ex.text_pair : text;
    const CandidateSet cs = kb.retrieve(full, window, n_max);
    for (int64_t i = 0; i < cs.real_count(); ++i) ids.insert(cs.real(i).id);
  };
  if (ex.candidates.empty()) {
    gather(ex.text);
  } else {
    for (const std::string& cand : ex.candidates) gather(substitute_marker(ex.text, cand));
  }
  std::vector<int64_t> out(ids.begin(), ids.end());
  if (static_cast<int64_t>(out.size()) > n_max) out.resize(static_cast<size_t>(n_max));
  return out;
}

std::vector<int64_t> example_candidate_ids(const TaskModel& m, const Example& ex) {
  if (ex.cs) return *ex.cs;
  if (!m.is_knowledge() || m.kb == nullptr) return {};
  return example_candidate_ids(*m.kb, ex, m.window, m.config().n_max);
}

Tensor mlm_score(TaskModel& m, const std::string& text, const std::string& candidate,
                 const CandidateSet& cs, const DropoutCtx* dp, DescMemo* memo) {
  const ModelConfig& cfg = m.config();
  const size_t marker = text.find('_');
  if (marker == std::string::npos) {
    throw std::invalid_argument("mlm scoring text is missing the span marker '_'");
  }
  const std::vector<std::string> cand_words = normalize_words(candidate);
  if (cand_words.empty()) {
    throw std::invalid_argument("mlm candidate '" + candidate + "' has no tokens");
  }
  std::vector<std::string> prefix = normalize_words(text.substr(0, marker));
  std::vector<std::string> suffix = normalize_words(text.substr(marker + 1));

  const bool insert_k = m.is_knowledge();
  const int64_t budget = cfg.max_len - 2 - (insert_k ? 1 : 0);
  const int64_t span = static_cast<int64_t>(cand_words.size());
  if (static_cast<int64_t>(prefix.size()) + span > budget) {
    throw std::invalid_argument("mlm candidate '" + candidate + "' does not fit within max_len");
  }
  while (static_cast<int64_t>(prefix.size() + suffix.size()) + span > budget) suffix.pop_back();

  TokenSequence seq;
  seq.ids.push_back(kClsId);
  if (insert_k) seq.ids.push_back(kKnowId);
  for (const std::string& word : prefix) seq.ids.push_back(m.vocab->id(word));
  const int64_t span_start = static_cast<int64_t>(seq.ids.size());
  for (int64_t t = 0; t < span; ++t) seq.ids.push_back(kMaskId);
  for (const std::string& word : suffix) seq.ids.push_back(m.vocab->id(word));
  seq.ids.push_back(kSepId);
  seq.attention_mask.assign(seq.ids.size(), 1);
  seq.segment_ids.assign(seq.ids.size(), 0);
  while (static_cast<int64_t>(seq.ids.size()) < cfg.max_len) {
    seq.ids.push_back(kPadId);
    seq.attention_mask.push_back(0);
    seq.segment_ids.push_back(0);
  }

  const Tensor& tok_emb = insert_k ? m.knowledge->text_side.tok_emb : m.vanilla->tok_emb;
  KnowledgeOutput kout;
  std::vector<Tensor> acts;
  if (insert_k) {
    KnowledgeForwardOptions opts;
    opts.record_attention = false;
    opts.dropout = dp;
    kout = knowledge_encode(seq, cs, *m.knowledge, *m.vocab, opts, memo);
  } else {
    acts = encode(seq, *m.vanilla, dp);
  }

  Tensor total = Tensor::scalar(0.0);
  for (int64_t t = 0; t < span; ++t) {
    const int64_t full_pos = span_start + t;
    const Tensor state =
        insert_k ? kout.token_state(full_pos) : slice_rows(acts.back(), full_pos, 1);
    const Tensor logits = add(matmul(state, transpose(tok_emb)), m.head->vocab_bias);
    const int64_t target = m.vocab->id(cand_words[static_cast<size_t>(t)]);
    total = add(total, scale(cross_entropy(logits, {target}), -1.0));
  }
  return total;
}

TaskOutput task_forward(TaskModel& m, const Example& ex, const DropoutCtx* dp, DescMemo* memo,
                        const CandidateSet* cs_override) {
  if (m.head == nullptr) throw std::logic_error("task model has no head");
  if (m.vocab == nullptr) throw std::logic_error("task model has no vocabulary");
  TaskOutput out;
  switch (m.head->kind) {
    case TaskKind::classification: {
      const CandidateSet cs = cs_override ? *cs_override : forward_candidates(m, ex, ex.text);
      const std::string* pair = ex.text_pair ? &*ex.text_pair : nullptr;
      const Tensor cls = cls_state(m, ex.text, pair, cs, dp, memo);
      const Tensor logits = linear_logits(*m.head, cls);
      out.probs = softmax(logits, 1);
      if (ex.label) {
        if (*ex.label < 0 || *ex.label >= m.head->num_classes) {
          throw std::invalid_argument("label " + std::to_string(*ex.label) +
                                      " outside [0, " + std::to_string(m.head->num_classes) + ")");
        }
        out.loss = cross_entropy(logits, {*ex.label});
      }
      break;
    }
    case TaskKind::multiple_choice: {
      if (ex.candidates.size() < 2) {
        throw std::invalid_argument("multiple choice needs at least 2 candidates");
      }
      const std::string* pair = ex.text_pair ? &*ex.text_pair : nullptr;
      std::vector<Tensor> logit_rows;
      for (const std::string& cand : ex.candidates) {
        const std::string text = substitute_marker(ex.text, cand);
        const CandidateSet cs = cs_override ? *cs_override : forward_candidates(m, ex, text);
        const Tensor cls = cls_state(m, text, pair, cs, dp, memo);
        logit_rows.push_back(linear_logits(*m.head, cls));
      }
      const Tensor logits = transpose(concat_rows(logit_rows));
      out.probs = softmax(logits, 1);
      if (ex.answer) out.loss = cross_entropy(logits, {*ex.answer});
      break;
    }
    case TaskKind::mlm_scoring: {
      if (ex.candidates.size() < 2) {
        throw std::invalid_argument("mlm scoring needs at least 2 candidates");
      }
      if (ex.text_pair) {
        throw std::invalid_argument("mlm scoring does not support sentence pairs");
      }
      std::vector<Tensor> score_rows;
      for (const std::string& cand : ex.candidates) {
        const CandidateSet cs =
            cs_override ? *cs_override
                        : forward_candidates(m, ex, substitute_marker(ex.text, cand));
        score_rows.push_back(reshape(mlm_score(m, ex.text, cand, cs, dp, memo), {1, 1}));
      }
      const Tensor scores = transpose(concat_rows(score_rows));
      out.probs = softmax(scores, 1);
      if (ex.answer) {
        out.loss = scale(score_rows[static_cast<size_t>(*ex.answer)], -1.0);
      }
      break;
    }
  }
  out.prediction = argmax_row(out.probs);
  return out;
}

}  // namespace ket
