#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ket/dataset.hpp"
#include "ket/kb.hpp"
#include "ket/model.hpp"

namespace ket {

enum class TaskKind { classification, multiple_choice, mlm_scoring };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

// Linear head over the final [CLS] state: one logit per class, or one
// shared logit for choice ranking. Weights start at zero so an untrained
// head scores every option uniformly. mlm_scoring instead ties the output
// projection to the encoder's token embedding and owns only a vocab bias.
struct TaskHead {
  TaskKind kind = TaskKind::classification;
  int64_t num_classes = 2;  // classification only
  Tensor w, b;
  Tensor vocab_bias;

  static TaskHead init(TaskKind kind, const ModelConfig& cfg, int64_t num_classes);
  void collect(const std::string& prefix, NamedParams& out);
};

// A runnable task setup: exactly one encoder (vanilla or knowledge), the
// vocabulary, an optional knowledge base for live retrieval, and the head.
// A knowledge model without a KB runs with the null candidate only.
struct TaskModel {
  EncoderParams* vanilla = nullptr;
  KnowledgeEncoder* knowledge = nullptr;
  const Vocabulary* vocab = nullptr;
  const CommonsenseKB* kb = nullptr;
  TaskHead* head = nullptr;
  int64_t window = 5;

  bool is_knowledge() const { return knowledge != nullptr; }
  const ModelConfig& config() const;
  NamedParams named_parameters();
};

struct TaskOutput {
  Tensor probs;        // [1 x classes] or [1 x candidates]
  Tensor loss;         // scalar; defined only for labeled examples
  int64_t prediction;  // argmax of probs, first index on ties
};

// Replaces the first "_" in text with the candidate surface form. Throws
// when the marker is absent.
std::string substitute_marker(const std::string& text, const std::string& candidate);

// Candidates the forward pass would use: the example's pinned ids when
// present, otherwise retrieval over the text (both sentences when paired,
// candidate substituted for choice tasks).
CandidateSet forward_candidates(const TaskModel& m, const Example& ex,
                                const std::string& substituted_text);

// Union of forward candidate ids across the example's substitutions,
// capped at n_max lowest ids. Empty for vanilla models without pinned ids.
std::vector<int64_t> example_candidate_ids(const TaskModel& m, const Example& ex);
std::vector<int64_t> example_candidate_ids(const CommonsenseKB& kb, const Example& ex,
                                           int64_t window, int64_t n_max);

// One labeled/unlabeled example through encoder and head.
//   classification : softmax over class logits of [CLS]; loss = cross entropy
//   multiple_choice: per-candidate substitution and retrieval, shared
//                    1-logit head, softmax across candidates
//   mlm_scoring    : per-candidate masked log-likelihood, softmax across
//                    candidates; loss = -log likelihood of the answer
// cs_override pins one candidate set for every forward in the example.
TaskOutput task_forward(TaskModel& m, const Example& ex, const DropoutCtx* dp = nullptr,
                        DescMemo* memo = nullptr, const CandidateSet* cs_override = nullptr);

// Log probability that `candidate` fills the marked span of `text`: the
// span becomes one [MASK] per candidate token and the tied-embedding head
// scores each masked position; positions sum. Sentence pairs are not
// supported here.
Tensor mlm_score(TaskModel& m, const std::string& text, const std::string& candidate,
                 const CandidateSet& cs, const DropoutCtx* dp = nullptr,
                 DescMemo* memo = nullptr);

}  // namespace ket
