#include "ket/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ket/rng.hpp"
#include "ket/text.hpp"

namespace ket {

namespace {

// Layer index parsed from "...layer<digits>...", -1 when absent.
int64_t layer_of(const std::string& name) {
  size_t pos = name.find("layer");
  while (pos != std::string::npos) {
    const size_t digits = pos + 5;
    if (digits < name.size() && std::isdigit(static_cast<unsigned char>(name[digits]))) {
      size_t end = digits;
      while (end < name.size() && std::isdigit(static_cast<unsigned char>(name[end]))) ++end;
      return std::stoll(name.substr(digits, end - digits));
    }
    pos = name.find("layer", pos + 1);
  }
  return -1;
}

}  // namespace

DriftReport param_drift(const Checkpoint& before, const Checkpoint& after,
                        const std::string& pattern) {
  if (before.entries.size() != after.entries.size()) {
    throw std::invalid_argument("drift: checkpoints hold " + std::to_string(before.entries.size()) +
                                " vs " + std::to_string(after.entries.size()) + " parameters");
  }
  DriftReport report;
  report.pattern = pattern;
  std::map<int64_t, double> by_layer;
  for (size_t i = 0; i < before.entries.size(); ++i) {
    const Checkpoint::Entry& a = before.entries[i];
    const Checkpoint::Entry& b = after.entries[i];
    if (a.name != b.name || a.shape != b.shape) {
      throw std::invalid_argument("drift: checkpoints diverge at parameter '" + a.name + "'");
    }
    if (!glob_match(pattern, a.name)) continue;
    double l1 = 0.0;
    for (size_t j = 0; j < a.values.size(); ++j) l1 += std::abs(a.values[j] - b.values[j]);
    by_layer[layer_of(a.name)] += l1;
    report.total += l1;
  }
  report.per_layer.assign(by_layer.begin(), by_layer.end());
  return report;
}

std::string drift_tsv(const DriftReport& r) {
  std::ostringstream out;
  out << "layer\tl1_distance\n";
  out.setf(std::ios::fixed);
  out.precision(9);
  for (const auto& [layer, l1] : r.per_layer) {
    if (layer < 0) {
      out << "other";
    } else {
      out << layer;
    }
    out << "\t" << l1 << "\n";
  }
  return out.str();
}

std::vector<InfluenceRecord> influence(TaskModel& m, const Example& ex) {
  if (!m.is_knowledge() || m.kb == nullptr) {
    throw std::invalid_argument("influence needs a knowledge model with a knowledge base");
  }
  const std::vector<int64_t> ids = example_candidate_ids(m, ex);
  if (ids.empty()) {
    throw std::invalid_argument("influence needs at least one real candidate");
  }
  const int64_t n_max = m.config().n_max;
  const CandidateSet full = m.kb->candidate_set(ids, n_max);
  DescMemo memo;
  const Tensor base = task_forward(m, ex, nullptr, &memo, &full).probs;

  std::vector<InfluenceRecord> records;
  for (int64_t removed : ids) {
    std::vector<int64_t> rest;
    for (int64_t id : ids) {
      if (id != removed) rest.push_back(id);
    }
    const CandidateSet cs = m.kb->candidate_set(rest, n_max);
    const Tensor probs = task_forward(m, ex, nullptr, &memo, &cs).probs;
    double sq = 0.0;
    for (size_t i = 0; i < base.data().size(); ++i) {
      const double d = base.data()[i] - probs.data()[i];
      sq += d * d;
    }
    records.push_back({removed, std::sqrt(sq), 0});
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const InfluenceRecord& a, const InfluenceRecord& b) {
                     if (a.influence != b.influence) return a.influence > b.influence;
                     return a.entry_id < b.entry_id;
                   });
  for (size_t i = 0; i < records.size(); ++i) records[i].rank = static_cast<int64_t>(i) + 1;
  return records;
}

std::string influence_tsv(const std::vector<InfluenceRecord>& records) {
  std::ostringstream out;
  out << "entry_id\tinfluence\trank\n";
  out.setf(std::ios::fixed);
  out.precision(9);
  for (const InfluenceRecord& r : records) {
    out << r.entry_id << "\t" << r.influence << "\t" << r.rank << "\n";
  }
  return out.str();
}

LowResourceSplit low_resource_split(const Dataset& train, const Dataset& test, int64_t k,
                                    uint64_t seed, const CommonsenseKB& kb, int64_t window,
                                    int64_t n_max, OverlapRule rule) {
  if (k < 1 || k > train.size()) {
    throw std::invalid_argument("low-resource split: k " + std::to_string(k) +
                                " outside [1, " + std::to_string(train.size()) + "]");
  }
  Rng rng(seed);
  const std::vector<size_t> picked =
      rng.sample_indices(static_cast<size_t>(train.size()), static_cast<size_t>(k));

  LowResourceSplit out;
  std::set<int64_t> seen;
  for (size_t idx : picked) {
    const Example& ex = train.examples[idx];
    for (int64_t id : example_candidate_ids(kb, ex, window, n_max)) seen.insert(id);
    out.train_k.examples.push_back(ex);
  }
  for (const Example& ex : test.examples) {
    const std::vector<int64_t> ids = example_candidate_ids(kb, ex, window, n_max);
    if (ids.empty()) continue;
    bool keep = false;
    if (rule == OverlapRule::subset) {
      keep = std::all_of(ids.begin(), ids.end(),
                         [&](int64_t id) { return seen.count(id) > 0; });
    } else {
      keep = std::any_of(ids.begin(), ids.end(),
                         [&](int64_t id) { return seen.count(id) > 0; });
    }
    if (keep) out.test_filtered.examples.push_back(ex);
  }
  return out;
}

}  // namespace ket
