#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ket/checkpoint.hpp"
#include "ket/dataset.hpp"
#include "ket/kb.hpp"
#include "ket/tasks.hpp"

namespace ket {

// Per-layer L1 distance between two checkpoints over one parameter family.
struct DriftReport {
  std::string pattern;
  // (layer, L1) ascending by layer; matched parameters without a layer
  // index in their name are pooled under layer -1.
  std::vector<std::pair<int64_t, double>> per_layer;
  double total = 0.0;
};

// Both checkpoints must have identical structure (names and shapes, same
// order); the first divergence is named. `pattern` is a glob over
// parameter names, e.g. "text.*ffn.w_in".
DriftReport param_drift(const Checkpoint& before, const Checkpoint& after,
                        const std::string& pattern);

std::string drift_tsv(const DriftReport& r);

struct InfluenceRecord {
  int64_t entry_id = 0;
  double influence = 0.0;  // Euclidean distance between probability vectors
  int64_t rank = 0;        // 1 = most influential; ties broken by id
};

// Leave-one-out influence of each real candidate on the example's
// predicted probabilities. The candidate set is pinned to
// example_candidate_ids(m, ex) for every forward, and the null entry is
// never removed. Needs a knowledge model and at least one real candidate.
std::vector<InfluenceRecord> influence(TaskModel& m, const Example& ex);

std::string influence_tsv(const std::vector<InfluenceRecord>& records);

enum class OverlapRule { subset, any_overlap };

struct LowResourceSplit {
  Dataset train_k;
  Dataset test_filtered;
};

// Seeded k-example training sample plus the test examples whose real
// candidates were covered by it: under `subset`, a nonempty candidate set
// fully contained in the union over train_k; under `any_overlap`, any
// shared candidate.
LowResourceSplit low_resource_split(const Dataset& train, const Dataset& test, int64_t k,
                                    uint64_t seed, const CommonsenseKB& kb, int64_t window,
                                    int64_t n_max, OverlapRule rule = OverlapRule::subset);

}  // namespace ket
