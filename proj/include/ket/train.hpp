#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ket/dataset.hpp"
#include "ket/tasks.hpp"

namespace ket {

struct TrainConfig {
  double lr = 5e-6;
  int64_t batch_size = 8;
  int64_t epochs = 10;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  double grad_clip = 1.0;  // global gradient norm; <= 0 disables

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct EvalStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  int64_t count = 0;
};

struct EpochMetrics {
  int64_t epoch = 0;            // 1-based
  double train_loss = 0.0;      // recomputed over the whole set after the epoch
  double train_accuracy = 0.0;
  double eval_accuracy = -1.0;  // -1 when no evaluation set was given
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
};

// Mean per-example loss and argmax accuracy under the current parameters.
// Read-only; jobs > 1 fans examples out across threads.
EvalStats evaluate(TaskModel& m, const Dataset& data, int64_t jobs = 1);

// Epochs of minibatch AdamW on the mean per-example loss. Example order is
// reshuffled each epoch and dropout draws come from their own stream, both
// seeded from cfg.seed, so (seed, data, config) fixes the whole trajectory.
TrainResult train(TaskModel& m, const Dataset& data, const Dataset* eval_data,
                  const TrainConfig& cfg);

std::string metrics_tsv(const TrainResult& r);

}  // namespace ket
