#pragma once

#include <cstdint>
#include <vector>

#include "ket/tensor.hpp"

namespace ket {

struct AdamWOptions {
  double lr = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
};

// AdamW with bias correction and decoupled weight decay. A parameter that
// has no gradient buffer when step() runs is skipped entirely: no moment
// decay and no weight decay. A present all-zero buffer takes the full
// update path, so decay-only steps are expressible.
class AdamW {
 public:
  explicit AdamW(NamedParams params, AdamWOptions opts = {});

  const AdamWOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

  void zero_grad();

  // One update from the gradients currently on the parameters. Returns the
  // global gradient norm before clipping. Throws on a non-finite gradient,
  // naming the parameter.
  double step();

  int64_t step_count() const { return t_; }

 private:
  NamedParams params_;
  AdamWOptions opts_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace ket
