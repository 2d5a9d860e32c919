#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ket/rng.hpp"

namespace ket {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

class Tensor;
// Stable, ordered view of a model's parameters; pointers stay valid for the
// lifetime of the owning parameter structs.
using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

class Tape;

// Dense row-major f64 tensor. Handles share storage; values are treated as
// immutable once a tensor has entered a forward graph, the gradient buffer
// is the only slot written afterwards.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double mean, double stddev,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(size_t i) const;
  int64_t numel() const;
  bool is_scalar() const { return defined() && numel() == 1; }
  bool is_matrix() const { return defined() && shape().size() == 2; }
  int64_t rows() const;
  int64_t cols() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double value() const;  // single-element read; contract: numel() == 1
  double at(int64_t r, int64_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& grad_acc();  // allocates a zeroed buffer on demand
  void zero_grad();

  bool all_finite() const;

  Tensor detached() const;  // deep copy of values, no grad tracking
  Tensor clone() const;     // deep copy keeping requires_grad

  const void* storage_id() const { return s_.get(); }
  uint64_t produced_by_tape() const { return s_ ? s_->tape_id : 0; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    uint64_t tape_id = 0;  // tape that produced this tensor; 0 for leaves
    int64_t node_id = -1;
  };
  std::shared_ptr<Storage> s_;
  void require_defined() const;
  friend class Tape;
};

// Append-only reverse-mode tape. Constructing a Tape makes it the thread's
// active tape; destruction restores the previous one. One tape has one
// writer thread; concurrent forward evaluation is safe only when each
// thread uses its own tape (or none, for inference).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  size_t size() const { return nodes_.size(); }
  uint64_t id() const { return id_; }
  bool consumed() const { return consumed_; }

  // Reverse accumulation from a scalar loss produced on this tape.
  // A second call without reset() is rejected.
  void backward(const Tensor& loss);
  void reset();

  // Used by op implementations: marks `out` as produced by this tape and
  // appends the node that pulls gradients back into the op's inputs.
  void record(const char* op, Tensor& out, std::function<void()> pull);

 private:
  struct Node {
    const char* op;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
  uint64_t id_ = 0;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// True when an op with these inputs should record a node.
bool grad_tracking(std::initializer_list<const Tensor*> inputs);

// ---- differentiable ops ----------------------------------------------------

// Elementwise with equal shapes, or b broadcast as a [1 x n] row over [m x n].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // equal shapes only
Tensor scale(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// Normalizes over the last dimension; gamma/beta are [1 x d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-12);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);

// Inverted dropout with keep-scale 1/(1-rate); rate 0 is an exact pass-through.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Mean negative log-likelihood over rows of [batch x classes] logits.
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t start, int64_t count);
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids);

// ---- gradient checking -----------------------------------------------------

// Central finite differences against backward() for a scalar-valued f.
// Checks every coordinate of x, or an evenly spaced subset when max_coords
// is positive. f is evaluated twice up front; a non-deterministic f (for
// example with live dropout) is rejected. Returns the max relative error.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double h = 1e-5,
                         int64_t max_coords = -1);

}  // namespace ket
