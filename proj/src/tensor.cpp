#include "ket/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace ket {

std::string shape_str(const Shape& shape) {
  std::ostringstream ss;
  ss << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) ss << ", ";
    ss << shape[i];
  }
  ss << "]";
  return ss.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (const int64_t d : shape) n *= d;
  return n;
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  for (const int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in " + shape_str(shape));
  }
  s_ = std::make_shared<Storage>();
  s_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values cannot fill shape " + shape_str(shape));
  }
  s_ = std::make_shared<Storage>();
  s_->shape = std::move(shape);
  s_->data = std::move(values);
  s_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const int64_t n = static_cast<int64_t>(values.size());
  return Tensor(Shape{1, n}, std::move(values), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  return Tensor(std::move(shape), v, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double mean, double stddev, bool requires_grad) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (double& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void Tensor::require_defined() const {
  if (!s_) throw std::logic_error("tensor: use of an undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined();
  return s_->shape;
}

int64_t Tensor::dim(size_t i) const {
  const Shape& sh = shape();
  if (i >= sh.size()) throw std::out_of_range("tensor: dim index out of range");
  return sh[i];
}

int64_t Tensor::numel() const {
  require_defined();
  return static_cast<int64_t>(s_->data.size());
}

int64_t Tensor::rows() const {
  if (!is_matrix()) throw std::invalid_argument("tensor: rows() on shape " + shape_str(shape()));
  return s_->shape[0];
}

int64_t Tensor::cols() const {
  if (!is_matrix()) throw std::invalid_argument("tensor: cols() on shape " + shape_str(shape()));
  return s_->shape[1];
}

std::vector<double>& Tensor::data() {
  require_defined();
  return s_->data;
}

const std::vector<double>& Tensor::data() const {
  require_defined();
  return s_->data;
}

double Tensor::value() const {
  if (!is_scalar()) throw std::invalid_argument("tensor: value() on non-scalar shape " + shape_str(shape()));
  return s_->data[0];
}

double Tensor::at(int64_t r, int64_t c) const {
  if (!is_matrix()) throw std::invalid_argument("tensor: at() on shape " + shape_str(shape()));
  if (r < 0 || r >= rows() || c < 0 || c >= cols()) {
    throw std::out_of_range("tensor: at(" + std::to_string(r) + ", " + std::to_string(c) +
                            ") outside " + shape_str(shape()));
  }
  return s_->data[static_cast<size_t>(r * cols() + c)];
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  require_defined();
  s_->requires_grad = rg;
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  require_defined();
  if (s_->grad.empty()) throw std::logic_error("tensor: gradient has not been accumulated");
  return s_->grad;
}

std::vector<double>& Tensor::grad_acc() {
  require_defined();
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
  return s_->grad;
}

void Tensor::zero_grad() {
  require_defined();
  s_->grad.clear();
}

bool Tensor::all_finite() const {
  require_defined();
  for (const double v : s_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::detached() const {
  require_defined();
  return Tensor(s_->shape, s_->data, false);
}

Tensor Tensor::clone() const {
  require_defined();
  return Tensor(s_->shape, s_->data, s_->requires_grad);
}

// ---- Tape ------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
std::atomic<uint64_t> g_tape_counter{0};
}  // namespace

Tape::Tape() {
  id_ = ++g_tape_counter;
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* op, Tensor& out, std::function<void()> pull) {
  out.s_->requires_grad = true;
  out.s_->tape_id = id_;
  out.s_->node_id = static_cast<int64_t>(nodes_.size());
  nodes_.push_back(Node{op, std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  }
  if (loss.s_->tape_id != id_ || loss.s_->node_id < 0) {
    throw std::logic_error("backward: loss was not produced on this tape");
  }
  if (consumed_) {
    throw std::logic_error("backward: tape already consumed; call reset() before reusing it");
  }
  consumed_ = true;
  Tensor seed = loss;
  seed.grad_acc()[0] += 1.0;
  for (size_t i = nodes_.size(); i > 0; --i) nodes_[i - 1].pull();
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

bool grad_tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// ---- op helpers ------------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (!t.is_matrix()) {
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                shape_str(t.shape()));
  }
}

// Accumulates src into dst's grad buffer.
void acc_grad(Tensor& t, const std::vector<double>& src) {
  std::vector<double>& g = t.grad_acc();
  for (size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

struct AxisView {
  int64_t outer, len, inner;
};

AxisView axis_view(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(shape));
  }
  AxisView v{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool row_bcast = !same && a.is_matrix() && b.is_matrix() && b.rows() == 1 &&
                         b.cols() == a.cols();
  if (!same && !row_bcast) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out(a.shape(), a.data());
  std::vector<double>& o = out.data();
  const std::vector<double>& bd = b.data();
  if (same) {
    for (size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  } else {
    const size_t n = bd.size();
    for (size_t i = 0; i < o.size(); ++i) o[i] += bd[i % n];
  }
  if (grad_tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record("add", out, [ac, bc, oc, same]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      if (ac.requires_grad()) acc_grad(ac, g);
      if (bc.requires_grad()) {
        std::vector<double>& gb = bc.grad_acc();
        if (same) {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        } else {
          const size_t n = gb.size();
          for (size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out(a.shape(), a.data());
  std::vector<double>& o = out.data();
  const std::vector<double>& bd = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  if (grad_tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record("mul", out, [ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      if (ac.requires_grad()) {
        std::vector<double>& ga = ac.grad_acc();
        const std::vector<double>& bd2 = bc.data();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd2[i];
      }
      if (bc.requires_grad()) {
        std::vector<double>& gb = bc.grad_acc();
        const std::vector<double>& ad2 = ac.data();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad2[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape(), a.data());
  for (double& v : out.data()) v *= c;
  if (grad_tracking({&a})) {
    Tensor ac = a, oc = out;
    Tape::active()->record("scale", out, [ac, oc, c]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      std::vector<double>& ga = ac.grad_acc();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

// ---- matmul / transpose ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(Shape{m, n}, 0.0);
  {
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t p = 0; p < k; ++p) {
        const double av = ad[i * k + p];
        if (av == 0.0) continue;
        const double* brow = bd + p * n;
        double* orow = od + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (grad_tracking({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record("matmul", out, [ac, bc, oc, m, k, n]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad().data();
      if (ac.requires_grad()) {
        double* ga = ac.grad_acc().data();
        const double* bd = bc.data().data();
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* grow = g + i * n;
            const double* brow = bd + p * n;
            for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + p] += s;
          }
        }
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad_acc().data();
        const double* ad = ac.data().data();
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (int64_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            if (av == 0.0) continue;
            double* gbrow = gb + p * n;
            for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const int64_t m = a.rows(), n = a.cols();
  Tensor out(Shape{n, m}, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      out.data()[static_cast<size_t>(j * m + i)] = a.data()[static_cast<size_t>(i * n + j)];
    }
  }
  if (grad_tracking({&a})) {
    Tensor ac = a, oc = out;
    Tape::active()->record("transpose", out, [ac, oc, m, n]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      std::vector<double>& ga = ac.grad_acc();
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
          ga[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
        }
      }
    });
  }
  return out;
}

// ---- softmax family --------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  Tensor out(x.shape(), x.data());
  std::vector<double>& o = out.data();
  for (int64_t a = 0; a < v.outer; ++a) {
    for (int64_t c = 0; c < v.inner; ++c) {
      const int64_t base = a * v.len * v.inner + c;
      double mx = o[static_cast<size_t>(base)];
      for (int64_t i = 1; i < v.len; ++i) mx = std::max(mx, o[static_cast<size_t>(base + i * v.inner)]);
      double z = 0.0;
      for (int64_t i = 0; i < v.len; ++i) {
        const size_t idx = static_cast<size_t>(base + i * v.inner);
        o[idx] = std::exp(o[idx] - mx);
        z += o[idx];
      }
      for (int64_t i = 0; i < v.len; ++i) o[static_cast<size_t>(base + i * v.inner)] /= z;
    }
  }
  if (grad_tracking({&x})) {
    Tensor xc = x, oc = out;
    Tape::active()->record("softmax", out, [xc, oc, v]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      const std::vector<double>& y = oc.data();
      std::vector<double>& gx = xc.grad_acc();
      for (int64_t a = 0; a < v.outer; ++a) {
        for (int64_t c = 0; c < v.inner; ++c) {
          const int64_t base = a * v.len * v.inner + c;
          double dot = 0.0;
          for (int64_t i = 0; i < v.len; ++i) {
            const size_t idx = static_cast<size_t>(base + i * v.inner);
            dot += g[idx] * y[idx];
          }
          for (int64_t i = 0; i < v.len; ++i) {
            const size_t idx = static_cast<size_t>(base + i * v.inner);
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis, "log_softmax");
  Tensor out(x.shape(), x.data());
  std::vector<double>& o = out.data();
  for (int64_t a = 0; a < v.outer; ++a) {
    for (int64_t c = 0; c < v.inner; ++c) {
      const int64_t base = a * v.len * v.inner + c;
      double mx = o[static_cast<size_t>(base)];
      for (int64_t i = 1; i < v.len; ++i) mx = std::max(mx, o[static_cast<size_t>(base + i * v.inner)]);
      double z = 0.0;
      for (int64_t i = 0; i < v.len; ++i) z += std::exp(o[static_cast<size_t>(base + i * v.inner)] - mx);
      const double lse = mx + std::log(z);
      for (int64_t i = 0; i < v.len; ++i) o[static_cast<size_t>(base + i * v.inner)] -= lse;
    }
  }
  if (grad_tracking({&x})) {
    Tensor xc = x, oc = out;
    Tape::active()->record("log_softmax", out, [xc, oc, v]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      const std::vector<double>& y = oc.data();
      std::vector<double>& gx = xc.grad_acc();
      for (int64_t a = 0; a < v.outer; ++a) {
        for (int64_t c = 0; c < v.inner; ++c) {
          const int64_t base = a * v.len * v.inner + c;
          double gsum = 0.0;
          for (int64_t i = 0; i < v.len; ++i) gsum += g[static_cast<size_t>(base + i * v.inner)];
          for (int64_t i = 0; i < v.len; ++i) {
            const size_t idx = static_cast<size_t>(base + i * v.inner);
            gx[idx] += g[idx] - std::exp(y[idx]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

// ---- layer norm ------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape& sh = x.shape();
  if (sh.empty()) throw std::invalid_argument("layer_norm: scalar input");
  const int64_t d = sh.back();
  const int64_t rows = x.numel() / d;
  const Shape expect{1, d};
  if (gamma.shape() != expect || beta.shape() != expect) {
    throw std::invalid_argument("layer_norm: gamma/beta must be [1, " + std::to_string(d) +
                                "], got " + shape_str(gamma.shape()) + " and " +
                                shape_str(beta.shape()));
  }
  Tensor out(sh, 0.0);
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_std(static_cast<size_t>(rows));
  {
    const std::vector<double>& xd = x.data();
    const std::vector<double>& gd = gamma.data();
    const std::vector<double>& bd = beta.data();
    std::vector<double>& od = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const size_t base = static_cast<size_t>(r * d);
      double mean = 0.0;
      for (int64_t i = 0; i < d; ++i) mean += xd[base + static_cast<size_t>(i)];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        const double c = xd[base + static_cast<size_t>(i)] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<size_t>(r)] = is;
      for (int64_t i = 0; i < d; ++i) {
        const size_t idx = base + static_cast<size_t>(i);
        xhat[idx] = (xd[idx] - mean) * is;
        od[idx] = gd[static_cast<size_t>(i)] * xhat[idx] + bd[static_cast<size_t>(i)];
      }
    }
  }
  if (grad_tracking({&x, &gamma, &beta})) {
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    Tape::active()->record("layer_norm", out,
                           [xc, gc, bc, oc, xhat = std::move(xhat), inv_std = std::move(inv_std),
                            rows, d]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      const std::vector<double>& gd = gc.data();
      for (int64_t r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r * d);
        if (xc.requires_grad()) {
          double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
          for (int64_t i = 0; i < d; ++i) {
            const size_t idx = base + static_cast<size_t>(i);
            const double dxh = g[idx] * gd[static_cast<size_t>(i)];
            m1 += dxh;
            m2 += dxh * xhat[idx];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          std::vector<double>& gx = xc.grad_acc();
          const double is = inv_std[static_cast<size_t>(r)];
          for (int64_t i = 0; i < d; ++i) {
            const size_t idx = base + static_cast<size_t>(i);
            const double dxh = g[idx] * gd[static_cast<size_t>(i)];
            gx[idx] += is * (dxh - m1 - xhat[idx] * m2);
          }
        }
        if (gc.requires_grad()) {
          std::vector<double>& gg = gc.grad_acc();
          for (int64_t i = 0; i < d; ++i) {
            const size_t idx = base + static_cast<size_t>(i);
            gg[static_cast<size_t>(i)] += g[idx] * xhat[idx];
          }
        }
        if (bc.requires_grad()) {
          std::vector<double>& gb = bc.grad_acc();
          for (int64_t i = 0; i < d; ++i) {
            gb[static_cast<size_t>(i)] += g[base + static_cast<size_t>(i)];
          }
        }
      }
    });
  }
  return out;
}

// ---- gelu ------------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape(), x.data());
  for (double& v : out.data()) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  if (grad_tracking({&x})) {
    Tensor xc = x, oc = out;
    Tape::active()->record("gelu", out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      const std::vector<double>& xd = xc.data();
      std::vector<double>& gx = xc.grad_acc();
      for (size_t i = 0; i < g.size(); ++i) {
        const double v = xd[i];
        const double u = kGeluC * (v + kGeluA * v * v * v);
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
      }
    });
  }
  return out;
}

// ---- dropout ---------------------------------------------------------------

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(static_cast<size_t>(x.numel()));
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out(x.shape(), x.data());
  {
    std::vector<double>& o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  }
  if (grad_tracking({&x})) {
    Tensor xc = x, oc = out;
    Tape::active()->record("dropout", out, [xc, oc, mask = std::move(mask)]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      std::vector<double>& gx = xc.grad_acc();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

// ---- cross entropy ---------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  require_matrix(logits, "cross_entropy");
  const int64_t b = logits.rows(), c = logits.cols();
  if (static_cast<int64_t>(labels.size()) != b) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(b) + " logit rows");
  }
  std::vector<double> probs(logits.data());
  double loss = 0.0;
  for (int64_t r = 0; r < b; ++r) {
    const int64_t y = labels[static_cast<size_t>(r)];
    if (y < 0 || y >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " at row " +
                              std::to_string(r) + " outside [0, " + std::to_string(c) + ")");
    }
    const size_t base = static_cast<size_t>(r * c);
    double mx = probs[base];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, probs[base + static_cast<size_t>(j)]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      probs[base + static_cast<size_t>(j)] = std::exp(probs[base + static_cast<size_t>(j)] - mx);
      z += probs[base + static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < c; ++j) probs[base + static_cast<size_t>(j)] /= z;
    loss -= std::log(probs[base + static_cast<size_t>(y)]);
  }
  loss /= static_cast<double>(b);
  Tensor out = Tensor::scalar(loss);
  if (grad_tracking({&logits})) {
    Tensor lc = logits, oc = out;
    Tape::active()->record("cross_entropy", out,
                           [lc, oc, probs = std::move(probs), labels, b, c]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0] / static_cast<double>(b);
      std::vector<double>& gl = lc.grad_acc();
      for (int64_t r = 0; r < b; ++r) {
        const size_t base = static_cast<size_t>(r * c);
        for (int64_t j = 0; j < c; ++j) {
          const double onehot = j == labels[static_cast<size_t>(r)] ? 1.0 : 0.0;
          gl[base + static_cast<size_t>(j)] += g * (probs[base + static_cast<size_t>(j)] - onehot);
        }
      }
    });
  }
  return out;
}

// ---- shape ops -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (const double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (grad_tracking({&x})) {
    Tensor xc = x, oc = out;
    Tape::active()->record("sum", out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad()[0];
      std::vector<double>& gx = xc.grad_acc();
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  }
  Tensor out(std::move(shape), x.data());
  if (grad_tracking({&x})) {
    Tensor xc = x, oc = out;
    Tape::active()->record("reshape", out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      acc_grad(xc, oc.grad());
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int64_t c = parts.front().cols();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != c) {
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()) +
                                  " vs expected " + std::to_string(c) + " columns");
    }
    total += p.rows();
  }
  Tensor out(Shape{total, c}, 0.0);
  {
    size_t off = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<long>(off));
      off += p.data().size();
    }
  }
  bool track = false;
  if (Tape::active()) {
    for (const Tensor& p : parts) track = track || p.requires_grad();
  }
  if (track) {
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    Tape::active()->record("concat_rows", out, [pc, oc]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      size_t off = 0;
      for (Tensor& p : pc) {
        const size_t n = p.data().size();
        if (p.requires_grad()) {
          std::vector<double>& gp = p.grad_acc();
          for (size_t i = 0; i < n; ++i) gp[i] += g[off + i];
        }
        off += n;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int64_t start, int64_t count) {
  require_matrix(x, "slice_rows");
  if (start < 0 || count <= 0 || start + count > x.rows()) {
    throw std::out_of_range("slice_rows: rows [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") outside " + shape_str(x.shape()));
  }
  const int64_t c = x.cols();
  Tensor out(Shape{count, c}, 0.0);
  std::copy(x.data().begin() + start * c, x.data().begin() + (start + count) * c,
            out.data().begin());
  if (grad_tracking({&x})) {
    Tensor xc = x, oc = out;
    Tape::active()->record("slice_rows", out, [xc, oc, start, c]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      std::vector<double>& gx = xc.grad_acc();
      const size_t off = static_cast<size_t>(start * c);
      for (size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids) {
  require_matrix(table, "embedding_lookup");
  if (ids.empty()) throw std::invalid_argument("embedding_lookup: empty id list");
  const int64_t v = table.rows(), d = table.cols();
  Tensor out(Shape{static_cast<int64_t>(ids.size()), d}, 0.0);
  for (size_t r = 0; r < ids.size(); ++r) {
    const int64_t id = ids[r];
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside [0, " +
                              std::to_string(v) + ")");
    }
    std::copy(table.data().begin() + id * d, table.data().begin() + (id + 1) * d,
              out.data().begin() + static_cast<long>(r) * d);
  }
  if (grad_tracking({&table})) {
    Tensor tc = table, oc = out;
    Tape::active()->record("embedding_lookup", out, [tc, oc, ids, d]() mutable {
      if (!oc.has_grad()) return;
      const std::vector<double>& g = oc.grad();
      std::vector<double>& gt = tc.grad_acc();
      for (size_t r = 0; r < ids.size(); ++r) {
        const size_t src = r * static_cast<size_t>(d);
        const size_t dst = static_cast<size_t>(ids[r]) * static_cast<size_t>(d);
        for (int64_t i = 0; i < d; ++i) {
          gt[dst + static_cast<size_t>(i)] += g[src + static_cast<size_t>(i)];
        }
      }
    });
  }
  return out;
}

// ---- finite differences ----------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h, int64_t max_coords) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");
  const Tensor probe = x.detached();
  const double y0 = f(probe).value();
  const double y1 = f(probe).value();
  if (y0 != y1) {
    throw std::logic_error("finite_diff_check: f is not deterministic (two evaluations differ)");
  }

  Tensor xg = x.detached();
  xg.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor y = f(xg);
    tape.backward(y);
    analytic = xg.has_grad() ? xg.grad() : std::vector<double>(static_cast<size_t>(x.numel()), 0.0);
  }

  const int64_t n = x.numel();
  std::vector<int64_t> coords;
  if (max_coords <= 0 || max_coords >= n) {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  } else {
    coords.reserve(static_cast<size_t>(max_coords));
    for (int64_t j = 0; j < max_coords; ++j) coords.push_back(j * n / max_coords);
  }

  double worst = 0.0;
  for (const int64_t i : coords) {
    Tensor xp = x.detached();
    xp.data()[static_cast<size_t>(i)] += h;
    const double fp = f(xp).value();
    Tensor xm = x.detached();
    xm.data()[static_cast<size_t>(i)] -= h;
    const double fm = f(xm).value();
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<size_t>(i)];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ket
