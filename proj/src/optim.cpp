#include "ket/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ket {

AdamW::AdamW(NamedParams params, AdamWOptions opts)
    : params_(std::move(params)), opts_(opts) {
  if (opts_.lr <= 0.0) throw std::invalid_argument("adamw: learning rate must be positive");
  if (opts_.eps <= 0.0) throw std::invalid_argument("adamw: eps must be positive");
  if (opts_.beta1 < 0.0 || opts_.beta1 >= 1.0 || opts_.beta2 < 0.0 || opts_.beta2 >= 1.0) {
    throw std::invalid_argument("adamw: betas must lie in [0, 1)");
  }
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    const size_t n = static_cast<size_t>(params_[i].second->numel());
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t->zero_grad();
}

double AdamW::step() {
  double sq_norm = 0.0;
  for (auto& [name, t] : params_) {
    if (!t->has_grad()) continue;
    for (double g : t->grad()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adamw: non-finite gradient in parameter '" + name + "'");
      }
      sq_norm += g * g;
    }
  }
  const double norm = std::sqrt(sq_norm);
  double scale = 1.0;
  if (opts_.max_grad_norm > 0.0 && norm > opts_.max_grad_norm) {
    scale = opts_.max_grad_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor* t = params_[i].second;
    if (!t->has_grad()) continue;
    const std::vector<double>& g = t->grad();
    std::vector<double>& x = t->data();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < x.size(); ++j) {
      const double gj = g[j] * scale;
      m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
      v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      x[j] -= opts_.lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * x[j]);
    }
  }
  return norm;
}

}  // namespace ket
