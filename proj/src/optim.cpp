#include "pretext/optim.hpp"

#include <cmath>

#include "pretext/error.hpp"

namespace pretext {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.lr > 0.0f)) raise<ConfigError>("adam: lr must be positive");
  if (!(cfg.beta1 >= 0.0f && cfg.beta1 < 1.0f && cfg.beta2 >= 0.0f && cfg.beta2 < 1.0f)) {
    raise<ConfigError>("adam: betas must lie in [0, 1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.defined()) raise<ValueError>("adam: undefined parameter");
    if (!p.requires_grad()) {
      raise<ValueError>("adam: parameter '", p.name(), "' does not require grad");
    }
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    float* w = p.data().data();
    const auto& grad = p.grad();
    const int64_t n = p.numel();
    float* m = m_[k].data();
    float* v = v_[k].data();
    for (int64_t i = 0; i < n; ++i) {
      const float g = grad.empty() ? 0.0f : grad[static_cast<size_t>(i)];
      if (!std::isfinite(g)) {
        raise<NumericError>("adam: non-finite gradient in parameter '", p.name(), "' at index ", i);
      }
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
      const float mhat = static_cast<float>(m[i] / bc1);
      const float vhat = static_cast<float>(v[i] / bc2);
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace pretext
