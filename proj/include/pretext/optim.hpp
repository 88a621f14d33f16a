#pragma once

#include <cstdint>
#include <vector>

#include "pretext/tensor.hpp"

namespace pretext {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;  // added outside the square root
};

// Adam with bias correction: m_hat = m/(1-b1^t), v_hat = v/(1-b2^t),
// p -= lr * m_hat / (sqrt(v_hat) + eps). A parameter whose grad buffer is
// still empty is treated as having a zero gradient; its moments decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  void zero_grad() { pretext::zero_grad(params_); }
  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace pretext
