#pragma once

#include <cmath>
#include <vector>

#include "nn/layers.hpp"

namespace hgd::nn {

// Adam with bias correction; one state slot per parameter array.
class Adam {
public:
  explicit Adam(std::vector<ParamRef> params, float lr = 1e-3f,
                float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
        eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].value->size(), 0.f);
      v_[i].assign(params_[i].value->size(), 0.f);
    }
  }

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

  void step() {
    ++t_;
    float bc1 = 1.f - std::pow(beta1_, float(t_));
    float bc2 = 1.f - std::pow(beta2_, float(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = *params_[i].value;
      auto& grad = *params_[i].grad;
      for (std::size_t j = 0; j < value.size(); ++j) {
        float g = grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.f - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.f - beta2_) * g * g;
        float mhat = m_[i][j] / bc1;
        float vhat = v_[i][j] / bc2;
        value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() { zero_grads(params_); }

private:
  std::vector<ParamRef> params_;
  float lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace hgd::nn
