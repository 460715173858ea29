#include "nn/adamw.hpp"

#include <cmath>
#include <stdexcept>

namespace miscal::nn {

AdamW::AdamW(std::vector<TensorRef> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const TensorRef& p : params_) {
    if (!p.trainable || p.grad == nullptr)
      throw std::invalid_argument("AdamW: non-trainable tensor " + p.name);
    m_.emplace_back(p.value->shape);
    v_.emplace_back(p.value->shape);
  }
}

void AdamW::step(double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* p = params_[i].value->ptr();
    const float* g = params_[i].grad->ptr();
    float* m = m_[i].ptr();
    float* v = v_[i].ptr();
    const std::size_t n = params_[i].value->numel();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g[k];
      const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
      const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      p[k] = static_cast<float>(p[k] - lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * p[k]));
    }
  }
}

void AdamW::zero_grad() {
  for (const TensorRef& p : params_) p.grad->zero();
}

void AdamW::export_state(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("adamw.m." + params_[i].name, m_[i]);
    out.emplace_back("adamw.v." + params_[i].name, v_[i]);
  }
  Tensor t({1});
  t.data[0] = static_cast<float>(t_);
  out.emplace_back("adamw.t", t);
}

void AdamW::import_state(const std::vector<std::pair<std::string, Tensor>>& in) {
  for (const auto& [name, tensor] : in) {
    if (name == "adamw.t") {
      t_ = static_cast<std::int64_t>(tensor.data.at(0));
      continue;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (name == "adamw.m." + params_[i].name) {
        if (tensor.numel() != m_[i].numel())
          throw std::runtime_error("AdamW state shape mismatch: " + name);
        m_[i] = tensor;
      } else if (name == "adamw.v." + params_[i].name) {
        if (tensor.numel() != v_[i].numel())
          throw std::runtime_error("AdamW state shape mismatch: " + name);
        v_[i] = tensor;
      }
    }
  }
}

}  // namespace miscal::nn
