#pragma once

#include <cstdint>
#include <vector>

#include "nn/modules.hpp"

namespace miscal::nn {

/// Adam with decoupled weight decay: p -= lr * (mhat/(sqrt(vhat)+eps) + wd*p).
class AdamW {
 public:
  explicit AdamW(std::vector<TensorRef> params, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  void step(double lr, double weight_decay);
  void zero_grad();

  std::int64_t step_count() const { return t_; }

  /// Moment buffers and step counter, for checkpoint/resume.
  void export_state(std::vector<std::pair<std::string, Tensor>>& out) const;
  void import_state(const std::vector<std::pair<std::string, Tensor>>& in);

 private:
  std::vector<TensorRef> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace miscal::nn
