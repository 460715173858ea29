#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "nn/tensor.hpp"

namespace miscal::nn {

/// Named view into a module's tensors. Trainable entries have a grad buffer;
/// buffers (e.g. batch-norm running stats) do not.
struct TensorRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;  // null for non-trainable buffers
  bool trainable = false;
};

using TensorVisitor = std::function<void(const TensorRef&)>;

class Module {
 public:
  virtual ~Module() = default;
  /// train=true saves whatever backward() needs; train=false saves nothing.
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void visit(const std::string& prefix, const TensorVisitor& fn) = 0;
  /// Releases cached activations.
  virtual void clear_cache() = 0;
};

class Conv2d final : public Module {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding, bool bias);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, const TensorVisitor& fn) override;
  void clear_cache() override;

  void init_kaiming(miscal::Rng& rng);
  /// First layers set this; their backward skips the input-gradient GEMM.
  void set_input_grad_needed(bool needed) { input_grad_needed_ = needed; }

  Tensor weight;  // (out, in, k, k)
  Tensor bias;    // (out) when has_bias_
  Tensor weight_grad;
  Tensor bias_grad;

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return kernel_; }

 private:
  void im2col(const float* src, int h, int w, int oh, int ow, float* cols) const;
  void col2im(const float* cols, int h, int w, int oh, int ow, float* dst) const;

  int in_ch_, out_ch_, kernel_, stride_, padding_;
  bool has_bias_;
  bool input_grad_needed_ = true;
  Tensor saved_input_;
  std::vector<float> col_buffer_;
};

class BatchNorm2d final : public Module {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, const TensorVisitor& fn) override;
  void clear_cache() override;

  Tensor gamma, beta;
  Tensor gamma_grad, beta_grad;
  Tensor running_mean, running_var;

 private:
  int channels_;
  double eps_, momentum_;
  Tensor saved_xhat_;
  std::vector<double> saved_invstd_;
};

class ReLU final : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string&, const TensorVisitor&) override {}
  void clear_cache() override;

 private:
  Tensor saved_output_;
};

class MaxPool2d final : public Module {
 public:
  MaxPool2d(int kernel, int stride, int padding);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string&, const TensorVisitor&) override {}
  void clear_cache() override;

 private:
  int kernel_, stride_, padding_;
  std::vector<int> input_shape_;
  std::vector<std::int32_t> argmax_;
};

class Linear final : public Module {
 public:
  Linear(int in_features, int out_features);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, const TensorVisitor& fn) override;
  void clear_cache() override;

  void init_kaiming(miscal::Rng& rng);

  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
  Tensor weight_grad, bias_grad;

 private:
  int in_features_, out_features_;
  Tensor saved_input_;
};

class GlobalAvgPool final : public Module {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string&, const TensorVisitor&) override {}
  void clear_cache() override;

 private:
  std::vector<int> input_shape_;
};

/// y = 1 / (1 + exp(-x)), elementwise.
Tensor sigmoid(const Tensor& x);

/// Binary cross-entropy on a probability, clamped to [1e-7, 1-1e-7].
double bce_loss(double prob, int label);

/// Mean BCE over a batch of logits with dL/dlogit = (p - y) / n. Returns the
/// loss and writes the logit gradient; numerically stable (log1p form).
double bce_with_logits(const Tensor& logits, const std::vector<int>& labels, Tensor* grad);

}  // namespace miscal::nn
