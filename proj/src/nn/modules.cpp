#include "nn/modules.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace miscal::nn {

namespace {
int conv_out_dim(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}
}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding, bool bias)
    : weight({out_ch, in_ch, kernel, kernel}),
      weight_grad({out_ch, in_ch, kernel, kernel}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias) {
  if (has_bias_) {
    this->bias = Tensor({out_ch});
    bias_grad = Tensor({out_ch});
  }
}

void Conv2d::init_kaiming(miscal::Rng& rng) {
  const double fan_in = static_cast<double>(in_ch_) * kernel_ * kernel_;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (float& w : weight.data) w = static_cast<float>(rng.normal() * stddev);
  if (has_bias_) bias.zero();
}

void Conv2d::im2col(const float* src, int h, int w, int oh, int ow, float* cols) const {
  // cols is (in*k*k) x (oh*ow), row-major
  const int positions = oh * ow;
  for (int c = 0; c < in_ch_; ++c) {
    const float* plane = src + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        float* row = cols + static_cast<std::size_t>((c * kernel_ + ki) * kernel_ + kj) * positions;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - padding_ + ki;
          float* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, sizeof(float) * ow);
            continue;
          }
          const float* srow = plane + static_cast<std::size_t>(iy) * w;
          int ox = 0;
          // leading out-of-bounds columns
          for (; ox < ow; ++ox) {
            const int ix = ox * stride_ - padding_ + kj;
            if (ix >= 0) break;
            dst[ox] = 0.0f;
          }
          if (stride_ == 1) {
            int ix = ox - padding_ + kj;
            int run = std::min(ow - ox, w - ix);
            if (run > 0) {
              std::memcpy(dst + ox, srow + ix, sizeof(float) * run);
              ox += run;
            }
          } else {
            for (; ox < ow; ++ox) {
              const int ix = ox * stride_ - padding_ + kj;
              if (ix >= w) break;
              dst[ox] = srow[ix];
            }
          }
          for (; ox < ow; ++ox) dst[ox] = 0.0f;
        }
      }
    }
  }
}

void Conv2d::col2im(const float* cols, int h, int w, int oh, int ow, float* dst) const {
  const int positions = oh * ow;
  for (int c = 0; c < in_ch_; ++c) {
    float* plane = dst + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const float* row =
            cols + static_cast<std::size_t>((c * kernel_ + ki) * kernel_ + kj) * positions;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - padding_ + ki;
          if (iy < 0 || iy >= h) continue;
          float* drow = plane + static_cast<std::size_t>(iy) * w;
          const float* srow = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - padding_ + kj;
            if (ix < 0 || ix >= w) continue;
            drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, bool train) {
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (x.dim(1) != in_ch_) throw std::invalid_argument("Conv2d: channel mismatch");
  const int oh = conv_out_dim(h, kernel_, stride_, padding_);
  const int ow = conv_out_dim(w, kernel_, stride_, padding_);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("Conv2d: input too small");
  const int positions = oh * ow;
  const int kdim = in_ch_ * kernel_ * kernel_;

  Tensor out({n, out_ch_, oh, ow});
  col_buffer_.resize(static_cast<std::size_t>(kdim) * positions);
  for (int i = 0; i < n; ++i) {
    im2col(x.sample_ptr(i), h, w, oh, ow, col_buffer_.data());
    // (out_ch x kdim) * (kdim x positions)
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, out_ch_, positions, kdim, 1.0f,
                weight.ptr(), kdim, col_buffer_.data(), positions, 0.0f, out.sample_ptr(i),
                positions);
    if (has_bias_) {
      float* o = out.sample_ptr(i);
      for (int c = 0; c < out_ch_; ++c) {
        const float b = bias.data[c];
        float* oc = o + static_cast<std::size_t>(c) * positions;
        for (int p = 0; p < positions; ++p) oc[p] += b;
      }
    }
  }
  if (train) saved_input_ = x;
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = saved_input_;
  if (x.shape.empty()) throw std::logic_error("Conv2d::backward without forward(train=true)");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = grad_out.dim(2), ow = grad_out.dim(3);
  const int positions = oh * ow;
  const int kdim = in_ch_ * kernel_ * kernel_;

  Tensor grad_in;
  if (input_grad_needed_) grad_in = Tensor({n, in_ch_, h, w});
  std::vector<float> dcols(static_cast<std::size_t>(kdim) * positions);
  col_buffer_.resize(static_cast<std::size_t>(kdim) * positions);

  for (int i = 0; i < n; ++i) {
    // weight grad: gout (out,P) x colsᵀ (P,kdim), accumulated
    im2col(x.sample_ptr(i), h, w, oh, ow, col_buffer_.data());
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, out_ch_, kdim, positions, 1.0f,
                grad_out.sample_ptr(i), positions, col_buffer_.data(), positions, 1.0f,
                weight_grad.ptr(), kdim);
    if (has_bias_) {
      const float* g = grad_out.sample_ptr(i);
      for (int c = 0; c < out_ch_; ++c) {
        double s = 0.0;
        const float* gc = g + static_cast<std::size_t>(c) * positions;
        for (int p = 0; p < positions; ++p) s += gc[p];
        bias_grad.data[c] += static_cast<float>(s);
      }
    }
    if (input_grad_needed_) {
      // dcols = Wᵀ (kdim,out) x gout (out,P)
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kdim, positions, out_ch_, 1.0f,
                  weight.ptr(), kdim, grad_out.sample_ptr(i), positions, 0.0f, dcols.data(),
                  positions);
      col2im(dcols.data(), h, w, oh, ow, grad_in.sample_ptr(i));
    }
  }
  saved_input_ = Tensor();
  return grad_in;
}

void Conv2d::visit(const std::string& prefix, const TensorVisitor& fn) {
  fn({prefix + ".weight", &weight, &weight_grad, true});
  if (has_bias_) fn({prefix + ".bias", &bias, &bias_grad, true});
}

void Conv2d::clear_cache() {
  saved_input_ = Tensor();
  col_buffer_.clear();
  col_buffer_.shrink_to_fit();
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double eps, double momentum)
    : gamma({channels}),
      beta({channels}),
      gamma_grad({channels}),
      beta_grad({channels}),
      running_mean({channels}),
      running_var({channels}),
      channels_(channels),
      eps_(eps),
      momentum_(momentum) {
  gamma.fill(1.0f);
  running_var.fill(1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != channels_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t stride_n = static_cast<std::size_t>(c) * plane;
  Tensor out({n, c, h, w});

  if (train) {
    saved_xhat_ = Tensor({n, c, h, w});
    saved_invstd_.assign(c, 0.0);
    const double m = static_cast<double>(n) * plane;
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0.0, sumsq = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = x.ptr() + i * stride_n + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          sum += p[k];
          sumsq += static_cast<double>(p[k]) * p[k];
        }
      }
      const double mean = sum / m;
      double var = sumsq / m - mean * mean;
      if (var < 0.0) var = 0.0;
      const double invstd = 1.0 / std::sqrt(var + eps_);
      saved_invstd_[ch] = invstd;
      const float g = gamma.data[ch], b = beta.data[ch];
      for (int i = 0; i < n; ++i) {
        const float* p = x.ptr() + i * stride_n + ch * plane;
        float* xh = saved_xhat_.ptr() + i * stride_n + ch * plane;
        float* o = out.ptr() + i * stride_n + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const float v = static_cast<float>((p[k] - mean) * invstd);
          xh[k] = v;
          o[k] = g * v + b;
        }
      }
      const double unbiased = (m > 1.0) ? var * m / (m - 1.0) : var;
      running_mean.data[ch] =
          static_cast<float>((1.0 - momentum_) * running_mean.data[ch] + momentum_ * mean);
      running_var.data[ch] =
          static_cast<float>((1.0 - momentum_) * running_var.data[ch] + momentum_ * unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var.data[ch]) + eps_);
      const double mean = running_mean.data[ch];
      const float g = gamma.data[ch], b = beta.data[ch];
      const float scale = static_cast<float>(g * invstd);
      const float shift = static_cast<float>(b - g * mean * invstd);
      for (int i = 0; i < n; ++i) {
        const float* p = x.ptr() + i * stride_n + ch * plane;
        float* o = out.ptr() + i * stride_n + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) o[k] = scale * p[k] + shift;
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (saved_xhat_.shape.empty())
    throw std::logic_error("BatchNorm2d::backward without forward(train=true)");
  const int n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2), w = grad_out.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t stride_n = static_cast<std::size_t>(c) * plane;
  const double m = static_cast<double>(n) * plane;
  Tensor grad_in({n, c, h, w});

  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* dy = grad_out.ptr() + i * stride_n + ch * plane;
      const float* xh = saved_xhat_.ptr() + i * stride_n + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += dy[k];
        sum_dy_xhat += static_cast<double>(dy[k]) * xh[k];
      }
    }
    gamma_grad.data[ch] += static_cast<float>(sum_dy_xhat);
    beta_grad.data[ch] += static_cast<float>(sum_dy);
    const double scale = gamma.data[ch] * saved_invstd_[ch] / m;
    for (int i = 0; i < n; ++i) {
      const float* dy = grad_out.ptr() + i * stride_n + ch * plane;
      const float* xh = saved_xhat_.ptr() + i * stride_n + ch * plane;
      float* dx = grad_in.ptr() + i * stride_n + ch * plane;
      for (std::size_t k = 0; k < plane; ++k)
        dx[k] = static_cast<float>(scale * (m * dy[k] - sum_dy - xh[k] * sum_dy_xhat));
    }
  }
  saved_xhat_ = Tensor();
  return grad_in;
}

void BatchNorm2d::visit(const std::string& prefix, const TensorVisitor& fn) {
  fn({prefix + ".gamma", &gamma, &gamma_grad, true});
  fn({prefix + ".beta", &beta, &beta_grad, true});
  fn({prefix + ".running_mean", &running_mean, nullptr, false});
  fn({prefix + ".running_var", &running_var, nullptr, false});
}

void BatchNorm2d::clear_cache() {
  saved_xhat_ = Tensor();
  saved_invstd_.clear();
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x, bool train) {
  Tensor out = x;
  for (float& v : out.data)
    if (v < 0.0f) v = 0.0f;
  if (train) saved_output_ = out;
  return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  if (saved_output_.shape.empty()) throw std::logic_error("ReLU::backward without forward");
  Tensor grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.data.size(); ++i)
    if (saved_output_.data[i] <= 0.0f) grad_in.data[i] = 0.0f;
  saved_output_ = Tensor();
  return grad_in;
}

void ReLU::clear_cache() { saved_output_ = Tensor(); }

// ---------------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(int kernel, int stride, int padding)
    : kernel_(kernel), stride_(stride), padding_(padding) {}

Tensor MaxPool2d::forward(const Tensor& x, bool train) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = conv_out_dim(h, kernel_, stride_, padding_);
  const int ow = conv_out_dim(w, kernel_, stride_, padding_);
  Tensor out({n, c, oh, ow});
  if (train) {
    input_shape_ = x.shape;
    argmax_.assign(out.numel(), -1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = x.ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
      float* dst = out.ptr() + (static_cast<std::size_t>(i) * c + ch) * oplane;
      std::int32_t* am =
          train ? argmax_.data() + (static_cast<std::size_t>(i) * c + ch) * oplane : nullptr;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t best_idx = -1;
          for (int ki = 0; ki < kernel_; ++ki) {
            const int iy = oy * stride_ - padding_ + ki;
            if (iy < 0 || iy >= h) continue;
            for (int kj = 0; kj < kernel_; ++kj) {
              const int ix = ox * stride_ - padding_ + kj;
              if (ix < 0 || ix >= w) continue;
              const float v = src[static_cast<std::size_t>(iy) * w + ix];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int32_t>(iy) * w + ix;
              }
            }
          }
          dst[static_cast<std::size_t>(oy) * ow + ox] = best;
          if (am) am[static_cast<std::size_t>(oy) * ow + ox] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw std::logic_error("MaxPool2d::backward without forward");
  Tensor grad_in(input_shape_);
  const int n = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t oplane = static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3);
  const std::size_t plane =
      static_cast<std::size_t>(input_shape_[2]) * static_cast<std::size_t>(input_shape_[3]);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* g = grad_out.ptr() + (static_cast<std::size_t>(i) * c + ch) * oplane;
      const std::int32_t* am = argmax_.data() + (static_cast<std::size_t>(i) * c + ch) * oplane;
      float* d = grad_in.ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < oplane; ++k)
        if (am[k] >= 0) d[am[k]] += g[k];
    }
  }
  input_shape_.clear();
  argmax_.clear();
  return grad_in;
}

void MaxPool2d::clear_cache() {
  input_shape_.clear();
  argmax_.clear();
  argmax_.shrink_to_fit();
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in_features, int out_features)
    : weight({out_features, in_features}),
      bias({out_features}),
      weight_grad({out_features, in_features}),
      bias_grad({out_features}),
      in_features_(in_features),
      out_features_(out_features) {}

void Linear::init_kaiming(miscal::Rng& rng) {
  const double stddev = std::sqrt(2.0 / in_features_);
  for (float& w : weight.data) w = static_cast<float>(rng.normal() * stddev);
  bias.zero();
}

Tensor Linear::forward(const Tensor& x, bool train) {
  const int n = x.dim(0);
  if (x.dim(1) != in_features_) throw std::invalid_argument("Linear: feature mismatch");
  Tensor out({n, out_features_});
  // out = x (n,in) * Wᵀ (in,out)
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, out_features_, in_features_, 1.0f,
              x.ptr(), in_features_, weight.ptr(), in_features_, 0.0f, out.ptr(), out_features_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_features_; ++j) out.data[static_cast<std::size_t>(i) * out_features_ + j] += bias.data[j];
  if (train) saved_input_ = x;
  return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (saved_input_.shape.empty()) throw std::logic_error("Linear::backward without forward");
  const int n = grad_out.dim(0);
  // dW += goutᵀ (out,n) * x (n,in)
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, out_features_, in_features_, n, 1.0f,
              grad_out.ptr(), out_features_, saved_input_.ptr(), in_features_, 1.0f,
              weight_grad.ptr(), in_features_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_features_; ++j)
      bias_grad.data[j] += grad_out.data[static_cast<std::size_t>(i) * out_features_ + j];
  Tensor grad_in({n, in_features_});
  // dx = gout (n,out) * W (out,in)
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, in_features_, out_features_, 1.0f,
              grad_out.ptr(), out_features_, weight.ptr(), in_features_, 0.0f, grad_in.ptr(),
              in_features_);
  saved_input_ = Tensor();
  return grad_in;
}

void Linear::visit(const std::string& prefix, const TensorVisitor& fn) {
  fn({prefix + ".weight", &weight, &weight_grad, true});
  fn({prefix + ".bias", &bias, &bias_grad, true});
}

void Linear::clear_cache() { saved_input_ = Tensor(); }

// ---------------------------------------------------------------------------
// GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, bool train) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* p = x.ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
      out.data[static_cast<std::size_t>(i) * c + ch] = static_cast<float>(s / plane);
    }
  }
  if (train) input_shape_ = x.shape;
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw std::logic_error("GlobalAvgPool::backward without forward");
  const int n = input_shape_[0], c = input_shape_[1], h = input_shape_[2], w = input_shape_[3];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor grad_in(input_shape_);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float g =
          grad_out.data[static_cast<std::size_t>(i) * c + ch] / static_cast<float>(plane);
      float* d = grad_in.ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) d[k] = g;
    }
  }
  input_shape_.clear();
  return grad_in;
}

void GlobalAvgPool::clear_cache() { input_shape_.clear(); }

// ---------------------------------------------------------------------------
// pointwise ops

Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  return out;
}

double bce_loss(double prob, int label) {
  const double eps = 1e-7;
  double p = prob;
  if (p < eps) p = eps;
  if (p > 1.0 - eps) p = 1.0 - eps;
  return label ? -std::log(p) : -std::log(1.0 - p);
}

double bce_with_logits(const Tensor& logits, const std::vector<int>& labels, Tensor* grad) {
  const std::size_t n = logits.numel();
  if (labels.size() != n) throw std::invalid_argument("bce_with_logits: label count mismatch");
  if (grad) *grad = Tensor(logits.shape);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.data[i];
    const double y = labels[i];
    // log(1+exp(-|z|)) + max(z,0) - z*y
    loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * y;
    if (grad) {
      const double p = 1.0 / (1.0 + std::exp(-z));
      grad->data[i] = static_cast<float>((p - y) / static_cast<double>(n));
    }
  }
  return loss / static_cast<double>(n);
}

}  // namespace miscal::nn
