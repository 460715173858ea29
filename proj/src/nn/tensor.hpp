#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <vector>

namespace miscal::nn {

/// Dense row-major float tensor. Activations use NCHW order.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0f);
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // flat views for (n, c, h, w) tensors
  float* sample_ptr(int n) {
    assert(!shape.empty());
    return data.data() + static_cast<std::size_t>(n) * (numel() / shape[0]);
  }
  const float* sample_ptr(int n) const {
    assert(!shape.empty());
    return data.data() + static_cast<std::size_t>(n) * (numel() / shape[0]);
  }
};

}  // namespace miscal::nn
