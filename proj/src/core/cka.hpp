#pragma once

#include <string>
#include <vector>

#include "core/model.hpp"
#include "nn/tensor.hpp"

namespace miscal {

/// Per-layer activations, one (samples x features) matrix per capture point,
/// ordered by network depth.
struct ActivationTrace {
  std::vector<std::string> layers;
  std::vector<nn::Tensor> features;  // each (samples, features)

  int samples() const { return features.empty() ? 0 : features.front().dim(0); }
};

/// Runs the encoder in eval mode and records post-activation outputs of the
/// stem and every basic block. Feature maps wider than
/// kCkaFeatureLimit are spatially subsampled with stride kCkaSpatialStride.
/// layer_selection empty means all capture points; unknown names throw.
ActivationTrace capture(ResNetEncoder& encoder, const nn::Tensor& batch,
                        const std::vector<std::string>& layer_selection, int micro_batch);

inline constexpr int kCkaFeatureLimit = 16384;
inline constexpr int kCkaSpatialStride = 4;

/// Debiased linear CKA between two activation matrices with equal sample
/// counts (rows). Columns are centered internally; returns 0 when either
/// centered matrix is all zero. For n <= 3 samples the unbiased HSIC
/// estimator does not exist and the biased form is used instead.
double linear_cka(const nn::Tensor& x, const nn::Tensor& y);

struct CKAMatrix {
  std::vector<std::string> img_layers;
  std::vector<std::string> lidar_layers;
  std::vector<double> values;  // row-major img x lidar

  double at(std::size_t i, std::size_t j) const { return values[i * lidar_layers.size() + j]; }
};

/// Pairwise CKA over all layer pairs of two traces from the same batch.
CKAMatrix cka_grid(const ActivationTrace& trace_img, const ActivationTrace& trace_lidar);

void write_cka_csv(const std::string& path, const CKAMatrix& grid);

/// Heatmap PNG; rows are image-encoder layers, columns lidar-encoder layers.
void render_cka_heatmap(const std::string& path, const CKAMatrix& grid, const std::string& title);

}  // namespace miscal
