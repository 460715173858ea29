#include "core/cka.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace miscal {

ActivationTrace capture(ResNetEncoder& encoder, const nn::Tensor& batch,
                        const std::vector<std::string>& layer_selection, int micro_batch) {
  const std::vector<std::string> all = ResNetEncoder::capture_layer_names(encoder.config().variant);
  std::vector<std::string> wanted = layer_selection.empty() ? all : layer_selection;
  for (const std::string& name : wanted)
    if (std::find(all.begin(), all.end(), name) == all.end())
      throw std::invalid_argument("unknown capture layer: " + name);

  const int n = batch.dim(0);
  ActivationTrace trace;
  trace.layers = wanted;
  trace.features.resize(wanted.size());

  int row = 0;
  for (int at = 0; at < n; at += micro_batch) {
    const int take = std::min(micro_batch, n - at);
    nn::Tensor slice({take, batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy(batch.sample_ptr(at), batch.sample_ptr(at) + slice.numel(), slice.ptr());

    encoder.forward_capture(slice, [&](const std::string& layer, const nn::Tensor& act) {
      const auto pos = std::find(wanted.begin(), wanted.end(), layer);
      if (pos == wanted.end()) return;
      const std::size_t li = static_cast<std::size_t>(pos - wanted.begin());
      const int c = act.dim(1), h = act.dim(2), w = act.dim(3);
      const bool subsample = static_cast<std::int64_t>(c) * h * w > kCkaFeatureLimit;
      const int sh = subsample ? (h + kCkaSpatialStride - 1) / kCkaSpatialStride : h;
      const int sw = subsample ? (w + kCkaSpatialStride - 1) / kCkaSpatialStride : w;
      const int features = c * sh * sw;
      if (trace.features[li].shape.empty()) trace.features[li] = nn::Tensor({n, features});
      for (int s = 0; s < take; ++s) {
        float* dst = trace.features[li].ptr() + static_cast<std::size_t>(row + s) * features;
        const float* src = act.sample_ptr(s);
        if (!subsample) {
          std::copy(src, src + features, dst);
          continue;
        }
        std::size_t k = 0;
        for (int ch = 0; ch < c; ++ch) {
          const float* plane = src + static_cast<std::size_t>(ch) * h * w;
          for (int y = 0; y < h; y += kCkaSpatialStride)
            for (int x = 0; x < w; x += kCkaSpatialStride)
              dst[k++] = plane[static_cast<std::size_t>(y) * w + x];
        }
      }
    });
    row += take;
  }
  encoder.clear_cache();
  return trace;
}

namespace {

// column-centered Gram matrix K = Xc·Xcᵀ in double precision
std::vector<double> centered_gram(const nn::Tensor& x) {
  const int n = x.dim(0), p = x.dim(1);
  std::vector<double> mean(static_cast<std::size_t>(p), 0.0);
  for (int i = 0; i < n; ++i) {
    const float* row = x.ptr() + static_cast<std::size_t>(i) * p;
    for (int j = 0; j < p; ++j) mean[static_cast<std::size_t>(j)] += row[j];
  }
  for (double& m : mean) m /= n;

  std::vector<double> gram(static_cast<std::size_t>(n) * n, 0.0);
  // process feature blocks to bound the double-precision staging buffer
  const int block = 8192;
  std::vector<double> staged;
  for (int j0 = 0; j0 < p; j0 += block) {
    const int bw = std::min(block, p - j0);
    staged.assign(static_cast<std::size_t>(n) * bw, 0.0);
    for (int i = 0; i < n; ++i) {
      const float* row = x.ptr() + static_cast<std::size_t>(i) * p + j0;
      double* out = staged.data() + static_cast<std::size_t>(i) * bw;
      for (int j = 0; j < bw; ++j) out[j] = static_cast<double>(row[j]) - mean[static_cast<std::size_t>(j0 + j)];
    }
    for (int i = 0; i < n; ++i) {
      const double* ri = staged.data() + static_cast<std::size_t>(i) * bw;
      for (int k = i; k < n; ++k) {
        const double* rk = staged.data() + static_cast<std::size_t>(k) * bw;
        double s = 0.0;
        for (int j = 0; j < bw; ++j) s += ri[j] * rk[j];
        gram[static_cast<std::size_t>(i) * n + k] += s;
      }
    }
  }
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < i; ++k)
      gram[static_cast<std::size_t>(i) * n + k] = gram[static_cast<std::size_t>(k) * n + i];
  return gram;
}

bool all_zero(const std::vector<double>& gram) {
  for (double v : gram)
    if (v != 0.0) return false;
  return true;
}

// unbiased HSIC estimator (U-statistic form); requires n >= 4
double hsic_unbiased(const std::vector<double>& k, const std::vector<double>& l, int n) {
  double trace = 0.0, sum_k = 0.0, sum_l = 0.0, cross = 0.0;
  std::vector<double> krow(static_cast<std::size_t>(n), 0.0), lrow(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double kij = k[static_cast<std::size_t>(i) * n + j];
      const double lij = l[static_cast<std::size_t>(i) * n + j];
      trace += kij * lij;
      krow[static_cast<std::size_t>(i)] += kij;
      lrow[static_cast<std::size_t>(i)] += lij;
    }
  }
  for (int i = 0; i < n; ++i) {
    sum_k += krow[static_cast<std::size_t>(i)];
    sum_l += lrow[static_cast<std::size_t>(i)];
    cross += krow[static_cast<std::size_t>(i)] * lrow[static_cast<std::size_t>(i)];
  }
  const double nn1 = static_cast<double>(n - 1), nn2 = static_cast<double>(n - 2);
  return (trace + sum_k * sum_l / (nn1 * nn2) - 2.0 * cross / nn2) /
         (static_cast<double>(n) * static_cast<double>(n - 3));
}

// biased HSIC (used only for n <= 3 where the U-statistic is undefined):
// <K, L> with the gram matrices already feature-centered
double hsic_biased(const std::vector<double>& k, const std::vector<double>& l, int n) {
  double s = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * n; ++i) s += k[i] * l[i];
  return s;
}

double cka_from_grams(const std::vector<double>& k, const std::vector<double>& l, int n) {
  if (all_zero(k) || all_zero(l)) return 0.0;
  double num, dk, dl;
  if (n >= 4) {
    num = hsic_unbiased(k, l, n);
    dk = hsic_unbiased(k, k, n);
    dl = hsic_unbiased(l, l, n);
  } else {
    num = hsic_biased(k, l, n);
    dk = hsic_biased(k, k, n);
    dl = hsic_biased(l, l, n);
  }
  if (dk <= 0.0 || dl <= 0.0) return 0.0;
  const double v = num / std::sqrt(dk * dl);
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

double linear_cka(const nn::Tensor& x, const nn::Tensor& y) {
  if (x.shape.size() != 2 || y.shape.size() != 2)
    throw std::invalid_argument("linear_cka expects (samples, features) matrices");
  if (x.dim(0) != y.dim(0)) throw std::invalid_argument("linear_cka: sample count mismatch");
  if (x.dim(0) < 2) throw std::invalid_argument("linear_cka: needs at least 2 samples");
  const int n = x.dim(0);
  return cka_from_grams(centered_gram(x), centered_gram(y), n);
}

CKAMatrix cka_grid(const ActivationTrace& trace_img, const ActivationTrace& trace_lidar) {
  if (trace_img.samples() != trace_lidar.samples())
    throw std::invalid_argument("cka_grid: traces come from different batch sizes");
  const int n = trace_img.samples();
  CKAMatrix grid;
  grid.img_layers = trace_img.layers;
  grid.lidar_layers = trace_lidar.layers;
  grid.values.assign(grid.img_layers.size() * grid.lidar_layers.size(), 0.0);

  std::vector<std::vector<double>> grams_img, grams_lid;
  grams_img.reserve(trace_img.features.size());
  for (const nn::Tensor& f : trace_img.features) grams_img.push_back(centered_gram(f));
  grams_lid.reserve(trace_lidar.features.size());
  for (const nn::Tensor& f : trace_lidar.features) grams_lid.push_back(centered_gram(f));

  for (std::size_t i = 0; i < grams_img.size(); ++i)
    for (std::size_t j = 0; j < grams_lid.size(); ++j)
      grid.values[i * grams_lid.size() + j] = cka_from_grams(grams_img[i], grams_lid[j], n);
  return grid;
}

void write_cka_csv(const std::string& path, const CKAMatrix& grid) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write CKA csv: " + path);
  f << "image_layer";
  for (const std::string& l : grid.lidar_layers) f << ",lidar_" << l;
  f << '\n';
  for (std::size_t i = 0; i < grid.img_layers.size(); ++i) {
    f << grid.img_layers[i];
    for (std::size_t j = 0; j < grid.lidar_layers.size(); ++j) f << ',' << grid.at(i, j);
    f << '\n';
  }
}

void render_cka_heatmap(const std::string& path, const CKAMatrix& grid, const std::string& title) {
  const int cell = 56, margin_left = 64, margin_top = 40, margin_bottom = 28;
  const int rows = static_cast<int>(grid.img_layers.size());
  const int cols = static_cast<int>(grid.lidar_layers.size());
  const int width = margin_left + cols * cell + 8;
  const int height = margin_top + rows * cell + margin_bottom;

  cv::Mat gray(rows, cols, CV_8UC1);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      gray.at<std::uint8_t>(i, j) = static_cast<std::uint8_t>(
          std::lround(255.0 * std::clamp(grid.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)), 0.0, 1.0)));
  cv::Mat colored;
  cv::applyColorMap(gray, colored, cv::COLORMAP_VIRIDIS);

  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const cv::Rect rect(margin_left + j * cell, margin_top + i * cell, cell - 2, cell - 2);
      cv::rectangle(canvas, rect, colored.at<cv::Vec3b>(i, j), cv::FILLED);
      char text[16];
      std::snprintf(text, sizeof(text), "%.2f", grid.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
      const double v = grid.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      const cv::Scalar ink = v > 0.6 ? cv::Scalar(32, 32, 32) : cv::Scalar(235, 235, 235);
      cv::putText(canvas, text, {rect.x + 8, rect.y + cell / 2 + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.38,
                  ink, 1, cv::LINE_AA);
    }
  }
  cv::putText(canvas, title, {8, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(16, 16, 16), 1,
              cv::LINE_AA);
  for (int i = 0; i < rows; ++i)
    cv::putText(canvas, grid.img_layers[static_cast<std::size_t>(i)],
                {6, margin_top + i * cell + cell / 2 + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.42,
                cv::Scalar(16, 16, 16), 1, cv::LINE_AA);
  for (int j = 0; j < cols; ++j)
    cv::putText(canvas, grid.lidar_layers[static_cast<std::size_t>(j)],
                {margin_left + j * cell + 8, height - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.42,
                cv::Scalar(16, 16, 16), 1, cv::LINE_AA);
  if (!cv::imwrite(path, canvas)) throw std::runtime_error("cannot write heatmap: " + path);
}

}  // namespace miscal
