#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nn/adamw.hpp"
#include "nn/modules.hpp"

namespace miscal {

enum class EncoderVariant { resnet18_small, resnet18_all };

std::string to_string(EncoderVariant v);
std::optional<EncoderVariant> parse_variant(const std::string& s);

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::resnet18_small;
  int in_channels = 3;
};

/// Two 3x3 convs with batch norm and a residual skip; 1x1 projection on the
/// skip path when shape changes.
class BasicBlock final : public nn::Module {
 public:
  BasicBlock(int in_ch, int out_ch, int stride);

  nn::Tensor forward(const nn::Tensor& x, bool train) override;
  nn::Tensor backward(const nn::Tensor& grad_out) override;
  void visit(const std::string& prefix, const nn::TensorVisitor& fn) override;
  void clear_cache() override;
  void init(Rng& rng);

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::ReLU relu1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  std::unique_ptr<nn::Conv2d> down_conv_;
  std::unique_ptr<nn::BatchNorm2d> down_bn_;
  nn::Tensor saved_sum_output_;
};

using CaptureSink = std::function<void(const std::string& layer, const nn::Tensor& activation)>;

/// ResNet18 feature extractor. The small variant keeps the stem and the first
/// two residual stages (output 128 x H/8 x W/8); the all variant keeps all
/// four stages without pooling/FC (output 512 x H/32 x W/32).
class ResNetEncoder final : public nn::Module {
 public:
  explicit ResNetEncoder(EncoderConfig cfg);

  nn::Tensor forward(const nn::Tensor& x, bool train) override;
  nn::Tensor backward(const nn::Tensor& grad_out) override;
  void visit(const std::string& prefix, const nn::TensorVisitor& fn) override;
  void clear_cache() override;
  void init(Rng& rng);

  /// Eval-mode forward that reports the post-activation output of the stem
  /// and of every basic block.
  nn::Tensor forward_capture(const nn::Tensor& x, const CaptureSink& sink);

  static std::vector<std::string> capture_layer_names(EncoderVariant v);

  int out_channels() const;
  int spatial_divisor() const { return cfg_.variant == EncoderVariant::resnet18_small ? 8 : 32; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_bn_;
  nn::ReLU stem_relu_;
  nn::MaxPool2d stem_pool_;
  std::vector<std::unique_ptr<BasicBlock>> blocks_;
  std::vector<std::string> block_names_;
};

/// Classifier on concatenated embeddings. The small-variant head reduces with
/// three strided 3x3 convs (256->128->64->32); the all-variant head uses a
/// single strided 3x3 conv (1024->32). Both end in GAP and the
/// 32->512->216->216->1 MLP; the final unit is read through a sigmoid.
class ClassifierHead final : public nn::Module {
 public:
  explicit ClassifierHead(EncoderVariant variant);

  nn::Tensor forward(const nn::Tensor& concat, bool train) override;  // logits (n, 1)
  nn::Tensor backward(const nn::Tensor& grad_out) override;
  void visit(const std::string& prefix, const nn::TensorVisitor& fn) override;
  void clear_cache() override;
  void init(Rng& rng);

 private:
  struct ConvUnit {
    std::unique_ptr<nn::Conv2d> conv;
    std::unique_ptr<nn::BatchNorm2d> bn;
    nn::ReLU relu;
  };
  std::vector<ConvUnit> conv_units_;
  nn::GlobalAvgPool gap_;
  nn::Linear fc1_, fc2_, fc3_, fc4_;
  nn::ReLU fr1_, fr2_, fr3_;
};

struct ContrastiveResult {
  double loss = 0.0;
  nn::Tensor grad_img;
  nn::Tensor grad_lidar;
};

/// Pixel-wise contrastive loss
///   L = 1/(NHW) sum_nhw [(1-y) D^2 + y max(0, m - D)^2],
///   D_nhw = sqrt(sum_c (E_I - E_L)^2).
/// Throws on non-finite embeddings. Gradients are produced when with_grad.
ContrastiveResult contrastive_loss(const nn::Tensor& emb_img, const nn::Tensor& emb_lidar,
                                   const std::vector<int>& labels, double margin, bool with_grad);

/// Concatenates two (n,c,h,w) tensors on the channel axis.
nn::Tensor concat_channels(const nn::Tensor& a, const nn::Tensor& b);

struct ParameterCounts {
  std::int64_t image_encoder = 0;
  std::int64_t lidar_encoder = 0;
  std::int64_t head = 0;
  std::int64_t total() const { return image_encoder + lidar_encoder + head; }
};

/// The full two-stream detector: image encoder (3ch), lidar encoder (1ch)
/// and classifier head.
struct DetectorModel {
  EncoderVariant variant = EncoderVariant::resnet18_small;
  int input_width = 512;
  int input_height = 256;
  double margin = 4.0;

  std::unique_ptr<ResNetEncoder> image_encoder;
  std::unique_ptr<ResNetEncoder> lidar_encoder;
  std::unique_ptr<ClassifierHead> head;

  static DetectorModel create(EncoderVariant variant, int input_width, int input_height,
                              double margin, std::uint64_t seed);

  nn::Tensor encode_image(const nn::Tensor& images, bool train) const;
  nn::Tensor encode_lidar(const nn::Tensor& depths, bool train) const;

  /// Miscalibration probabilities for a batch (eval mode throughout).
  std::vector<double> classify(const nn::Tensor& images, const nn::Tensor& depths) const;

  ParameterCounts count_parameters() const;

  void visit_encoders(const nn::TensorVisitor& fn) const;
  void visit_all(const nn::TensorVisitor& fn) const;

  /// FNV-1a over both encoders' tensors (weights and running stats).
  std::uint64_t encoder_hash() const;

  void clear_caches() const;
};

}  // namespace miscal
