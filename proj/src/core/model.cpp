#include "core/model.hpp"

#include <cmath>
#include <stdexcept>

#include "core/checkpoint.hpp"

namespace miscal {

std::string to_string(EncoderVariant v) {
  return v == EncoderVariant::resnet18_small ? "resnet18_small" : "resnet18_all";
}

std::optional<EncoderVariant> parse_variant(const std::string& s) {
  if (s == "resnet18_small") return EncoderVariant::resnet18_small;
  if (s == "resnet18_all") return EncoderVariant::resnet18_all;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// BasicBlock

BasicBlock::BasicBlock(int in_ch, int out_ch, int stride)
    : conv1_(in_ch, out_ch, 3, stride, 1, false),
      bn1_(out_ch),
      conv2_(out_ch, out_ch, 3, 1, 1, false),
      bn2_(out_ch) {
  if (stride != 1 || in_ch != out_ch) {
    down_conv_ = std::make_unique<nn::Conv2d>(in_ch, out_ch, 1, stride, 0, false);
    down_bn_ = std::make_unique<nn::BatchNorm2d>(out_ch);
  }
}

void BasicBlock::init(Rng& rng) {
  conv1_.init_kaiming(rng);
  conv2_.init_kaiming(rng);
  if (down_conv_) down_conv_->init_kaiming(rng);
}

nn::Tensor BasicBlock::forward(const nn::Tensor& x, bool train) {
  nn::Tensor y = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train), train), train);
  nn::Tensor identity = down_conv_ ? down_bn_->forward(down_conv_->forward(x, train), train) : x;
  if (!y.same_shape(identity)) throw std::logic_error("BasicBlock: skip shape mismatch");
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    float v = y.data[i] + identity.data[i];
    y.data[i] = v > 0.0f ? v : 0.0f;
  }
  if (train) saved_sum_output_ = y;
  return y;
}

nn::Tensor BasicBlock::backward(const nn::Tensor& grad_out) {
  if (saved_sum_output_.shape.empty()) throw std::logic_error("BasicBlock::backward without forward");
  nn::Tensor g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (saved_sum_output_.data[i] <= 0.0f) g.data[i] = 0.0f;
  saved_sum_output_ = nn::Tensor();

  nn::Tensor g_main = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  if (down_conv_) {
    nn::Tensor g_skip = down_conv_->backward(down_bn_->backward(g));
    for (std::size_t i = 0; i < g_main.data.size(); ++i) g_main.data[i] += g_skip.data[i];
    return g_main;
  }
  for (std::size_t i = 0; i < g_main.data.size(); ++i) g_main.data[i] += g.data[i];
  return g_main;
}

void BasicBlock::visit(const std::string& prefix, const nn::TensorVisitor& fn) {
  conv1_.visit(prefix + ".conv1", fn);
  bn1_.visit(prefix + ".bn1", fn);
  conv2_.visit(prefix + ".conv2", fn);
  bn2_.visit(prefix + ".bn2", fn);
  if (down_conv_) {
    down_conv_->visit(prefix + ".down_conv", fn);
    down_bn_->visit(prefix + ".down_bn", fn);
  }
}

void BasicBlock::clear_cache() {
  conv1_.clear_cache();
  bn1_.clear_cache();
  relu1_.clear_cache();
  conv2_.clear_cache();
  bn2_.clear_cache();
  if (down_conv_) {
    down_conv_->clear_cache();
    down_bn_->clear_cache();
  }
  saved_sum_output_ = nn::Tensor();
}

// ---------------------------------------------------------------------------
// ResNetEncoder

namespace {
struct StagePlan {
  int in_ch, out_ch, stride;
};

std::vector<StagePlan> block_plan(EncoderVariant v) {
  std::vector<StagePlan> plan = {
      {64, 64, 1}, {64, 64, 1}, {64, 128, 2}, {128, 128, 1}};
  if (v == EncoderVariant::resnet18_all) {
    plan.push_back({128, 256, 2});
    plan.push_back({256, 256, 1});
    plan.push_back({256, 512, 2});
    plan.push_back({512, 512, 1});
  }
  return plan;
}
}  // namespace

ResNetEncoder::ResNetEncoder(EncoderConfig cfg)
    : cfg_(cfg),
      stem_conv_(cfg.in_channels, 64, 7, 2, 3, false),
      stem_bn_(64),
      stem_pool_(3, 2, 1) {
  stem_conv_.set_input_grad_needed(false);
  const auto plan = block_plan(cfg.variant);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    blocks_.push_back(std::make_unique<BasicBlock>(plan[i].in_ch, plan[i].out_ch, plan[i].stride));
    block_names_.push_back("s" + std::to_string(i / 2 + 1) + "b" + std::to_string(i % 2 + 1));
  }
}

std::vector<std::string> ResNetEncoder::capture_layer_names(EncoderVariant v) {
  std::vector<std::string> names = {"stem"};
  const std::size_t n_blocks = (v == EncoderVariant::resnet18_small) ? 4 : 8;
  for (std::size_t i = 0; i < n_blocks; ++i)
    names.push_back("s" + std::to_string(i / 2 + 1) + "b" + std::to_string(i % 2 + 1));
  return names;
}

int ResNetEncoder::out_channels() const {
  return cfg_.variant == EncoderVariant::resnet18_small ? 128 : 512;
}

void ResNetEncoder::init(Rng& rng) {
  stem_conv_.init_kaiming(rng);
  for (auto& b : blocks_) b->init(rng);
}

nn::Tensor ResNetEncoder::forward(const nn::Tensor& x, bool train) {
  if (x.dim(2) % spatial_divisor() != 0 || x.dim(3) % spatial_divisor() != 0)
    throw std::invalid_argument("encoder input spatial size must be divisible by " +
                                std::to_string(spatial_divisor()));
  nn::Tensor y = stem_pool_.forward(
      stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x, train), train), train), train);
  for (auto& b : blocks_) y = b->forward(y, train);
  return y;
}

nn::Tensor ResNetEncoder::forward_capture(const nn::Tensor& x, const CaptureSink& sink) {
  nn::Tensor y = stem_pool_.forward(
      stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x, false), false), false), false);
  sink("stem", y);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    y = blocks_[i]->forward(y, false);
    sink(block_names_[i], y);
  }
  return y;
}

nn::Tensor ResNetEncoder::backward(const nn::Tensor& grad_out) {
  nn::Tensor g = grad_out;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
  return stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(g))));
}

void ResNetEncoder::visit(const std::string& prefix, const nn::TensorVisitor& fn) {
  stem_conv_.visit(prefix + ".stem.conv", fn);
  stem_bn_.visit(prefix + ".stem.bn", fn);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i]->visit(prefix + "." + block_names_[i], fn);
}

void ResNetEncoder::clear_cache() {
  stem_conv_.clear_cache();
  stem_bn_.clear_cache();
  stem_relu_.clear_cache();
  stem_pool_.clear_cache();
  for (auto& b : blocks_) b->clear_cache();
}

// ---------------------------------------------------------------------------
// ClassifierHead

ClassifierHead::ClassifierHead(EncoderVariant variant)
    : fc1_(32, 512), fc2_(512, 216), fc3_(216, 216), fc4_(216, 1) {
  auto add_unit = [this](int in_ch, int out_ch) {
    ConvUnit u;
    u.conv = std::make_unique<nn::Conv2d>(in_ch, out_ch, 3, 2, 1, false);
    u.bn = std::make_unique<nn::BatchNorm2d>(out_ch);
    conv_units_.push_back(std::move(u));
  };
  if (variant == EncoderVariant::resnet18_small) {
    add_unit(256, 128);
    add_unit(128, 64);
    add_unit(64, 32);
  } else {
    // deeper encoders already shrank the feature map; one conv suffices
    add_unit(1024, 32);
  }
}

void ClassifierHead::init(Rng& rng) {
  for (auto& u : conv_units_) u.conv->init_kaiming(rng);
  fc1_.init_kaiming(rng);
  fc2_.init_kaiming(rng);
  fc3_.init_kaiming(rng);
  fc4_.init_kaiming(rng);
}

nn::Tensor ClassifierHead::forward(const nn::Tensor& concat, bool train) {
  nn::Tensor y = concat;
  for (auto& u : conv_units_)
    y = u.relu.forward(u.bn->forward(u.conv->forward(y, train), train), train);
  y = gap_.forward(y, train);
  y = fr1_.forward(fc1_.forward(y, train), train);
  y = fr2_.forward(fc2_.forward(y, train), train);
  y = fr3_.forward(fc3_.forward(y, train), train);
  return fc4_.forward(y, train);
}

nn::Tensor ClassifierHead::backward(const nn::Tensor& grad_out) {
  nn::Tensor g = fc4_.backward(grad_out);
  g = fc1_.backward(fr1_.backward(fc2_.backward(fr2_.backward(fc3_.backward(fr3_.backward(g))))));
  g = gap_.backward(g);
  for (auto it = conv_units_.rbegin(); it != conv_units_.rend(); ++it)
    g = it->conv->backward(it->bn->backward(it->relu.backward(g)));
  return g;
}

void ClassifierHead::visit(const std::string& prefix, const nn::TensorVisitor& fn) {
  for (std::size_t i = 0; i < conv_units_.size(); ++i) {
    conv_units_[i].conv->visit(prefix + ".conv" + std::to_string(i + 1), fn);
    conv_units_[i].bn->visit(prefix + ".bn" + std::to_string(i + 1), fn);
  }
  fc1_.visit(prefix + ".fc1", fn);
  fc2_.visit(prefix + ".fc2", fn);
  fc3_.visit(prefix + ".fc3", fn);
  fc4_.visit(prefix + ".fc4", fn);
}

void ClassifierHead::clear_cache() {
  for (auto& u : conv_units_) {
    u.conv->clear_cache();
    u.bn->clear_cache();
    u.relu.clear_cache();
  }
  gap_.clear_cache();
  fc1_.clear_cache();
  fc2_.clear_cache();
  fc3_.clear_cache();
  fc4_.clear_cache();
  fr1_.clear_cache();
  fr2_.clear_cache();
  fr3_.clear_cache();
}

// ---------------------------------------------------------------------------
// losses and assembly

ContrastiveResult contrastive_loss(const nn::Tensor& emb_img, const nn::Tensor& emb_lidar,
                                   const std::vector<int>& labels, double margin, bool with_grad) {
  if (!emb_img.same_shape(emb_lidar))
    throw std::invalid_argument("contrastive_loss: embedding shape mismatch");
  const int n = emb_img.dim(0), c = emb_img.dim(1), h = emb_img.dim(2), w = emb_img.dim(3);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("contrastive_loss: label count mismatch");

  ContrastiveResult res;
  if (with_grad) {
    res.grad_img = nn::Tensor(emb_img.shape);
    res.grad_lidar = nn::Tensor(emb_img.shape);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t sample_stride = static_cast<std::size_t>(c) * plane;
  const double norm = 1.0 / (static_cast<double>(n) * h * w);
  double loss = 0.0;

  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw std::invalid_argument("contrastive_loss: labels must be 0/1");
    const float* ei = emb_img.ptr() + i * sample_stride;
    const float* el = emb_lidar.ptr() + i * sample_stride;
    float* gi = with_grad ? res.grad_img.ptr() + i * sample_stride : nullptr;
    float* gl = with_grad ? res.grad_lidar.ptr() + i * sample_stride : nullptr;
    for (std::size_t p = 0; p < plane; ++p) {
      double d2 = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double d = static_cast<double>(ei[ch * plane + p]) - el[ch * plane + p];
        d2 += d * d;
      }
      if (!std::isfinite(d2)) throw std::runtime_error("contrastive_loss: non-finite embedding");
      const double dist = std::sqrt(d2);
      if (y == 0) {
        loss += d2;
        if (with_grad) {
          const double s = 2.0 * norm;
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t k = ch * plane + p;
            const float g = static_cast<float>(s * (static_cast<double>(ei[k]) - el[k]));
            gi[k] += g;
            gl[k] -= g;
          }
        }
      } else {
        const double gap = margin - dist;
        if (gap > 0.0) {
          loss += gap * gap;
          // subgradient 0 exactly at D = 0
          if (with_grad && dist > 0.0) {
            const double s = -2.0 * gap / dist * norm;
            for (int ch = 0; ch < c; ++ch) {
              const std::size_t k = ch * plane + p;
              const float g = static_cast<float>(s * (static_cast<double>(ei[k]) - el[k]));
              gi[k] += g;
              gl[k] -= g;
            }
          }
        }
      }
    }
  }
  res.loss = loss * norm;
  return res;
}

nn::Tensor concat_channels(const nn::Tensor& a, const nn::Tensor& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: shape mismatch");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  nn::Tensor out({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    std::copy(a.sample_ptr(i), a.sample_ptr(i) + ca * plane, out.sample_ptr(i));
    std::copy(b.sample_ptr(i), b.sample_ptr(i) + cb * plane, out.sample_ptr(i) + ca * plane);
  }
  return out;
}

DetectorModel DetectorModel::create(EncoderVariant variant, int input_width, int input_height,
                                    double margin, std::uint64_t seed) {
  DetectorModel m;
  m.variant = variant;
  m.input_width = input_width;
  m.input_height = input_height;
  m.margin = margin;
  m.image_encoder = std::make_unique<ResNetEncoder>(EncoderConfig{variant, 3});
  m.lidar_encoder = std::make_unique<ResNetEncoder>(EncoderConfig{variant, 1});
  m.head = std::make_unique<ClassifierHead>(variant);
  Rng rng_img(mix_seed(seed, 0xA11CE));
  Rng rng_lid(mix_seed(seed, 0xB0B));
  Rng rng_head(mix_seed(seed, 0xC0DE));
  m.image_encoder->init(rng_img);
  m.lidar_encoder->init(rng_lid);
  m.head->init(rng_head);
  return m;
}

nn::Tensor DetectorModel::encode_image(const nn::Tensor& images, bool train) const {
  return image_encoder->forward(images, train);
}

nn::Tensor DetectorModel::encode_lidar(const nn::Tensor& depths, bool train) const {
  return lidar_encoder->forward(depths, train);
}

std::vector<double> DetectorModel::classify(const nn::Tensor& images,
                                            const nn::Tensor& depths) const {
  nn::Tensor emb_i = image_encoder->forward(images, false);
  nn::Tensor emb_l = lidar_encoder->forward(depths, false);
  nn::Tensor logits = head->forward(concat_channels(emb_i, emb_l), false);
  std::vector<double> probs(logits.numel());
  for (std::size_t i = 0; i < probs.size(); ++i)
    probs[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[i])));
  return probs;
}

ParameterCounts DetectorModel::count_parameters() const {
  ParameterCounts counts;
  auto tally = [](nn::Module& m, const char* prefix) {
    std::int64_t n = 0;
    m.visit(prefix, [&n](const nn::TensorRef& r) {
      if (r.trainable) n += static_cast<std::int64_t>(r.value->numel());
    });
    return n;
  };
  counts.image_encoder = tally(*image_encoder, "img");
  counts.lidar_encoder = tally(*lidar_encoder, "lid");
  counts.head = tally(*head, "head");
  return counts;
}

void DetectorModel::visit_encoders(const nn::TensorVisitor& fn) const {
  image_encoder->visit("image_encoder", fn);
  lidar_encoder->visit("lidar_encoder", fn);
}

void DetectorModel::visit_all(const nn::TensorVisitor& fn) const {
  visit_encoders(fn);
  head->visit("head", fn);
}

std::uint64_t DetectorModel::encoder_hash() const {
  std::uint64_t h = kFnvOffset;
  visit_encoders([&h](const nn::TensorRef& r) {
    h = fnv1a64(r.name.data(), r.name.size(), h);
    h = fnv1a64(r.value->data.data(), r.value->data.size() * sizeof(float), h);
  });
  return h;
}

void DetectorModel::clear_caches() const {
  image_encoder->clear_cache();
  lidar_encoder->clear_cache();
  head->clear_cache();
}

}  // namespace miscal
