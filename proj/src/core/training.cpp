#include "core/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace miscal {

namespace {

void scale_tensor(nn::Tensor& t, double s) {
  const float f = static_cast<float>(s);
  for (float& v : t.data) v *= f;
}

std::vector<nn::TensorRef> collect_trainable(const std::function<void(const nn::TensorVisitor&)>& visit) {
  std::vector<nn::TensorRef> refs;
  visit([&refs](const nn::TensorRef& r) {
    if (r.trainable) refs.push_back(r);
  });
  return refs;
}

void split_train_val(int n, double val_fraction, std::uint64_t seed, std::vector<int>& train,
                     std::vector<int>& val) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed, 0x5B117));
  rng.shuffle(order);
  int n_val = static_cast<int>(std::floor(n * val_fraction));
  if (n_val >= n) n_val = n - 1;
  if (n_val < 0) n_val = 0;
  val.assign(order.begin(), order.begin() + n_val);
  train.assign(order.begin() + n_val, order.end());
}

void assert_balanced(const BatchPlan& plan) {
  int pos = 0;
  for (const SampleSpec& s : plan) pos += s.label;
  if (pos * 2 != static_cast<int>(plan.size()))
    throw std::logic_error("batch is not class balanced");
}

std::string joined_frames(const FrameStore& store, const BatchPlan& plan) {
  std::string out;
  for (const SampleSpec& s : plan) {
    if (!out.empty()) out += ' ';
    out += store.frame(s.frame_index).id;
  }
  return out;
}

// Balanced one-pass eval plan over the given frame indices.
BatchPlan eval_plan(const std::vector<int>& indices, const TrainConfig& cfg, std::uint64_t seed) {
  BatchPlan plan;
  plan.reserve(indices.size() * 2);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    plan.push_back({indices[i], 0, cfg.calibrated_config, mix_seed(seed, 0xEA, i, 0)});
    plan.push_back({indices[i], 1, cfg.miscalibrated_config, mix_seed(seed, 0xEA, i, 1)});
  }
  return plan;
}

template <typename Fn>
void for_each_micro(const BatchPlan& plan, int micro, Fn&& fn) {
  for (std::size_t at = 0; at < plan.size(); at += static_cast<std::size_t>(micro)) {
    const std::size_t end = std::min(plan.size(), at + static_cast<std::size_t>(micro));
    fn(BatchPlan(plan.begin() + static_cast<std::ptrdiff_t>(at),
                 plan.begin() + static_cast<std::ptrdiff_t>(end)));
  }
}

double eval_contrastive_loss(const DetectorModel& model, const FrameStore& store,
                             const BatchPlan& plan, const TrainConfig& cfg) {
  double total = 0.0;
  std::size_t count = 0;
  for_each_micro(plan, cfg.micro_batch, [&](const BatchPlan& mp) {
    Batch mb = materialize_batch(store, mp, cfg.registry(), cfg.input_width, cfg.input_height);
    nn::Tensor ei = model.image_encoder->forward(mb.images, false);
    nn::Tensor el = model.lidar_encoder->forward(mb.depths, false);
    ContrastiveResult res = contrastive_loss(ei, el, mb.labels, cfg.margin, false);
    total += res.loss * static_cast<double>(mp.size());
    count += mp.size();
  });
  return count ? total / static_cast<double>(count) : 0.0;
}

double eval_accuracy(const DetectorModel& model, const FrameStore& store, const BatchPlan& plan,
                     const TrainConfig& cfg, double threshold) {
  std::size_t correct = 0, count = 0;
  for_each_micro(plan, cfg.micro_batch, [&](const BatchPlan& mp) {
    Batch mb = materialize_batch(store, mp, cfg.registry(), cfg.input_width, cfg.input_height);
    const std::vector<double> probs = model.classify(mb.images, mb.depths);
    for (std::size_t i = 0; i < probs.size(); ++i)
      if ((probs[i] >= threshold ? 1 : 0) == mb.labels[i]) ++correct;
    count += probs.size();
  });
  return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0;
}

void write_config_snapshot(const std::string& run_dir, const TrainConfig& cfg, TrainStage stage) {
  std::ofstream f(fs::path(run_dir) / "config.txt");
  f << "stage=" << (stage == TrainStage::pretext ? "pretext" : "classifier") << '\n'
    << "variant=" << to_string(cfg.variant) << '\n'
    << "batch_size=" << cfg.batch_size << '\n'
    << "micro_batch=" << cfg.micro_batch << '\n'
    << "lr_initial=" << cfg.lr_initial << '\n'
    << "lr_after_drop=" << cfg.lr_after_drop << '\n'
    << "lr_drop_epoch=" << cfg.lr_drop_epoch << '\n'
    << "weight_decay=" << cfg.weight_decay << '\n'
    << "epochs=" << cfg.epochs << '\n'
    << "margin=" << cfg.margin << '\n'
    << "seed=" << cfg.seed << '\n'
    << "input_width=" << cfg.input_width << '\n'
    << "input_height=" << cfg.input_height << '\n'
    << "val_fraction=" << cfg.val_fraction << '\n'
    << "calibrated_config=" << cfg.calibrated_config << '\n'
    << "miscalibrated_config=" << cfg.miscalibrated_config << '\n';
}

nlohmann::json base_meta(const DetectorModel& model, const TrainConfig& cfg, TrainStage stage) {
  nlohmann::json meta;
  meta["stage"] = stage == TrainStage::pretext ? "pretext" : "classifier";
  meta["variant"] = to_string(model.variant);
  meta["input_width"] = model.input_width;
  meta["input_height"] = model.input_height;
  meta["margin"] = model.margin;
  meta["seed"] = cfg.seed;
  const ParameterCounts counts = model.count_parameters();
  meta["param_count"] = counts.total();
  meta["param_count_image_encoder"] = counts.image_encoder;
  meta["param_count_lidar_encoder"] = counts.lidar_encoder;
  meta["param_count_head"] = counts.head;
  return meta;
}

Checkpoint encoders_to_checkpoint(const DetectorModel& model, const TrainConfig& cfg) {
  Checkpoint ckpt;
  ckpt.meta = base_meta(model, cfg, TrainStage::pretext);
  model.visit_encoders([&ckpt](const nn::TensorRef& r) {
    ckpt.tensors.emplace_back(r.name, *r.value);
  });
  return ckpt;
}

Checkpoint full_model_checkpoint(const DetectorModel& model, const TrainConfig& cfg,
                                 TrainStage stage) {
  Checkpoint ckpt;
  ckpt.meta = base_meta(model, cfg, stage);
  model.visit_all([&ckpt](const nn::TensorRef& r) {
    ckpt.tensors.emplace_back(r.name, *r.value);
  });
  return ckpt;
}

void load_tensors_into(const Checkpoint& ckpt, const DetectorModel& model, bool encoders_only,
                       bool require_all) {
  auto apply = [&ckpt, require_all](const nn::TensorRef& r) {
    const nn::Tensor* src = ckpt.find(r.name);
    if (!src) {
      if (require_all) throw std::runtime_error("checkpoint missing tensor: " + r.name);
      return;
    }
    if (src->shape != r.value->shape)
      throw std::runtime_error("checkpoint tensor shape mismatch: " + r.name);
    *r.value = *src;
  };
  if (encoders_only)
    model.visit_encoders(apply);
  else
    model.visit_all(apply);
}

struct MetricsWriter {
  std::ofstream file;
  MetricsWriter(const std::string& run_dir, bool append) {
    const fs::path p = fs::path(run_dir) / "metrics.csv";
    file.open(p, append ? std::ios::app : std::ios::trunc);
    if (!append) file << "epoch,lr,loss,val_metric\n";
  }
  void row(const EpochLog& log) {
    file << log.epoch << ',' << log.lr << ',' << log.train_loss << ',' << log.val_metric << '\n';
    file.flush();
  }
};

std::string epoch_ckpt_path(const std::string& run_dir, int epoch) {
  return (fs::path(run_dir) / ("ckpt_epoch_" + std::to_string(epoch) + ".mckpt")).string();
}

}  // namespace

const std::vector<ErrorRangeConfig>& TrainConfig::registry() const {
  return config_registry.empty() ? builtin_error_configs() : config_registry;
}

void TrainConfig::validate() const {
  if (batch_size <= 0 || batch_size % 2 != 0)
    throw std::invalid_argument("batch_size must be even and positive");
  if (micro_batch <= 0) throw std::invalid_argument("micro_batch must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr_initial > 0.0) || !(lr_after_drop > 0.0))
    throw std::invalid_argument("learning rates must be positive");
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be positive");
  const int div = variant == EncoderVariant::resnet18_small ? 8 : 32;
  if (input_width % div != 0 || input_height % div != 0)
    throw std::invalid_argument("input size must be divisible by " + std::to_string(div));
  find_error_config(registry(), calibrated_config);
  find_error_config(registry(), miscalibrated_config);
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  return epoch < cfg.lr_drop_epoch ? cfg.lr_initial : cfg.lr_after_drop;
}

TrainResult train_pretext(const FrameStore& store, const TrainConfig& cfg,
                          const std::string& run_dir, const std::string& resume_from) {
  cfg.validate();
  fs::create_directories(run_dir);
  write_config_snapshot(run_dir, cfg, TrainStage::pretext);

  DetectorModel model = DetectorModel::create(cfg.variant, cfg.input_width, cfg.input_height,
                                              cfg.margin, mix_seed(cfg.seed, 0x10DE1));
  std::vector<nn::TensorRef> params = collect_trainable(
      [&model](const nn::TensorVisitor& fn) { model.visit_encoders(fn); });
  nn::AdamW opt(params);

  int start_epoch = 0;
  if (!resume_from.empty()) {
    Checkpoint state = load_checkpoint(resume_from);
    if (state.meta.value("stage", "") != "pretext")
      throw std::runtime_error("resume state is not a pretext checkpoint");
    if (state.meta.value("variant", "") != to_string(cfg.variant))
      throw std::runtime_error("resume state variant mismatch");
    load_tensors_into(state, model, true, true);
    opt.import_state(state.tensors);
    start_epoch = state.meta.value("next_epoch", 0);
  }

  std::vector<int> train_idx, val_idx;
  split_train_val(store.size(), cfg.val_fraction, cfg.seed, train_idx, val_idx);
  const ErrorRangeConfig& cal = find_error_config(cfg.registry(), cfg.calibrated_config);
  const ErrorRangeConfig& mis = find_error_config(cfg.registry(), cfg.miscalibrated_config);
  const BatchPlan val = eval_plan(val_idx, cfg, mix_seed(cfg.seed, 0x7A1));

  MetricsWriter metrics(run_dir, start_epoch > 0);
  TrainResult result;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    std::vector<BatchPlan> batches =
        build_epoch(static_cast<int>(train_idx.size()), cal, mis, cfg.batch_size,
                    mix_seed(cfg.seed, 0xE90C4, static_cast<std::uint64_t>(epoch)));
    if (batches.empty())
      throw std::invalid_argument("not enough frames for a single balanced batch");

    double epoch_loss = 0.0;
    int step = 0;
    for (BatchPlan& plan : batches) {
      for (SampleSpec& spec : plan) spec.frame_index = train_idx[static_cast<std::size_t>(spec.frame_index)];
      assert_balanced(plan);
      double batch_loss = 0.0;
      for_each_micro(plan, cfg.micro_batch, [&](const BatchPlan& mp) {
        Batch mb = materialize_batch(store, mp, cfg.registry(), cfg.input_width, cfg.input_height);
        nn::Tensor ei = model.image_encoder->forward(mb.images, true);
        nn::Tensor el = model.lidar_encoder->forward(mb.depths, true);
        ContrastiveResult res = contrastive_loss(ei, el, mb.labels, cfg.margin, true);
        if (!std::isfinite(res.loss)) {
          std::ostringstream msg;
          msg << "pretext: non-finite loss at epoch " << epoch << " step " << step
              << "; batch frames: " << joined_frames(store, mp);
          throw NumericError(msg.str());
        }
        const double scale = static_cast<double>(mp.size()) / plan.size();
        batch_loss += res.loss * scale;
        scale_tensor(res.grad_img, scale);
        scale_tensor(res.grad_lidar, scale);
        model.image_encoder->backward(res.grad_img);
        model.lidar_encoder->backward(res.grad_lidar);
      });
      opt.step(lr, cfg.weight_decay);
      opt.zero_grad();
      epoch_loss += batch_loss;
      ++step;
    }
    epoch_loss /= static_cast<double>(batches.size());

    const double val_metric =
        val.empty() ? epoch_loss : eval_contrastive_loss(model, store, val, cfg);
    EpochLog log{epoch, lr, epoch_loss, val_metric};
    result.log.push_back(log);
    metrics.row(log);

    Checkpoint ckpt = encoders_to_checkpoint(model, cfg);
    ckpt.meta["epoch"] = epoch;
    save_checkpoint(epoch_ckpt_path(run_dir, epoch), ckpt);

    Checkpoint state = encoders_to_checkpoint(model, cfg);
    state.meta["epoch"] = epoch;
    state.meta["next_epoch"] = epoch + 1;
    state.meta["best_val"] = val_metric;
    opt.export_state(state.tensors);
    save_checkpoint((fs::path(run_dir) / "resume_state.mckpt").string(), state);
  }

  Checkpoint final_ckpt = encoders_to_checkpoint(model, cfg);
  final_ckpt.meta["epoch"] = cfg.epochs - 1;
  final_ckpt.meta["encoder_hash"] = model.encoder_hash();
  const std::string final_path = (fs::path(run_dir) / "encoder_final.mckpt").string();
  save_checkpoint(final_path, final_ckpt);
  result.final_checkpoint = final_path;
  result.best_checkpoint = final_path;  // pretext selects the final epoch
  model.clear_caches();
  return result;
}

TrainResult train_classifier(const std::string& encoder_ckpt, const FrameStore& store,
                             const TrainConfig& cfg, const std::string& run_dir,
                             const std::string& resume_from) {
  cfg.validate();
  fs::create_directories(run_dir);
  write_config_snapshot(run_dir, cfg, TrainStage::classifier);

  Checkpoint enc = load_checkpoint(encoder_ckpt);
  if (enc.meta.value("variant", "") != to_string(cfg.variant))
    throw std::runtime_error("encoder checkpoint variant '" + enc.meta.value("variant", "") +
                             "' does not match configured '" + to_string(cfg.variant) + "'");
  if (enc.meta.value("input_width", cfg.input_width) != cfg.input_width ||
      enc.meta.value("input_height", cfg.input_height) != cfg.input_height)
    throw std::runtime_error("encoder checkpoint input size mismatch");

  DetectorModel model = DetectorModel::create(cfg.variant, cfg.input_width, cfg.input_height,
                                              cfg.margin, mix_seed(cfg.seed, 0x6EAD));
  load_tensors_into(enc, model, true, true);
  const std::uint64_t frozen_hash = model.encoder_hash();
  const std::uint64_t enc_file_hash = fnv1a64(encoder_ckpt.data(), encoder_ckpt.size());

  std::vector<nn::TensorRef> params =
      collect_trainable([&model](const nn::TensorVisitor& fn) { model.head->visit("head", fn); });
  nn::AdamW opt(params);

  int start_epoch = 0;
  double best_val = -1.0;
  if (!resume_from.empty()) {
    Checkpoint state = load_checkpoint(resume_from);
    if (state.meta.value("stage", "") != "classifier")
      throw std::runtime_error("resume state is not a classifier checkpoint");
    if (state.meta.value("variant", "") != to_string(cfg.variant))
      throw std::runtime_error("resume state variant mismatch");
    load_tensors_into(state, model, false, true);
    opt.import_state(state.tensors);
    start_epoch = state.meta.value("next_epoch", 0);
    best_val = state.meta.value("best_val", -1.0);
    if (model.encoder_hash() != frozen_hash)
      throw std::runtime_error("resume state encoders diverge from the encoder checkpoint");
  }

  std::vector<int> train_idx, val_idx;
  split_train_val(store.size(), cfg.val_fraction, cfg.seed, train_idx, val_idx);
  const ErrorRangeConfig& cal = find_error_config(cfg.registry(), cfg.calibrated_config);
  const ErrorRangeConfig& mis = find_error_config(cfg.registry(), cfg.miscalibrated_config);
  const BatchPlan val = eval_plan(val_idx, cfg, mix_seed(cfg.seed, 0x7A2));

  MetricsWriter metrics(run_dir, start_epoch > 0);
  TrainResult result;
  const std::string best_path = (fs::path(run_dir) / "classifier_best.mckpt").string();

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    std::vector<BatchPlan> batches =
        build_epoch(static_cast<int>(train_idx.size()), cal, mis, cfg.batch_size,
                    mix_seed(cfg.seed, 0xC1A55, static_cast<std::uint64_t>(epoch)));
    if (batches.empty())
      throw std::invalid_argument("not enough frames for a single balanced batch");

    double epoch_loss = 0.0;
    double train_correct = 0.0, train_total = 0.0;
    int step = 0;
    for (BatchPlan& plan : batches) {
      for (SampleSpec& spec : plan) spec.frame_index = train_idx[static_cast<std::size_t>(spec.frame_index)];
      assert_balanced(plan);
      double batch_loss = 0.0;
      for_each_micro(plan, cfg.micro_batch, [&](const BatchPlan& mp) {
        Batch mb = materialize_batch(store, mp, cfg.registry(), cfg.input_width, cfg.input_height);
        nn::Tensor ei = model.image_encoder->forward(mb.images, false);
        nn::Tensor el = model.lidar_encoder->forward(mb.depths, false);
        nn::Tensor logits = model.head->forward(concat_channels(ei, el), true);
        nn::Tensor grad;
        const double loss = nn::bce_with_logits(logits, mb.labels, &grad);
        if (!std::isfinite(loss)) {
          std::ostringstream msg;
          msg << "classifier: non-finite loss at epoch " << epoch << " step " << step
              << "; batch frames: " << joined_frames(store, mp);
          throw NumericError(msg.str());
        }
        for (std::size_t i = 0; i < logits.numel(); ++i) {
          const int pred = logits.data[i] >= 0.0f ? 1 : 0;
          train_correct += (pred == mb.labels[i]) ? 1.0 : 0.0;
        }
        train_total += static_cast<double>(logits.numel());
        const double scale = static_cast<double>(mp.size()) / plan.size();
        batch_loss += loss * scale;
        scale_tensor(grad, scale);
        model.head->backward(grad);
      });
      opt.step(lr, cfg.weight_decay);
      opt.zero_grad();
      epoch_loss += batch_loss;
      ++step;
    }
    epoch_loss /= static_cast<double>(batches.size());

    const double val_metric = val.empty() ? (train_total ? train_correct / train_total : 0.0)
                                          : eval_accuracy(model, store, val, cfg, 0.5);
    EpochLog log{epoch, lr, epoch_loss, val_metric};
    result.log.push_back(log);
    metrics.row(log);

    Checkpoint ckpt = full_model_checkpoint(model, cfg, TrainStage::classifier);
    ckpt.meta["epoch"] = epoch;
    ckpt.meta["encoder_hash"] = model.encoder_hash();
    ckpt.meta["encoder_checkpoint_hash"] = enc_file_hash;
    save_checkpoint(epoch_ckpt_path(run_dir, epoch), ckpt);
    if (val_metric >= best_val) {
      best_val = val_metric;
      save_checkpoint(best_path, ckpt);
    }

    Checkpoint state = full_model_checkpoint(model, cfg, TrainStage::classifier);
    state.meta["epoch"] = epoch;
    state.meta["next_epoch"] = epoch + 1;
    state.meta["best_val"] = best_val;
    state.meta["encoder_hash"] = model.encoder_hash();
    state.meta["encoder_checkpoint_hash"] = enc_file_hash;
    opt.export_state(state.tensors);
    save_checkpoint((fs::path(run_dir) / "resume_state.mckpt").string(), state);
  }

  if (model.encoder_hash() != frozen_hash)
    throw std::logic_error("freezing contract violated: encoder weights changed in stage 2");

  Checkpoint final_ckpt = full_model_checkpoint(model, cfg, TrainStage::classifier);
  final_ckpt.meta["epoch"] = cfg.epochs - 1;
  final_ckpt.meta["encoder_hash"] = frozen_hash;
  final_ckpt.meta["encoder_checkpoint_hash"] = enc_file_hash;
  const std::string final_path = (fs::path(run_dir) / "classifier_final.mckpt").string();
  save_checkpoint(final_path, final_ckpt);
  result.final_checkpoint = final_path;
  result.best_checkpoint = fs::exists(best_path) ? best_path : final_path;
  model.clear_caches();
  return result;
}

DetectorModel load_model(const std::string& checkpoint_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const auto variant = parse_variant(ckpt.meta.value("variant", ""));
  if (!variant) throw std::runtime_error("checkpoint has unknown variant");
  DetectorModel model = DetectorModel::create(
      *variant, ckpt.meta.value("input_width", kDefaultInputWidth),
      ckpt.meta.value("input_height", kDefaultInputHeight), ckpt.meta.value("margin", 4.0),
      ckpt.meta.value("seed", std::uint64_t{0}));
  const bool classifier = ckpt.meta.value("stage", "") == "classifier";
  load_tensors_into(ckpt, model, !classifier, true);
  return model;
}

Checkpoint model_to_checkpoint(const DetectorModel& model, TrainStage stage) {
  TrainConfig cfg;
  cfg.variant = model.variant;
  cfg.input_width = model.input_width;
  cfg.input_height = model.input_height;
  cfg.margin = model.margin;
  return stage == TrainStage::pretext ? encoders_to_checkpoint(model, cfg)
                                      : full_model_checkpoint(model, cfg, stage);
}

}  // namespace miscal
