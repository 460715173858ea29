#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/dataset.hpp"
#include "core/model.hpp"

namespace miscal {

enum class TrainStage { pretext, classifier };

struct TrainConfig {
  int batch_size = 64;
  int micro_batch = 8;  // gradient-accumulation slice
  double lr_initial = 1e-3;
  double lr_after_drop = 1e-4;
  int lr_drop_epoch = 30;
  double weight_decay = 0.05;
  int epochs = 50;
  double margin = 4.0;
  std::uint64_t seed = 0;
  int input_width = kDefaultInputWidth;
  int input_height = kDefaultInputHeight;
  EncoderVariant variant = EncoderVariant::resnet18_small;
  double val_fraction = 0.05;
  std::string calibrated_config = "Calibrated";
  std::string miscalibrated_config = "Miscalibrated";
  std::vector<ErrorRangeConfig> config_registry;  // empty -> builtin table

  const std::vector<ErrorRangeConfig>& registry() const;
  void validate() const;
};

double lr_schedule(const TrainConfig& cfg, int epoch);

/// Per-epoch log row; `val_metric` is the validation contrastive loss in the
/// pretext stage and the validation accuracy in the classifier stage.
struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainResult {
  std::string final_checkpoint;
  std::string best_checkpoint;  // classifier stage: best validation accuracy
  std::vector<EpochLog> log;
};

/// Aborted training step diagnostics ride along with the exception.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stage 1: trains both encoders with the pixel-wise contrastive objective.
/// Writes per-epoch checkpoints, a resume state and metrics.csv to run_dir.
/// resume_from (optional) must point at a resume_state.mckpt.
TrainResult train_pretext(const FrameStore& store, const TrainConfig& cfg,
                          const std::string& run_dir, const std::string& resume_from = {});

/// Stage 2: loads frozen encoders from encoder_ckpt and trains the classifier
/// head with binary cross-entropy. Refuses checkpoints whose variant or input
/// size disagree with cfg.
TrainResult train_classifier(const std::string& encoder_ckpt, const FrameStore& store,
                             const TrainConfig& cfg, const std::string& run_dir,
                             const std::string& resume_from = {});

/// Loads a detector (either stage's checkpoint) for evaluation.
DetectorModel load_model(const std::string& checkpoint_path);

/// Serializes model weights (+meta) to a checkpoint structure.
Checkpoint model_to_checkpoint(const DetectorModel& model, TrainStage stage);

}  // namespace miscal
