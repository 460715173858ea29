#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/fault_injection.hpp"
#include "core/kitti.hpp"
#include "core/synth.hpp"
#include "nn/tensor.hpp"

namespace miscal {

/// One labeled training/eval unit: RGB image and projected-LiDAR depth map at
/// the network input size.
struct SamplePair {
  nn::Tensor image;  // (3, H, W), values in [0,1]
  nn::Tensor depth;  // (1, H, W), normalized depth
  int label = 0;
  Perturbation perturbation;
  std::string frame_id;
};

inline constexpr int kDefaultInputWidth = 512;
inline constexpr int kDefaultInputHeight = 256;

/// Frame collection; either synthetic scenes or a KITTI-odometry subset.
class FrameStore {
 public:
  static FrameStore synthetic(int n_frames, int width, int height, int points_per_frame,
                              std::uint64_t seed);
  /// Loads up to max_frames_per_seq frames (0 = all) from each sequence.
  /// holdout_sequence (optional) names the test sequence; loading refuses
  /// sequence lists that contain it.
  static FrameStore kitti(const std::string& root, const std::vector<std::string>& sequences,
                          int max_frames_per_seq, const std::string& holdout_sequence = {});

  int size() const { return static_cast<int>(frames_.size()); }
  const Frame& frame(int i) const { return frames_.at(static_cast<std::size_t>(i)); }
  const std::string& description() const { return description_; }

 private:
  std::vector<Frame> frames_;
  std::string description_;
};

/// Center crop with zero padding when the frame is smaller than the target.
nn::Tensor crop_image_to_tensor(const ImageU8& image, int out_w, int out_h);
nn::Tensor crop_depth_to_tensor(const DepthMap& depth, int out_w, int out_h);

/// Applies the perturbation to the frame's calibration, projects and
/// rasterizes the cloud, and packs image + depth at the target size.
SamplePair make_sample_with(const Frame& frame, const Perturbation& p, int out_w, int out_h);

/// Samples a perturbation from config (seeded) and assembles the pair.
SamplePair make_sample(const Frame& frame, const ErrorRangeConfig& config, std::uint64_t seed,
                       int out_w, int out_h);

struct SampleSpec {
  int frame_index = 0;
  int label = 0;
  std::string config;
  std::uint64_t seed = 0;
};

using BatchPlan = std::vector<SampleSpec>;

/// Deterministic balanced epoch: frames are shuffled and split half/half into
/// calibrated and miscalibrated assignments; every batch holds batch_size/2
/// of each label; the remainder that cannot fill a batch is dropped.
std::vector<BatchPlan> build_epoch(int n_frames, const ErrorRangeConfig& calibrated,
                                   const ErrorRangeConfig& miscalibrated, int batch_size,
                                   std::uint64_t seed);

struct Batch {
  nn::Tensor images;  // (n, 3, H, W)
  nn::Tensor depths;  // (n, 1, H, W)
  std::vector<int> labels;
  std::vector<std::string> frame_ids;
};

/// Type-invariant check for an assembled pair: matching spatial sizes, depth
/// values in [0,1] with implicit occupancy, label consistent with the
/// perturbation. Used on a sampled subset of every epoch.
void validate_sample(const SamplePair& pair);

Batch materialize_batch(const FrameStore& store, const BatchPlan& plan,
                        const std::vector<ErrorRangeConfig>& registry, int out_w, int out_h);

/// Stacks already-built pairs into batch tensors.
Batch stack_samples(const std::vector<SamplePair>& samples);

/// Writes one split directory: images/, depth/ (16-bit PNG, value =
/// normalized depth * 65535) and manifest.csv describing every pair.
void export_split(const FrameStore& store, const ErrorRangeConfig& config,
                  const std::string& out_dir, std::uint64_t seed, int out_w, int out_h);

}  // namespace miscal
