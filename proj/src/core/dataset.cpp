#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

#include "core/rng.hpp"

namespace fs = std::filesystem;

namespace miscal {

FrameStore FrameStore::synthetic(int n_frames, int width, int height, int points_per_frame,
                                 std::uint64_t seed) {
  if (n_frames <= 0) throw std::invalid_argument("synthetic store needs at least one frame");
  FrameStore store;
  store.frames_.reserve(static_cast<std::size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) {
    Rng scene_rng(mix_seed(seed, 0x5EEDF00D, static_cast<std::uint64_t>(i)));
    const int n_planes = 8 + static_cast<int>(scene_rng.uniform_int(6));
    SynthScene scene = synth_scene(mix_seed(seed, 0xFACADE, static_cast<std::uint64_t>(i)),
                                   n_planes, points_per_frame, width, height);
    scene.frame.id = "synth_" + std::to_string(i);
    store.frames_.push_back(std::move(scene.frame));
  }
  store.description_ = "synthetic(" + std::to_string(n_frames) + " frames, " +
                       std::to_string(width) + "x" + std::to_string(height) + ", seed " +
                       std::to_string(seed) + ")";
  return store;
}

FrameStore FrameStore::kitti(const std::string& root, const std::vector<std::string>& sequences,
                             int max_frames_per_seq, const std::string& holdout_sequence) {
  if (!holdout_sequence.empty()) SplitSpec{sequences, holdout_sequence}.validate();
  FrameStore store;
  for (const std::string& seq : sequences) {
    std::vector<int> frames = list_kitti_frames(root, seq);
    if (max_frames_per_seq > 0 && static_cast<int>(frames.size()) > max_frames_per_seq)
      frames.resize(static_cast<std::size_t>(max_frames_per_seq));
    for (int f : frames) store.frames_.push_back(load_kitti_frame(root, seq, f));
  }
  if (store.frames_.empty()) throw std::runtime_error("no KITTI frames found under " + root);
  store.description_ = "kitti(" + root + ", " + std::to_string(store.frames_.size()) + " frames)";
  return store;
}

nn::Tensor crop_image_to_tensor(const ImageU8& image, int out_w, int out_h) {
  nn::Tensor out({3, out_h, out_w});
  const int x0 = (image.width - out_w) / 2;
  const int y0 = (image.height - out_h) / 2;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int y = 0; y < out_h; ++y) {
    const int sy = y + y0;
    if (sy < 0 || sy >= image.height) continue;
    for (int x = 0; x < out_w; ++x) {
      const int sx = x + x0;
      if (sx < 0 || sx >= image.width) continue;
      const std::uint8_t* px = image.pixel(sx, sy);
      const std::size_t at = static_cast<std::size_t>(y) * out_w + x;
      out.data[at] = px[0] / 255.0f;
      out.data[plane + at] = px[1] / 255.0f;
      out.data[2 * plane + at] = px[2] / 255.0f;
    }
  }
  return out;
}

nn::Tensor crop_depth_to_tensor(const DepthMap& depth, int out_w, int out_h) {
  nn::Tensor out({1, out_h, out_w});
  const int x0 = (depth.width - out_w) / 2;
  const int y0 = (depth.height - out_h) / 2;
  for (int y = 0; y < out_h; ++y) {
    const int sy = y + y0;
    if (sy < 0 || sy >= depth.height) continue;
    for (int x = 0; x < out_w; ++x) {
      const int sx = x + x0;
      if (sx < 0 || sx >= depth.width) continue;
      out.data[static_cast<std::size_t>(y) * out_w + x] = depth.at(sx, sy);
    }
  }
  return out;
}

SamplePair make_sample_with(const Frame& frame, const Perturbation& p, int out_w, int out_h) {
  SamplePair pair;
  pair.perturbation = p;
  pair.label = p.label;
  pair.frame_id = frame.id;
  const CalibrationSet perturbed = apply_extrinsic(frame.calib, p);
  const ProjectionResult proj = project(frame.cloud, perturbed);
  const DepthMap depth = rasterize(proj.points, frame.calib.width, frame.calib.height,
                                   kDefaultMaxRange);
  pair.image = crop_image_to_tensor(frame.image, out_w, out_h);
  pair.depth = crop_depth_to_tensor(depth, out_w, out_h);
  return pair;
}

SamplePair make_sample(const Frame& frame, const ErrorRangeConfig& config, std::uint64_t seed,
                       int out_w, int out_h) {
  return make_sample_with(frame, sample_perturbation(config, seed), out_w, out_h);
}

std::vector<BatchPlan> build_epoch(int n_frames, const ErrorRangeConfig& calibrated,
                                   const ErrorRangeConfig& miscalibrated, int batch_size,
                                   std::uint64_t seed) {
  if (batch_size <= 0 || batch_size % 2 != 0)
    throw std::invalid_argument("batch_size must be even and positive");
  std::vector<int> order(static_cast<std::size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed, 0x0E70C4));
  rng.shuffle(order);

  const int per_side = n_frames / 2;
  const int half = batch_size / 2;
  const int n_batches = per_side / half;

  std::vector<BatchPlan> batches;
  batches.reserve(static_cast<std::size_t>(n_batches));
  for (int b = 0; b < n_batches; ++b) {
    BatchPlan plan;
    plan.reserve(static_cast<std::size_t>(batch_size));
    for (int k = 0; k < half; ++k) {
      const int idx0 = order[static_cast<std::size_t>(b * half + k)];
      const int idx1 = order[static_cast<std::size_t>(per_side + b * half + k)];
      plan.push_back({idx0, calibrated.label, calibrated.name,
                      mix_seed(seed, static_cast<std::uint64_t>(idx0), 0)});
      plan.push_back({idx1, miscalibrated.label, miscalibrated.name,
                      mix_seed(seed, static_cast<std::uint64_t>(idx1), 1)});
    }
    rng.shuffle(plan);
    batches.push_back(std::move(plan));
  }
  return batches;
}

void validate_sample(const SamplePair& pair) {
  if (pair.image.shape.size() != 3 || pair.depth.shape.size() != 3 ||
      pair.image.dim(1) != pair.depth.dim(1) || pair.image.dim(2) != pair.depth.dim(2))
    throw std::logic_error("sample invariant: image/depth dimensions differ");
  if (pair.label != pair.perturbation.label)
    throw std::logic_error("sample invariant: label disagrees with perturbation");
  for (float v : pair.depth.data)
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::logic_error("sample invariant: depth value outside [0,1]");
}

Batch materialize_batch(const FrameStore& store, const BatchPlan& plan,
                        const std::vector<ErrorRangeConfig>& registry, int out_w, int out_h) {
  std::vector<SamplePair> samples;
  samples.reserve(plan.size());
  for (const SampleSpec& spec : plan) {
    const ErrorRangeConfig& cfg = find_error_config(registry, spec.config);
    samples.push_back(make_sample(store.frame(spec.frame_index), cfg, spec.seed, out_w, out_h));
  }
  validate_sample(samples.front());  // sampled-subset invariant check
  return stack_samples(samples);
}

Batch stack_samples(const std::vector<SamplePair>& samples) {
  if (samples.empty()) throw std::invalid_argument("stack_samples: empty batch");
  const int n = static_cast<int>(samples.size());
  const int h = samples[0].image.dim(1), w = samples[0].image.dim(2);
  Batch batch;
  batch.images = nn::Tensor({n, 3, h, w});
  batch.depths = nn::Tensor({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    const SamplePair& s = samples[static_cast<std::size_t>(i)];
    if (s.image.dim(1) != h || s.image.dim(2) != w || s.depth.dim(1) != h || s.depth.dim(2) != w)
      throw std::invalid_argument("stack_samples: inconsistent sample sizes");
    std::copy(s.image.data.begin(), s.image.data.end(), batch.images.sample_ptr(i));
    std::copy(s.depth.data.begin(), s.depth.data.end(), batch.depths.sample_ptr(i));
    batch.labels.push_back(s.label);
    batch.frame_ids.push_back(s.frame_id);
  }
  return batch;
}

namespace {

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out)
    if (c == ' ' || c == '/') c = '_';
  return out;
}

void write_png_rgb(const fs::path& path, const nn::Tensor& image) {
  const int h = image.dim(1), w = image.dim(2);
  cv::Mat bgr(h, w, CV_8UC3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * w + x;
      auto to_u8 = [](float v) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      };
      bgr.at<cv::Vec3b>(y, x) =
          cv::Vec3b(to_u8(image.data[2 * plane + at]), to_u8(image.data[plane + at]),
                    to_u8(image.data[at]));
    }
  }
  if (!cv::imwrite(path.string(), bgr))
    throw std::runtime_error("cannot write image: " + path.string());
}

void write_png_depth16(const fs::path& path, const nn::Tensor& depth) {
  const int h = depth.dim(1), w = depth.dim(2);
  cv::Mat gray(h, w, CV_16UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = depth.data[static_cast<std::size_t>(y) * w + x];
      gray.at<std::uint16_t>(y, x) =
          static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
    }
  if (!cv::imwrite(path.string(), gray))
    throw std::runtime_error("cannot write depth map: " + path.string());
}

}  // namespace

void export_split(const FrameStore& store, const ErrorRangeConfig& config,
                  const std::string& out_dir, std::uint64_t seed, int out_w, int out_h) {
  const fs::path split_dir = fs::path(out_dir) / sanitize(config.name);
  fs::create_directories(split_dir / "images");
  fs::create_directories(split_dir / "depth");

  std::ofstream manifest(split_dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest under " + split_dir.string());
  manifest << "frame_id,label,source_config,rot_roll_deg,rot_pitch_deg,rot_yaw_deg,"
              "trans_x_m,trans_y_m,trans_z_m,focal_scale_u,focal_scale_v,principal_scale_u,"
              "principal_scale_v,skew_value_px,intrinsic_difficulty\n";
  manifest.precision(17);

  for (int i = 0; i < store.size(); ++i) {
    const SamplePair pair = make_sample(store.frame(i), config,
                                        mix_seed(seed, 0xEC590, static_cast<std::uint64_t>(i)),
                                        out_w, out_h);
    char name[16];
    std::snprintf(name, sizeof(name), "%06d", i);
    write_png_rgb(split_dir / "images" / (std::string(name) + ".png"), pair.image);
    write_png_depth16(split_dir / "depth" / (std::string(name) + ".png"), pair.depth);

    const Perturbation& p = pair.perturbation;
    manifest << pair.frame_id << ',' << pair.label << ',' << p.source_config << ','
             << p.rot_errors_deg[0] << ',' << p.rot_errors_deg[1] << ',' << p.rot_errors_deg[2]
             << ',' << p.trans_error.x() << ',' << p.trans_error.y() << ',' << p.trans_error.z();
    if (p.intrinsic_error) {
      const IntrinsicError& e = *p.intrinsic_error;
      manifest << ',' << e.focal_scale_u << ',' << e.focal_scale_v << ',' << e.principal_scale_u
               << ',' << e.principal_scale_v << ',' << e.skew_value << ','
               << to_string(e.difficulty);
    } else {
      manifest << ",1,1,1,1,0,";
    }
    manifest << '\n';
  }
}

}  // namespace miscal
