#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/geometry.hpp"

namespace miscal {

/// 8-bit RGB image, row-major HWC.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

/// One frame of input data: camera image, LiDAR cloud and the calibration
/// relating them.
struct Frame {
  std::string id;
  ImageU8 image;
  PointCloud cloud;
  CalibrationSet calib;
};

/// Synthetic scene with its render-time ground truth, used by tests to check
/// image/cloud alignment.
struct SynthScene {
  Frame frame;
  std::vector<std::int32_t> surface_ids;    // per pixel; -1 = no surface
  std::vector<float> rendered_depth;        // per pixel, meters (rect frame)
  std::vector<std::int32_t> point_surface;  // per cloud point
};

/// Renders a random scene of textured planes in front of a pinhole camera and
/// samples a LiDAR cloud from the same surfaces. The returned calibration
/// reproduces the ground-truth sensor pose exactly, so unperturbed
/// projections are pixel-aligned by construction.
SynthScene synth_scene(std::uint64_t seed, int n_planes, int n_points, int width, int height);

}  // namespace miscal
