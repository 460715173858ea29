#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "core/synth.hpp"

namespace miscal {

/// Thrown when a dataset file is absent.
struct FileNotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a dataset file exists but cannot be decoded.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KittiCalib {
  Eigen::Matrix<double, 3, 4> p[4];
  ExtrinsicTransform tr;  // velodyne -> rectified camera 0
};

/// Parses a KITTI-odometry calib.txt (keys P0..P3 and Tr, 12 row-major values
/// each). Throws ParseError naming the offending key.
KittiCalib parse_kitti_calib(const std::string& path);

/// Decodes a velodyne .bin scan (little-endian float32 x,y,z,intensity).
PointCloud load_kitti_velodyne(const std::string& path);

/// Loads image_2/<frame>.png, velodyne/<frame>.bin and calib.txt for one
/// frame of `sequences/<sequence>` under root.
Frame load_kitti_frame(const std::string& root, const std::string& sequence, int frame);

/// Frame indices present in a sequence directory (sorted).
std::vector<int> list_kitti_frames(const std::string& root, const std::string& sequence);

/// Train/test sequence assignment; the two sets must be disjoint.
struct SplitSpec {
  std::vector<std::string> train_sequences;
  std::string test_sequence;

  void validate() const;
};

}  // namespace miscal
