#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace miscal {

/// Rigid LiDAR-to-camera transform.
struct ExtrinsicTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  // RᵀR = I and det(R) = +1, both within tol.
  bool is_orthonormal(double tol = 1e-9) const;
};

/// Full projection chain: extrinsic, rectifying rotation and the 3x4
/// intrinsic projection matrix of the target camera.
struct CalibrationSet {
  ExtrinsicTransform extrinsic;
  Eigen::Matrix3d rect_rotation = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 3, 4> projection = Eigen::Matrix<double, 3, 4>::Zero();
  int width = 0;
  int height = 0;

  double fu() const { return projection(0, 0); }
  double fv() const { return projection(1, 1); }
  double cu() const { return projection(0, 2); }
  double cv() const { return projection(1, 2); }
  double skew() const { return projection(0, 1); }

  bool valid() const;

  /// Composed 3x4 matrix P · [R_rect 0; 0 1] · [R t; 0 1].
  Eigen::Matrix<double, 3, 4> full_chain() const;
};

struct PointCloud {
  // N x 3, LiDAR frame, meters.
  std::vector<Eigen::Vector3f> points;
  // optional per-point intensity; empty or size N
  std::vector<float> intensity;

  std::size_t size() const { return points.size(); }
};

/// Sparse depth raster. values holds normalized depth in [0,1]; 0 means no
/// LiDAR return at that pixel.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major H x W

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t occupied_count() const;
};

struct ProjectedPoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-frame depth (homogeneous scale), meters
  std::int64_t point_index = -1;
};

struct ProjectionResult {
  std::vector<ProjectedPoint> points;
  std::int64_t skipped_nonfinite = 0;
  std::int64_t culled = 0;  // behind camera or outside the image
};

/// R_x(roll) · R_y(pitch) · R_z(yaw), angles in radians.
Eigen::Matrix3d euler_to_rotation(double roll, double pitch, double yaw);

/// Projects every cloud point through calib. Keeps points with camera-frame
/// depth > kMinDepth whose pixel coordinates fall inside
/// [0, width) x [0, height). Non-finite points are skipped and counted.
ProjectionResult project(const PointCloud& cloud, const CalibrationSet& calib);

/// Inverse of `project` for a single pixel observation; recovers the LiDAR
/// frame point from (u, v, depth).
Eigen::Vector3d unproject(double u, double v, double depth, const CalibrationSet& calib);

/// Rasterizes projected points into a DepthMap. Each point writes
/// clamp(depth / max_range, 0, 1) at (round(u), round(v)); collisions keep
/// the smallest depth; untouched pixels stay 0.
DepthMap rasterize(const std::vector<ProjectedPoint>& projections, int width, int height,
                   double max_range);

inline constexpr double kMinProjectionDepth = 1e-6;  // meters
inline constexpr double kDefaultMaxRange = 80.0;     // meters

}  // namespace miscal
