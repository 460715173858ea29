#include "core/geometry.hpp"

#include <cmath>

namespace miscal {

bool ExtrinsicTransform::is_orthonormal(double tol) const {
  Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

bool CalibrationSet::valid() const {
  if (!extrinsic.is_orthonormal()) return false;
  ExtrinsicTransform rect{rect_rotation, Eigen::Vector3d::Zero()};
  if (!rect.is_orthonormal()) return false;
  if (!(fu() > 0.0 && fv() > 0.0)) return false;
  if (!(cu() > 0.0 && cu() < width)) return false;
  if (!(cv() > 0.0 && cv() < height)) return false;
  return true;
}

Eigen::Matrix<double, 3, 4> CalibrationSet::full_chain() const {
  Eigen::Matrix4d rect4 = Eigen::Matrix4d::Identity();
  rect4.topLeftCorner<3, 3>() = rect_rotation;
  Eigen::Matrix4d ext4 = Eigen::Matrix4d::Identity();
  ext4.topLeftCorner<3, 3>() = extrinsic.rotation;
  ext4.topRightCorner<3, 1>() = extrinsic.translation;
  return projection * rect4 * ext4;
}

Eigen::Matrix3d euler_to_rotation(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;
  return rx * ry * rz;
}

ProjectionResult project(const PointCloud& cloud, const CalibrationSet& calib) {
  ProjectionResult out;
  out.points.reserve(cloud.size());
  const Eigen::Matrix<double, 3, 4> chain = calib.full_chain();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3f& p = cloud.points[i];
    if (!std::isfinite(p.x()) || !std::isfinite(p.y()) || !std::isfinite(p.z())) {
      ++out.skipped_nonfinite;
      continue;
    }
    Eigen::Vector4d xh(p.x(), p.y(), p.z(), 1.0);
    Eigen::Vector3d y = chain * xh;
    const double depth = y.z();
    if (depth <= kMinProjectionDepth) {
      ++out.culled;
      continue;
    }
    const double u = y.x() / depth;
    const double v = y.y() / depth;
    if (u < 0.0 || u >= calib.width || v < 0.0 || v >= calib.height) {
      ++out.culled;
      continue;
    }
    out.points.push_back({u, v, depth, static_cast<std::int64_t>(i)});
  }
  return out;
}

Eigen::Vector3d unproject(double u, double v, double depth, const CalibrationSet& calib) {
  // forward: [u*d, v*d, d]ᵀ = M3 · x + m  with chain = [M3 | m]
  const Eigen::Matrix<double, 3, 4> chain = calib.full_chain();
  const Eigen::Matrix3d m3 = chain.leftCols<3>();
  const Eigen::Vector3d m = chain.col(3);
  Eigen::Vector3d y(u * depth, v * depth, depth);
  return m3.partialPivLu().solve(y - m);
}

std::size_t DepthMap::occupied_count() const {
  std::size_t n = 0;
  for (float v : values)
    if (v > 0.0f) ++n;
  return n;
}

DepthMap rasterize(const std::vector<ProjectedPoint>& projections, int width, int height,
                   double max_range) {
  DepthMap map;
  map.width = width;
  map.height = height;
  map.values.assign(static_cast<std::size_t>(width) * height, 0.0f);
  // raw depths for nearest-wins comparisons; clamp only affects stored value
  std::vector<double> raw(map.values.size(), 0.0);
  for (const ProjectedPoint& p : projections) {
    const long x = std::lround(p.u);
    const long y = std::lround(p.v);
    if (x < 0 || x >= width || y < 0 || y >= height) continue;
    const std::size_t idx = static_cast<std::size_t>(y) * width + x;
    if (raw[idx] != 0.0 && raw[idx] <= p.depth) continue;
    raw[idx] = p.depth;
    double norm = p.depth / max_range;
    if (norm < 0.0) norm = 0.0;
    if (norm > 1.0) norm = 1.0;
    map.values[idx] = static_cast<float>(norm);
  }
  return map;
}

}  // namespace miscal
