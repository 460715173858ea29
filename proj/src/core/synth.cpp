#include "core/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "core/rng.hpp"

namespace miscal {

namespace {

struct RectSurface {
  Eigen::Vector3d center;  // rect-camera frame
  Eigen::Vector3d axis1, axis2, normal;
  double half1 = 0.0, half2 = 0.0;
  Eigen::Vector3d color_a, color_b;
  double cell = 0.5;
  double phase1 = 0.0, phase2 = 0.0;

  Eigen::Vector3d color_at(double s, double t) const {
    const long long ci = static_cast<long long>(std::floor((s + phase1) / cell));
    const long long cj = static_cast<long long>(std::floor((t + phase2) / cell));
    return ((ci + cj) & 1) ? color_b : color_a;
  }
};

Eigen::Vector3d random_strong_color(Rng& rng) {
  return {0.08 + 0.84 * rng.uniform(), 0.08 + 0.84 * rng.uniform(), 0.08 + 0.84 * rng.uniform()};
}

// two colors with a clear contrast so checker edges survive 8-bit quantization
void pick_color_pair(Rng& rng, Eigen::Vector3d& a, Eigen::Vector3d& b) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    a = random_strong_color(rng);
    b = random_strong_color(rng);
    if ((a - b).cwiseAbs().sum() >= 0.9) return;
  }
  b = Eigen::Vector3d::Ones() - a;
}

}  // namespace

SynthScene synth_scene(std::uint64_t seed, int n_planes, int n_points, int width, int height) {
  if (n_points < 0) throw std::invalid_argument("synth_scene: n_points must be >= 0");
  if (width <= 0 || height <= 0) throw std::invalid_argument("synth_scene: bad image size");
  Rng rng(mix_seed(seed, 0x5CE11E));

  // pinhole intrinsics, principal point near the center
  const double fu = 0.55 * width * (1.0 + 0.1 * (rng.uniform() - 0.5));
  const double fv = fu * (1.0 + 0.02 * (rng.uniform() - 0.5));
  const double cu = width * (0.5 + 0.03 * (rng.uniform() - 0.5));
  const double cv = height * (0.5 + 0.03 * (rng.uniform() - 0.5));

  CalibrationSet calib;
  calib.width = width;
  calib.height = height;
  calib.projection.setZero();
  calib.projection(0, 0) = fu;
  calib.projection(1, 1) = fv;
  calib.projection(0, 2) = cu;
  calib.projection(1, 2) = cv;
  calib.projection(2, 2) = 1.0;

  const double deg = 0.017453292519943295;
  calib.rect_rotation = euler_to_rotation(rng.uniform(-1.0, 1.0) * deg,
                                          rng.uniform(-1.0, 1.0) * deg,
                                          rng.uniform(-1.0, 1.0) * deg);

  // LiDAR (x fwd, y left, z up) to camera (x right, y down, z fwd) axis map,
  // plus a small mounting offset
  Eigen::Matrix3d base;
  base << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  calib.extrinsic.rotation = base * euler_to_rotation(rng.uniform(-3.0, 3.0) * deg,
                                                      rng.uniform(-3.0, 3.0) * deg,
                                                      rng.uniform(-3.0, 3.0) * deg);
  calib.extrinsic.translation =
      Eigen::Vector3d(rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.0), rng.uniform(-0.3, -0.1));

  // ---- scene surfaces ----
  std::vector<RectSurface> surfaces;
  surfaces.reserve(static_cast<std::size_t>(n_planes) + 1);

  {
    RectSurface wall;
    const double z = rng.uniform(18.0, 26.0);
    wall.center = Eigen::Vector3d(rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0), z);
    wall.axis1 = Eigen::Vector3d::UnitX();
    wall.axis2 = Eigen::Vector3d::UnitY();
    wall.normal = wall.axis1.cross(wall.axis2);
    wall.half1 = 60.0;
    wall.half2 = 40.0;
    pick_color_pair(rng, wall.color_a, wall.color_b);
    wall.cell = rng.uniform(1.2, 3.0);
    wall.phase1 = rng.uniform(0.0, wall.cell);
    wall.phase2 = rng.uniform(0.0, wall.cell);
    surfaces.push_back(wall);
  }

  for (int i = 0; i < n_planes; ++i) {
    RectSurface s;
    const double z = rng.uniform(4.0, 14.0);
    const double span_x = 0.45 * z * width / fu;
    const double span_y = 0.45 * z * height / fv;
    s.center = Eigen::Vector3d(rng.uniform(-span_x, span_x), rng.uniform(-span_y, span_y), z);
    const Eigen::Matrix3d tilt = euler_to_rotation(rng.uniform(-25.0, 25.0) * deg,
                                                   rng.uniform(-25.0, 25.0) * deg,
                                                   rng.uniform(-40.0, 40.0) * deg);
    s.axis1 = tilt.col(0);
    s.axis2 = tilt.col(1);
    s.normal = s.axis1.cross(s.axis2);
    s.half1 = rng.uniform(0.8, 3.2);
    s.half2 = rng.uniform(0.6, 2.6);
    pick_color_pair(rng, s.color_a, s.color_b);
    s.cell = rng.uniform(0.25, 0.9);
    s.phase1 = rng.uniform(0.0, s.cell);
    s.phase2 = rng.uniform(0.0, s.cell);
    surfaces.push_back(s);
  }

  // ---- render ----
  SynthScene scene;
  scene.frame.id = "synth_" + std::to_string(seed);
  scene.frame.calib = calib;
  scene.frame.image.width = width;
  scene.frame.image.height = height;
  scene.frame.image.rgb.assign(static_cast<std::size_t>(width) * height * 3, 0);
  scene.surface_ids.assign(static_cast<std::size_t>(width) * height, -1);
  scene.rendered_depth.assign(static_cast<std::size_t>(width) * height, 0.0f);

  for (int py = 0; py < height; ++py) {
    for (int px = 0; px < width; ++px) {
      // pixel-center ray in the rect frame (gamma is zero here)
      Eigen::Vector3d dir((px - cu) / fu, (py - cv) / fv, 1.0);
      double best_t = std::numeric_limits<double>::infinity();
      int best_id = -1;
      Eigen::Vector3d best_color = Eigen::Vector3d::Zero();
      for (std::size_t si = 0; si < surfaces.size(); ++si) {
        const RectSurface& s = surfaces[si];
        const double denom = dir.dot(s.normal);
        if (std::abs(denom) < 1e-12) continue;
        const double t = s.center.dot(s.normal) / denom;
        if (t < 0.5 || t >= best_t) continue;
        const Eigen::Vector3d hit = t * dir;
        const Eigen::Vector3d rel = hit - s.center;
        const double a = rel.dot(s.axis1);
        const double b = rel.dot(s.axis2);
        if (std::abs(a) > s.half1 || std::abs(b) > s.half2) continue;
        best_t = t;
        best_id = static_cast<int>(si);
        best_color = s.color_at(a, b);
      }
      const std::size_t idx = static_cast<std::size_t>(py) * width + px;
      if (best_id >= 0) {
        scene.surface_ids[idx] = best_id;
        scene.rendered_depth[idx] = static_cast<float>(best_t);  // dir.z == 1
        std::uint8_t* p = scene.frame.image.pixel(px, py);
        for (int c = 0; c < 3; ++c)
          p[c] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(best_color[c], 0.0, 1.0)));
      }
    }
  }

  // ---- LiDAR cloud: sample distinct hit pixels, lift along the pixel ray.
  // Border pixels are excluded so float32 round-tripping cannot push a point
  // out of the frustum.
  std::vector<std::int64_t> hit_pixels;
  hit_pixels.reserve(scene.surface_ids.size());
  for (int py = 1; py + 1 < height; ++py)
    for (int px = 1; px + 1 < width; ++px) {
      const std::size_t i = static_cast<std::size_t>(py) * width + px;
      if (scene.surface_ids[i] >= 0) hit_pixels.push_back(static_cast<std::int64_t>(i));
    }

  const int n_take = std::min<std::int64_t>(n_points, static_cast<std::int64_t>(hit_pixels.size()));
  // partial Fisher-Yates: the first n_take entries become the chosen pixels
  for (int i = 0; i < n_take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(hit_pixels.size() - i));
    std::swap(hit_pixels[i], hit_pixels[j]);
  }

  const Eigen::Matrix3d rect_inv = calib.rect_rotation.transpose();
  const Eigen::Matrix3d rot_inv = calib.extrinsic.rotation.transpose();
  scene.frame.cloud.points.reserve(n_take);
  scene.point_surface.reserve(n_take);
  for (int i = 0; i < n_take; ++i) {
    const std::int64_t idx = hit_pixels[i];
    const int px = static_cast<int>(idx % width);
    const int py = static_cast<int>(idx / width);
    const double depth = scene.rendered_depth[idx];
    Eigen::Vector3d p_rect((px - cu) / fu * depth, (py - cv) / fv * depth, depth);
    Eigen::Vector3d p_lidar = rot_inv * (rect_inv * p_rect - calib.extrinsic.translation);
    scene.frame.cloud.points.push_back(p_lidar.cast<float>());
    scene.point_surface.push_back(scene.surface_ids[idx]);
  }
  scene.frame.cloud.intensity.assign(scene.frame.cloud.points.size(), 0.5f);
  return scene;
}

}  // namespace miscal
