#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/rng.hpp"

namespace miscal {

/// Named magnitude band for sampling extrinsic errors. Bounds are absolute
/// values; each component is drawn per-axis with an independent random sign.
struct ErrorRangeConfig {
  std::string name;
  std::array<double, 2> trans_range{0.0, 0.0};  // meters, 0 <= lo <= hi
  std::array<double, 2> rot_range{0.0, 0.0};    // degrees, 0 <= lo <= hi
  int label = 0;                                // 0 calibrated, 1 miscalibrated

  bool valid() const {
    return trans_range[0] >= 0.0 && trans_range[0] <= trans_range[1] &&
           rot_range[0] >= 0.0 && rot_range[0] <= rot_range[1] && (label == 0 || label == 1);
  }
};

enum class IntrinsicDifficulty { easy, medium, hard };

const char* to_string(IntrinsicDifficulty d);

/// Percentage band [lo, hi] for a difficulty level (n% errors).
std::array<double, 2> intrinsic_band(IntrinsicDifficulty d);

/// Parses "easy" / "medium" / "hard" (also accepts "Intrinsic easy" etc.).
std::optional<IntrinsicDifficulty> parse_intrinsic_difficulty(const std::string& name);

struct IntrinsicError {
  double focal_scale_u = 1.0;
  double focal_scale_v = 1.0;
  double principal_scale_u = 1.0;
  double principal_scale_v = 1.0;
  double skew_value = 0.0;  // pixels, replaces gamma
  IntrinsicDifficulty difficulty = IntrinsicDifficulty::easy;
};

/// One sampled calibration fault.
struct Perturbation {
  std::array<double, 3> rot_errors_deg{0.0, 0.0, 0.0};  // roll, pitch, yaw (signed)
  Eigen::Vector3d trans_error = Eigen::Vector3d::Zero();
  std::optional<IntrinsicError> intrinsic_error;
  int label = 0;
  std::string source_config;

  bool is_zero() const;
};

/// Draws one extrinsic perturbation from the config band. Each rotation angle
/// and translation component is sampled independently as a uniform magnitude
/// inside the band times a random sign; [0,0] bands produce exactly 0.
Perturbation sample_perturbation(const ErrorRangeConfig& config, std::uint64_t rng_seed);

/// Intrinsic-only fault for the given difficulty band. fu_reference is the
/// unperturbed focal length used to resolve the skew error into pixels.
Perturbation sample_intrinsic_perturbation(IntrinsicDifficulty difficulty, double fu_reference,
                                           std::uint64_t rng_seed);

/// New calibration with rotation R·R1,err·R2,err·R3,err and translation
/// t + t_err. Applies the intrinsic error too when the perturbation carries
/// one.
CalibrationSet apply_extrinsic(const CalibrationSet& calib, const Perturbation& p);

/// Scales fu, fv, cu, cv and replaces the skew term. Throws if a focal length
/// would become non-positive.
CalibrationSet apply_intrinsic(const CalibrationSet& calib, const IntrinsicError& e);

/// The built-in train/eval bands (Tables of the dataset definition).
const std::vector<ErrorRangeConfig>& builtin_error_configs();

/// Lookup by name among `configs`; throws std::out_of_range for unknown names.
const ErrorRangeConfig& find_error_config(const std::vector<ErrorRangeConfig>& configs,
                                          const std::string& name);

/// Plain-text config format, one record per line:
///   <name> = <trans_lo> <trans_hi> <rot_lo> <rot_hi> <label>
/// '#' starts a comment. Names may contain spaces.
std::vector<ErrorRangeConfig> load_error_configs(const std::string& path);
std::vector<ErrorRangeConfig> parse_error_configs(const std::string& text,
                                                  const std::string& origin);

}  // namespace miscal
