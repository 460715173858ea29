#include "core/fault_injection.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace miscal {

namespace {
constexpr double kDegToRad = 0.017453292519943295;

double sample_band_component(const std::array<double, 2>& band, Rng& rng) {
  if (band[0] == 0.0 && band[1] == 0.0) return 0.0;
  return rng.uniform(band[0], band[1]) * rng.sign();
}
}  // namespace

const char* to_string(IntrinsicDifficulty d) {
  switch (d) {
    case IntrinsicDifficulty::easy: return "easy";
    case IntrinsicDifficulty::medium: return "medium";
    case IntrinsicDifficulty::hard: return "hard";
  }
  return "?";
}

std::array<double, 2> intrinsic_band(IntrinsicDifficulty d) {
  switch (d) {
    case IntrinsicDifficulty::easy: return {10.0, 20.0};
    case IntrinsicDifficulty::medium: return {5.0, 10.0};
    case IntrinsicDifficulty::hard: return {3.0, 5.0};
  }
  return {0.0, 0.0};
}

std::optional<IntrinsicDifficulty> parse_intrinsic_difficulty(const std::string& name) {
  std::string s = name;
  const std::string prefix = "Intrinsic ";
  if (s.rfind(prefix, 0) == 0) s = s.substr(prefix.size());
  if (s == "easy") return IntrinsicDifficulty::easy;
  if (s == "medium") return IntrinsicDifficulty::medium;
  if (s == "hard") return IntrinsicDifficulty::hard;
  return std::nullopt;
}

bool Perturbation::is_zero() const {
  return rot_errors_deg[0] == 0.0 && rot_errors_deg[1] == 0.0 && rot_errors_deg[2] == 0.0 &&
         trans_error.isZero(0.0) && !intrinsic_error.has_value();
}

Perturbation sample_perturbation(const ErrorRangeConfig& config, std::uint64_t rng_seed) {
  if (!config.valid()) throw std::invalid_argument("invalid error range config: " + config.name);
  Rng rng(rng_seed);
  Perturbation p;
  for (int i = 0; i < 3; ++i) p.rot_errors_deg[i] = sample_band_component(config.rot_range, rng);
  for (int i = 0; i < 3; ++i) p.trans_error[i] = sample_band_component(config.trans_range, rng);
  p.label = config.label;
  p.source_config = config.name;
  return p;
}

Perturbation sample_intrinsic_perturbation(IntrinsicDifficulty difficulty, double fu_reference,
                                           std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  const std::array<double, 2> band = intrinsic_band(difficulty);
  auto scale = [&]() { return 1.0 + rng.sign() * rng.uniform(band[0], band[1]) / 100.0; };
  IntrinsicError e;
  e.focal_scale_u = scale();
  e.focal_scale_v = scale();
  e.principal_scale_u = scale();
  e.principal_scale_v = scale();
  e.skew_value = rng.sign() * rng.uniform(band[0], band[1]) / 100.0 * fu_reference;
  e.difficulty = difficulty;

  Perturbation p;
  p.intrinsic_error = e;
  p.label = 1;
  p.source_config = std::string("Intrinsic ") + to_string(difficulty);
  return p;
}

CalibrationSet apply_extrinsic(const CalibrationSet& calib, const Perturbation& p) {
  CalibrationSet out = calib;
  const Eigen::Matrix3d err = euler_to_rotation(p.rot_errors_deg[0] * kDegToRad,
                                                p.rot_errors_deg[1] * kDegToRad,
                                                p.rot_errors_deg[2] * kDegToRad);
  out.extrinsic.rotation = calib.extrinsic.rotation * err;
  out.extrinsic.translation = calib.extrinsic.translation + p.trans_error;
  if (p.intrinsic_error) out = apply_intrinsic(out, *p.intrinsic_error);
  return out;
}

CalibrationSet apply_intrinsic(const CalibrationSet& calib, const IntrinsicError& e) {
  CalibrationSet out = calib;
  out.projection(0, 0) = calib.projection(0, 0) * e.focal_scale_u;
  out.projection(1, 1) = calib.projection(1, 1) * e.focal_scale_v;
  out.projection(0, 2) = calib.projection(0, 2) * e.principal_scale_u;
  out.projection(1, 2) = calib.projection(1, 2) * e.principal_scale_v;
  out.projection(0, 1) = e.skew_value;
  if (out.projection(0, 0) <= 0.0 || out.projection(1, 1) <= 0.0)
    throw std::domain_error("intrinsic error would produce a non-positive focal length");
  return out;
}

const std::vector<ErrorRangeConfig>& builtin_error_configs() {
  static const std::vector<ErrorRangeConfig> configs = {
      {"Calibrated", {0.0, 0.02}, {0.0, 0.3}, 0},
      {"Miscalibrated", {0.04, 0.1}, {0.5, 5.0}, 1},
      {"Noise", {0.0, 0.005}, {0.0, 0.1}, 0},
      {"Unseen", {0.1, 0.2}, {5.0, 10.0}, 1},
      {"All Errors", {0.1, 0.2}, {0.5, 1.0}, 1},
      {"Rot hard", {0.0, 0.0}, {0.5, 1.0}, 1},
      {"Rot easy", {0.0, 0.0}, {1.0, 5.0}, 1},
      {"Trans hard", {0.04, 0.1}, {0.0, 0.0}, 1},
      {"Trans easy", {0.1, 0.2}, {0.0, 0.0}, 1},
  };
  return configs;
}

const ErrorRangeConfig& find_error_config(const std::vector<ErrorRangeConfig>& configs,
                                          const std::string& name) {
  for (const ErrorRangeConfig& c : configs)
    if (c.name == name) return c;
  throw std::out_of_range("unknown error config: " + name);
}

std::vector<ErrorRangeConfig> parse_error_configs(const std::string& text,
                                                  const std::string& origin) {
  std::vector<ErrorRangeConfig> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected '<name> = <t_lo> <t_hi> <r_lo> <r_hi> <label>'");
    ErrorRangeConfig cfg;
    cfg.name = line.substr(0, eq);
    const auto ne = cfg.name.find_last_not_of(" \t");
    cfg.name = (ne == std::string::npos) ? "" : cfg.name.substr(0, ne + 1);
    if (cfg.name.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty config name");

    std::istringstream vals(line.substr(eq + 1));
    if (!(vals >> cfg.trans_range[0] >> cfg.trans_range[1] >> cfg.rot_range[0] >>
          cfg.rot_range[1] >> cfg.label))
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": config '" + cfg.name +
                               "' needs five numeric values");
    std::string extra;
    if (vals >> extra)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": config '" + cfg.name +
                               "' has trailing tokens");
    if (!cfg.valid())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": config '" + cfg.name +
                               "' violates 0 <= lo <= hi or label in {0,1}");
    out.push_back(std::move(cfg));
  }
  return out;
}

std::vector<ErrorRangeConfig> load_error_configs(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open error config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_error_configs(ss.str(), path);
}

}  // namespace miscal
