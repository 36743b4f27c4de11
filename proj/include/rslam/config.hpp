#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rslam/errors.hpp"
#include "rslam/loop_closure.hpp"
#include "rslam/mapping.hpp"
#include "rslam/preprocess.hpp"
#include "rslam/raster.hpp"
#include "rslam/tracking.hpp"

namespace rslam {

/// Every knob of the pipeline in one flat structure. Defaults mirror the
/// reference virtual-camera setup: f = 500, optical center (0, 0), extrinsic
/// R = I, t = (-25, -25, 70), 750 x 750 image.
struct PipelineConfig {
  std::string dataset_path;
  std::string dataset_format = "kitti-bin";
  std::string groundtruth_path;
  std::string output_dir = "out";

  CameraModel camera;
  ZMap zmap;

  bool ground_enabled = true;
  RansacConfig ground;

  TrackingConfig tracking;

  int window = 5;
  MapGates gates;
  BaConfig ba;

  bool loop_enabled = true;
  LoopConfig loop;

  std::string mode = "deterministic";  // deterministic | concurrent
  std::uint64_t seed = 0;

  /// Derive per-subsystem RNG streams from the master seed.
  void finalize() {
    ground.seed = mix_seed(seed, 101);
    tracking.ransac.seed = mix_seed(seed, 202);
    loop.seed = mix_seed(seed, 303);
    if (mode != "deterministic" && mode != "concurrent") {
      throw ConfigError("mode must be 'deterministic' or 'concurrent'");
    }
    if (window < 1) throw ConfigError("mapping.window must be >= 1");
  }
};

namespace detail {

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "dataset.path", "dataset.format", "dataset.groundtruth", "output.dir",
      "camera.f", "camera.tu", "camera.tv", "camera.tx", "camera.ty", "camera.tz",
      "camera.width", "camera.height",
      "raster.zmin", "raster.zmax",
      "ground.enabled", "ground.iterations", "ground.inlier_dist",
      "ground.min_inlier_fraction", "ground.hypothesis_zmax",
      "features.blur_sigma", "features.fast_threshold", "features.target_count",
      "features.ratio", "features.orientation_radius", "features.snap_radius",
      "match_ransac.iterations", "match_ransac.inlier_dist",
      "tracking.min_inliers", "tracking.keyframe_min_frames", "tracking.keyframe_max_common",
      "mapping.window", "mapping.gate_hamming", "mapping.gate_dist",
      "mapping.ba_max_iters", "mapping.ba_lambda_init", "mapping.huber_delta",
      "loop.enabled", "loop.dist_threshold", "loop.exclusion", "loop.min_inliers",
      "loop.ratio", "loop.inlier_dist", "loop.iterations", "loop.max_iters",
      "mode", "seed"};
  return keys;
}

inline double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for " + key + ": '" + value + "'");
  }
}

inline long to_long(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid integer for " + key + ": '" + value + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

}  // namespace detail

inline void apply_config_key(PipelineConfig& cfg, const std::string& key,
                             const std::string& value) {
  using detail::to_bool;
  using detail::to_double;
  using detail::to_long;
  if (key == "dataset.path") cfg.dataset_path = value;
  else if (key == "dataset.format") cfg.dataset_format = value;
  else if (key == "dataset.groundtruth") cfg.groundtruth_path = value;
  else if (key == "output.dir") cfg.output_dir = value;
  else if (key == "camera.f") cfg.camera.f = to_double(key, value);
  else if (key == "camera.tu") cfg.camera.t_u = to_double(key, value);
  else if (key == "camera.tv") cfg.camera.t_v = to_double(key, value);
  else if (key == "camera.tx") cfg.camera.t.x() = to_double(key, value);
  else if (key == "camera.ty") cfg.camera.t.y() = to_double(key, value);
  else if (key == "camera.tz") cfg.camera.t.z() = to_double(key, value);
  else if (key == "camera.width") cfg.camera.width = static_cast<int>(to_long(key, value));
  else if (key == "camera.height") cfg.camera.height = static_cast<int>(to_long(key, value));
  else if (key == "raster.zmin") cfg.zmap.z_min = to_double(key, value);
  else if (key == "raster.zmax") cfg.zmap.z_max = to_double(key, value);
  else if (key == "ground.enabled") cfg.ground_enabled = to_bool(key, value);
  else if (key == "ground.iterations") cfg.ground.iterations = static_cast<int>(to_long(key, value));
  else if (key == "ground.inlier_dist") cfg.ground.inlier_dist_m = to_double(key, value);
  else if (key == "ground.min_inlier_fraction") cfg.ground.min_inlier_fraction = to_double(key, value);
  else if (key == "ground.hypothesis_zmax") cfg.ground.hypothesis_z_max = to_double(key, value);
  else if (key == "features.blur_sigma") cfg.tracking.features.blur_sigma = to_double(key, value);
  else if (key == "features.fast_threshold") cfg.tracking.features.fast_threshold = static_cast<int>(to_long(key, value));
  else if (key == "features.target_count") cfg.tracking.features.target_count = static_cast<int>(to_long(key, value));
  else if (key == "features.ratio") cfg.tracking.features.ratio = to_double(key, value);
  else if (key == "features.orientation_radius") cfg.tracking.features.orientation_radius = static_cast<int>(to_long(key, value));
  else if (key == "features.snap_radius") cfg.tracking.snap_radius = static_cast<int>(to_long(key, value));
  else if (key == "match_ransac.iterations") cfg.tracking.ransac.iterations = static_cast<int>(to_long(key, value));
  else if (key == "match_ransac.inlier_dist") cfg.tracking.ransac.inlier_dist_m = to_double(key, value);
  else if (key == "tracking.min_inliers") cfg.tracking.min_inliers = static_cast<int>(to_long(key, value));
  else if (key == "tracking.keyframe_min_frames") cfg.tracking.keyframe_min_frames = static_cast<int>(to_long(key, value));
  else if (key == "tracking.keyframe_max_common") cfg.tracking.keyframe_max_common = static_cast<int>(to_long(key, value));
  else if (key == "mapping.window") cfg.window = static_cast<int>(to_long(key, value));
  else if (key == "mapping.gate_hamming") cfg.gates.hamming = static_cast<int>(to_long(key, value));
  else if (key == "mapping.gate_dist") cfg.gates.dist_m = to_double(key, value);
  else if (key == "mapping.ba_max_iters") cfg.ba.max_iters = static_cast<int>(to_long(key, value));
  else if (key == "mapping.ba_lambda_init") cfg.ba.lambda_init = to_double(key, value);
  else if (key == "mapping.huber_delta") cfg.ba.huber_delta = to_double(key, value);
  else if (key == "loop.enabled") cfg.loop_enabled = to_bool(key, value);
  else if (key == "loop.dist_threshold") cfg.loop.dist_threshold_m = to_double(key, value);
  else if (key == "loop.exclusion") cfg.loop.exclusion = static_cast<int>(to_long(key, value));
  else if (key == "loop.min_inliers") cfg.loop.min_inliers = static_cast<int>(to_long(key, value));
  else if (key == "loop.ratio") cfg.loop.ratio = to_double(key, value);
  else if (key == "loop.inlier_dist") cfg.loop.inlier_dist_m = to_double(key, value);
  else if (key == "loop.iterations") cfg.loop.iterations = static_cast<int>(to_long(key, value));
  else if (key == "loop.max_iters") cfg.loop.max_iters = static_cast<int>(to_long(key, value));
  else if (key == "mode") cfg.mode = value;
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_long(key, value));
  else throw ConfigError("unknown config key: " + key);
}

/// "key = value" lines, '#' starts a comment.
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

/// Environment variable name for a config key: RSLAM_ prefix, dots to
/// underscores, upper case (e.g. features.ratio -> RSLAM_FEATURES_RATIO).
inline std::string env_name_for_key(const std::string& key) {
  std::string name = "RSLAM_";
  for (char c : key) {
    name += (c == '.') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return name;
}

/// Resolution order: defaults, config file, environment, explicit overrides.
inline PipelineConfig build_config(const std::string& config_path,
                                   const std::vector<std::pair<std::string, std::string>>& overrides) {
  PipelineConfig cfg;
  if (!config_path.empty()) {
    for (const auto& [k, v] : parse_config_file(config_path)) apply_config_key(cfg, k, v);
  }
  for (const std::string& key : detail::config_keys()) {
    if (const char* env = std::getenv(env_name_for_key(key).c_str())) {
      apply_config_key(cfg, key, env);
    }
  }
  for (const auto& [k, v] : overrides) apply_config_key(cfg, k, v);
  cfg.finalize();
  return cfg;
}

}  // namespace rslam
