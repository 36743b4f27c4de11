#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rslam/align.hpp"
#include "rslam/errors.hpp"
#include "rslam/point_cloud.hpp"
#include "rslam/se3.hpp"

namespace rslam {

enum class CloudFormat { KittiBin, AsciiXyz };

inline CloudFormat parse_cloud_format(const std::string& s) {
  if (s == "kitti-bin") return CloudFormat::KittiBin;
  if (s == "ascii-xyz") return CloudFormat::AsciiXyz;
  throw ConfigError("unknown point-cloud format: " + s);
}

struct Trajectory {
  std::vector<std::pair<int, SE3>> poses;  // frame_index strictly increasing

  bool empty() const { return poses.empty(); }
  std::size_t size() const { return poses.size(); }
};

struct AteStats {
  double rmse = 0.0;
  double sd = 0.0;
  double mean = 0.0;
  double median = 0.0;
};

namespace detail {

inline void check_monotone(const Trajectory& traj) {
  for (std::size_t i = 1; i < traj.poses.size(); ++i) {
    if (traj.poses[i].first <= traj.poses[i - 1].first) {
      throw FormatError("trajectory frame indices not strictly increasing");
    }
  }
}

}  // namespace detail

/// Reads one LIDAR sweep. kitti-bin is the raw Velodyne dump: consecutive
/// 16-byte records of little-endian float32 (x, y, z, reflectance).
/// ascii-xyz is one "x y z" triple per line. Non-finite records are dropped
/// and counted in the result.
inline PointCloud load_point_cloud(const std::string& path, CloudFormat format,
                                   int frame_index = 0) {
  PointCloud cloud;
  cloud.frame_index = frame_index;
  if (format == CloudFormat::KittiBin) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open point cloud: " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % 16 != 0) {
      throw FormatError(path + ": size " + std::to_string(bytes) +
                        " is not a multiple of the 16-byte record");
    }
    in.seekg(0);
    const std::size_t n = bytes / 16;
    std::vector<float> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("short read: " + path);
    cloud.points.reserve(n);
    cloud.reflectance.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float x = raw[4 * i], y = raw[4 * i + 1], z = raw[4 * i + 2], r = raw[4 * i + 3];
      if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
        ++cloud.dropped_nonfinite;
        continue;
      }
      cloud.points.emplace_back(x, y, z);
      cloud.reflectance.push_back(r);
    }
    return cloud;
  }

  std::ifstream in(path);
  if (!in) throw IoError("cannot open point cloud: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x)) continue;  // blank line
    if (!(ss >> y >> z)) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 'x y z'");
    }
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      ++cloud.dropped_nonfinite;
      continue;
    }
    cloud.points.emplace_back(x, y, z);
    cloud.reflectance.push_back(0.0f);
  }
  return cloud;
}

/// KITTI pose text: one line per frame, 12 numbers forming the row-major
/// 3x4 matrix [R | t]. Rotations are re-orthonormalized on load; anything
/// further than 1e-3 from orthonormal is treated as malformed.
inline Trajectory load_groundtruth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory: " + path);
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!(ss >> v[i])) {
        throw FormatError(path + ":" + std::to_string(lineno + 1) +
                          ": expected 12 numbers");
      }
      if (!std::isfinite(v[i])) {
        throw FormatError(path + ":" + std::to_string(lineno + 1) + ": non-finite entry");
      }
    }
    double extra;
    if (ss >> extra) {
      throw FormatError(path + ":" + std::to_string(lineno + 1) + ": expected 12 numbers");
    }
    SE3 pose;
    pose.R << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    pose.t = Vec3(v[3], v[7], v[11]);
    if (pose.rotation_drift() > 1e-3 || pose.R.determinant() < 0) {
      throw FormatError(path + ":" + std::to_string(lineno + 1) +
                        ": rotation is not orthonormal");
    }
    pose.orthonormalize();
    traj.poses.emplace_back(lineno, pose);
    ++lineno;
  }
  return traj;
}

/// Writes KITTI 3x4 row-major format with 17 significant digits, one line
/// per pose in frame order.
inline void write_trajectory(const Trajectory& traj, const std::string& path) {
  if (traj.empty()) throw IoError("refusing to write empty trajectory: " + path);
  detail::check_monotone(traj);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[32];
  for (const auto& [frame, pose] : traj.poses) {
    const double v[12] = {pose.R(0, 0), pose.R(0, 1), pose.R(0, 2), pose.t.x(),
                          pose.R(1, 0), pose.R(1, 1), pose.R(1, 2), pose.t.y(),
                          pose.R(2, 0), pose.R(2, 1), pose.R(2, 2), pose.t.z()};
    for (int i = 0; i < 12; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
      out << buf << (i == 11 ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

/// Absolute trajectory error: rigidly aligns estimated positions to ground
/// truth over the common frames (rotation + translation, no scale), then
/// reports statistics of the per-frame position residuals. SD is the
/// population standard deviation, so rmse^2 = mean^2 + sd^2.
inline AteStats compute_ate(const Trajectory& estimate, const Trajectory& truth) {
  detail::check_monotone(estimate);
  detail::check_monotone(truth);
  std::vector<Vec3> est_pos, truth_pos;
  std::size_t i = 0, j = 0;
  while (i < estimate.poses.size() && j < truth.poses.size()) {
    const int fi = estimate.poses[i].first;
    const int fj = truth.poses[j].first;
    if (fi == fj) {
      est_pos.push_back(estimate.poses[i].second.t);
      truth_pos.push_back(truth.poses[j].second.t);
      ++i;
      ++j;
    } else if (fi < fj) {
      ++i;
    } else {
      ++j;
    }
  }
  if (est_pos.size() < 3) {
    throw InsufficientOverlap("need >= 3 common frames, got " +
                              std::to_string(est_pos.size()));
  }

  RigidTransform T;
  try {
    T = align_svd(est_pos, truth_pos);
  } catch (const DegenerateGeometry&) {
    // Collinear trajectories: rotation is unconstrained, align centroids only.
    Vec3 c_est = Vec3::Zero(), c_truth = Vec3::Zero();
    for (std::size_t k = 0; k < est_pos.size(); ++k) {
      c_est += est_pos[k];
      c_truth += truth_pos[k];
    }
    T.R = Mat3::Identity();
    T.t = (c_truth - c_est) / static_cast<double>(est_pos.size());
  }

  std::vector<double> residuals(est_pos.size());
  for (std::size_t k = 0; k < est_pos.size(); ++k) {
    residuals[k] = (truth_pos[k] - (T.R * est_pos[k] + T.t)).norm();
  }

  AteStats stats;
  double sum = 0.0, sum_sq = 0.0;
  for (double r : residuals) {
    sum += r;
    sum_sq += r * r;
  }
  const double n = static_cast<double>(residuals.size());
  stats.mean = sum / n;
  stats.rmse = std::sqrt(sum_sq / n);
  stats.sd = std::sqrt(std::max(0.0, sum_sq / n - stats.mean * stats.mean));
  std::sort(residuals.begin(), residuals.end());
  const std::size_t m = residuals.size();
  stats.median = (m % 2 == 1) ? residuals[m / 2]
                              : 0.5 * (residuals[m / 2 - 1] + residuals[m / 2]);
  return stats;
}

}  // namespace rslam
