#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rslam/dataset_io.hpp"
#include "rslam/errors.hpp"
#include "rslam/point_cloud.hpp"
#include "rslam/random.hpp"
#include "rslam/se3.hpp"

namespace rslam {

/// Scripted synthetic world: box and wall landmarks on a flat ground plane,
/// observed along a closed square drive with rounded corners. Landmark
/// surfaces are sampled once in world coordinates, so re-observations see
/// the same physical points.
struct SynthConfig {
  int frames = 200;
  double side_m = 80.0;       // square side length
  double corner_radius = 6.0;
  int landmarks = 60;
  double sensor_height = 1.7;
  double obstacle_spacing = 0.20;  // surface sampling grid
  double obstacle_min_z = 0.35;    // keep landmark points clear of the ground band
  double ground_noise = 0.02;
  double ground_radius = 30.0;
  int ground_points = 6000;
  double range_max = 60.0;
  std::uint64_t seed = 1;
};

struct SynthWorld {
  SynthConfig cfg;
  std::vector<Vec3> landmark_points;  // world frame
  std::vector<SE3> trajectory;        // sensor -> world, one per frame
};

namespace detail {

struct Box {
  Vec3 center;  // of the footprint, z = base height
  double w, d, h, yaw;
};

inline void sample_box(const Box& box, double spacing, double min_z, std::vector<Vec3>& out) {
  const Mat3 R = rot_z(box.yaw);
  auto emit = [&](double lx, double ly, double lz) {
    if (lz < min_z) return;
    const Vec3 local(lx - box.w / 2.0, ly - box.d / 2.0, lz);
    out.push_back(box.center + R * local);
  };
  const int nx = std::max(2, static_cast<int>(std::ceil(box.w / spacing)) + 1);
  const int ny = std::max(2, static_cast<int>(std::ceil(box.d / spacing)) + 1);
  const int nz = std::max(2, static_cast<int>(std::ceil(box.h / spacing)) + 1);
  // Four side faces.
  for (int iz = 0; iz < nz; ++iz) {
    const double lz = box.h * iz / (nz - 1);
    for (int ix = 0; ix < nx; ++ix) {
      const double lx = box.w * ix / (nx - 1);
      emit(lx, 0.0, lz);
      emit(lx, box.d, lz);
    }
    for (int iy = 1; iy + 1 < ny; ++iy) {
      const double ly = box.d * iy / (ny - 1);
      emit(0.0, ly, lz);
      emit(box.w, ly, lz);
    }
  }
  // Top face.
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      emit(box.w * ix / (nx - 1), box.d * iy / (ny - 1), box.h);
    }
  }
}

/// Closed square with rounded corners, counter-clockwise, starting on the
/// bottom edge heading +x. Returns position and heading at arc length s.
struct PathSample {
  Vec3 position;
  double yaw;
};

inline PathSample square_path(double s, double side, double r, double height) {
  const double straight = side - 2.0 * r;
  const double arc = 0.5 * M_PI * r;
  const double perimeter = 4.0 * (straight + arc);
  s = std::fmod(s, perimeter);
  if (s < 0) s += perimeter;

  // Segment-local helpers for one side + corner, rotated into place.
  const int quadrant = static_cast<int>(s / (straight + arc));
  const double local = s - quadrant * (straight + arc);

  // Base geometry for quadrant 0: straight from (r, 0) to (side - r, 0),
  // then quarter arc around (side - r, r).
  Vec3 pos;
  double yaw;
  if (local <= straight) {
    pos = Vec3(r + local, 0.0, 0.0);
    yaw = 0.0;
  } else {
    const double a = (local - straight) / r;  // 0..pi/2
    pos = Vec3(side - r + r * std::sin(a), r - r * std::cos(a), 0.0);
    yaw = a;
  }
  // Rotate by quadrant * 90 degrees around the square center.
  const Vec3 center(side / 2.0, side / 2.0, 0.0);
  const double q = quadrant * 0.5 * M_PI;
  const Mat3 Rq = rot_z(q);
  PathSample out;
  out.position = center + Rq * (pos - center);
  out.position.z() = height;
  out.yaw = yaw + q;
  return out;
}

}  // namespace detail

inline SynthWorld generate_world(const SynthConfig& cfg) {
  SynthWorld world;
  world.cfg = cfg;

  Rng rng(mix_seed(cfg.seed, 7));
  const double lo = -25.0, hi = cfg.side_m + 25.0;
  std::vector<detail::Box> boxes;
  int attempts = 0;
  while (static_cast<int>(boxes.size()) < cfg.landmarks && attempts < cfg.landmarks * 50) {
    ++attempts;
    detail::Box box;
    box.center = Vec3(uniform(rng, lo, hi), uniform(rng, lo, hi), 0.0);
    const bool wall = uniform(rng, 0.0, 1.0) < 0.3;
    if (wall) {
      box.w = uniform(rng, 6.0, 14.0);
      box.d = 0.3;
      box.h = uniform(rng, 2.0, 4.0);
    } else {
      box.w = uniform(rng, 0.8, 4.0);
      box.d = uniform(rng, 0.8, 4.0);
      box.h = uniform(rng, 1.0, 5.0);
    }
    box.yaw = uniform(rng, 0.0, 2.0 * M_PI);

    // Keep a clear corridor around the drive path.
    const double margin = 3.0 + 0.5 * std::max(box.w, box.d);
    const double cx = box.center.x(), cy = box.center.y();
    const double dx = std::max({0.0 - cx, 0.0, cx - cfg.side_m});
    const double dy = std::max({0.0 - cy, 0.0, cy - cfg.side_m});
    const double outside = std::hypot(dx, dy);
    const double inside_x = std::min(cx, cfg.side_m - cx);
    const double inside_y = std::min(cy, cfg.side_m - cy);
    const double dist_to_ring =
        (dx > 0 || dy > 0) ? outside : std::min(inside_x, inside_y);
    if (dist_to_ring < margin) continue;
    boxes.push_back(box);
  }

  for (const auto& box : boxes) {
    detail::sample_box(box, cfg.obstacle_spacing, cfg.obstacle_min_z, world.landmark_points);
  }

  const double straight = cfg.side_m - 2.0 * cfg.corner_radius;
  const double perimeter = 4.0 * (straight + 0.5 * M_PI * cfg.corner_radius);
  world.trajectory.reserve(cfg.frames);
  for (int f = 0; f < cfg.frames; ++f) {
    const double s = perimeter * f / cfg.frames;
    const auto ps = detail::square_path(s, cfg.side_m, cfg.corner_radius, cfg.sensor_height);
    SE3 pose;
    pose.R = rot_z(ps.yaw);
    pose.t = ps.position;
    world.trajectory.push_back(pose);
  }
  return world;
}

/// Sensor-frame cloud for one frame: fixed world landmark points within
/// range plus freshly sampled noisy ground returns.
inline PointCloud synth_cloud(const SynthWorld& world, int frame) {
  const SynthConfig& cfg = world.cfg;
  const SE3& pose = world.trajectory.at(frame);
  const SE3 inv = pose.inverse();

  PointCloud cloud;
  cloud.frame_index = frame;
  for (const Vec3& p : world.landmark_points) {
    const Vec3 q = inv * p;
    if (q.head<2>().norm() <= cfg.range_max) {
      cloud.points.push_back(q);
      cloud.reflectance.push_back(0.0f);
    }
  }

  Rng rng(mix_seed(cfg.seed, 1000003ULL * static_cast<std::uint64_t>(frame) + 13));
  for (int i = 0; i < cfg.ground_points; ++i) {
    const double r = cfg.ground_radius * std::sqrt(uniform(rng, 0.0, 1.0));
    const double a = uniform(rng, 0.0, 2.0 * M_PI);
    const Vec3 world_pt(pose.t.x() + r * std::cos(a), pose.t.y() + r * std::sin(a),
                        cfg.ground_noise * gaussian(rng));
    cloud.points.push_back(inv * world_pt);
    cloud.reflectance.push_back(0.0f);
  }
  return cloud;
}

/// Materializes the synthetic dataset on disk: numbered kitti-bin clouds and
/// a KITTI-format groundtruth.txt.
inline void write_synth_dataset(const SynthWorld& world, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char name[32];
  for (int f = 0; f < world.cfg.frames; ++f) {
    const PointCloud cloud = synth_cloud(world, f);
    std::snprintf(name, sizeof(name), "%06d.bin", f);
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw IoError("cannot write cloud file in " + dir);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      const float rec[4] = {static_cast<float>(cloud.points[i].x()),
                            static_cast<float>(cloud.points[i].y()),
                            static_cast<float>(cloud.points[i].z()), cloud.reflectance[i]};
      out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
  }
  Trajectory gt;
  for (int f = 0; f < world.cfg.frames; ++f) gt.poses.emplace_back(f, world.trajectory[f]);
  write_trajectory(gt, (fs::path(dir) / "groundtruth.txt").string());
}

}  // namespace rslam
