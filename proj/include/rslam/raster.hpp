#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "rslam/errors.hpp"
#include "rslam/image.hpp"
#include "rslam/point_cloud.hpp"
#include "rslam/se3.hpp"

namespace rslam {

/// Virtual pinhole camera: intrinsics (f, t_u, t_v) plus an extrinsic rigid
/// transform from sensor to camera coordinates, p_c = R * (p + t).
struct CameraModel {
  double f = 500.0;
  double t_u = 0.0;
  double t_v = 0.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3(-25.0, -25.0, 70.0);
  int width = 750;
  int height = 750;
};

/// Height-to-intensity map for the 8-bit plane.
struct ZMap {
  double z_min = -2.0;
  double z_max = 8.0;
};

struct Projection {
  double u = 0.0;  // image-plane coordinates, optical center at (t_u, t_v)
  double v = 0.0;
  double depth = 0.0;  // camera-frame Z
};

inline Vec3 lidar_to_camera(const Vec3& p, const CameraModel& cam) {
  return cam.R * (p + cam.t);
}

inline Projection project(const Vec3& p, const CameraModel& cam) {
  const Vec3 pc = lidar_to_camera(p, cam);
  if (pc.z() <= 0.0) throw BehindCamera("point has non-positive camera depth");
  return Projection{cam.f * pc.x() / pc.z() + cam.t_u,
                    cam.f * pc.y() / pc.z() + cam.t_v, pc.z()};
}

/// Continuous grid coordinates: the optical center (t_u, t_v) sits at the
/// center of the width x height grid.
struct GridPoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

inline GridPoint project_to_grid(const Vec3& p, const CameraModel& cam) {
  const Projection pr = project(p, cam);
  // Integer half sizes, matching the pixel indexing used by rasterize.
  return GridPoint{pr.u + cam.width / 2, pr.v + cam.height / 2, pr.depth};
}

/// Rasterized frame: 8-bit intensity plane for feature detection plus the
/// exact per-pixel height for geometry. A pixel is empty in the intensity
/// plane (value 0) iff its height is the empty marker.
struct RasterFrame {
  Image8 intensity;
  std::vector<double> height;
  int frame_index = 0;
  std::size_t skipped_behind = 0;
  std::size_t skipped_outside = 0;

  static constexpr double kEmpty = std::numeric_limits<double>::quiet_NaN();

  bool occupied(int x, int y) const {
    return intensity.in_bounds(x, y) && intensity.at(x, y) != 0;
  }
  double height_at(int x, int y) const {
    return height[static_cast<std::size_t>(y) * intensity.width + x];
  }
};

inline std::uint8_t quantize_height(double z, const ZMap& zmap) {
  const double s = 255.0 * (z - zmap.z_min) / (zmap.z_max - zmap.z_min);
  const long q = std::lround(s);
  return static_cast<std::uint8_t>(std::clamp(q, 1L, 255L));
}

/// Projects every point through the virtual camera onto the pixel grid.
/// Pixel conflicts keep the maximum z (ties keep the first-seen point);
/// the winning exact z goes to the height buffer. Points behind the camera
/// or outside the grid are skipped and counted.
inline RasterFrame rasterize(const PointCloud& cloud, const CameraModel& cam,
                             const ZMap& zmap = ZMap{}) {
  if (!(zmap.z_min < zmap.z_max)) throw ConfigError("zmap requires z_min < z_max");
  RasterFrame frame;
  frame.frame_index = cloud.frame_index;
  frame.intensity = Image8(cam.width, cam.height, 0);
  frame.height.assign(static_cast<std::size_t>(cam.width) * cam.height, RasterFrame::kEmpty);

  const int half_w = cam.width / 2;
  const int half_h = cam.height / 2;
  for (const Vec3& p : cloud.points) {
    const Vec3 pc = lidar_to_camera(p, cam);
    if (pc.z() <= 0.0) {
      ++frame.skipped_behind;
      continue;
    }
    const double u = cam.f * pc.x() / pc.z() + cam.t_u;
    const double v = cam.f * pc.y() / pc.z() + cam.t_v;
    const long px = std::lround(u) + half_w;
    const long py = std::lround(v) + half_h;
    if (px < 0 || px >= cam.width || py < 0 || py >= cam.height) {
      ++frame.skipped_outside;
      continue;
    }
    const std::size_t idx = static_cast<std::size_t>(py) * cam.width + px;
    const double z = p.z();
    if (std::isnan(frame.height[idx]) || z > frame.height[idx]) {
      frame.height[idx] = z;
      frame.intensity.data[idx] = quantize_height(z, zmap);
    }
  }
  return frame;
}

/// Inverts the projection for a pixel whose height is known: recovers the
/// camera depth from the stored z, then the full sensor-frame point.
/// (u, v) are grid coordinates as produced by project_to_grid.
inline Vec3 unproject_grid(double u, double v, double z, const CameraModel& cam) {
  const double u_cam = u - cam.width / 2;
  const double v_cam = v - cam.height / 2;
  const Vec3 dir((u_cam - cam.t_u) / cam.f, (v_cam - cam.t_v) / cam.f, 1.0);
  const Vec3 dir_sensor = cam.R.transpose() * dir;
  if (std::abs(dir_sensor.z()) < 1e-12) {
    throw BehindCamera("viewing ray parallel to the stored height plane");
  }
  const double depth = (z + cam.t.z()) / dir_sensor.z();
  if (depth <= 0.0) throw BehindCamera("recovered depth is non-positive");
  return cam.R.transpose() * (depth * dir) - cam.t;
}

inline Vec3 back_project(double u, double v, const RasterFrame& frame, const CameraModel& cam) {
  const long px = std::lround(u);
  const long py = std::lround(v);
  if (!frame.occupied(static_cast<int>(px), static_cast<int>(py))) {
    throw EmptyPixel("no point recorded at pixel");
  }
  const double z = frame.height_at(static_cast<int>(px), static_cast<int>(py));
  return unproject_grid(u, v, z, cam);
}

}  // namespace rslam
