#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rslam/errors.hpp"
#include "rslam/point_cloud.hpp"
#include "rslam/random.hpp"

namespace rslam {

/// Plane n . p + d = 0 with |n| = 1 and n.z >= 0 (canonical orientation).
struct PlaneModel {
  Vec3 normal = Vec3::UnitZ();
  double d = 0.0;

  double distance(const Vec3& p) const { return std::abs(normal.dot(p) + d); }
};

struct RansacConfig {
  int iterations = 200;
  double inlier_dist_m = 0.15;
  double min_inlier_fraction = 0.10;
  std::uint64_t seed = 0;
  // Hypothesis points are drawn only from below this sensor-frame height;
  // the ground is below the LIDAR. The full cloud is still tested for inliers.
  double hypothesis_z_max = 0.0;
};

namespace detail {

inline PlaneModel plane_from_points(const Vec3& a, const Vec3& b, const Vec3& c, bool& ok) {
  const Vec3 n = (b - a).cross(c - a);
  const double norm = n.norm();
  ok = norm > 1e-12;
  PlaneModel plane;
  if (ok) {
    plane.normal = n / norm;
    plane.d = -plane.normal.dot(a);
  }
  return plane;
}

inline void canonicalize(PlaneModel& plane) {
  if (plane.normal.z() < 0) {
    plane.normal = -plane.normal;
    plane.d = -plane.d;
  }
}

/// Least-squares plane through a point subset (centroid + smallest principal
/// direction of the scatter matrix).
inline PlaneModel refine_plane(const PointCloud& cloud, const std::vector<std::uint32_t>& idx) {
  Vec3 centroid = Vec3::Zero();
  for (auto i : idx) centroid += cloud.points[i];
  centroid /= static_cast<double>(idx.size());
  Mat3 scatter = Mat3::Zero();
  for (auto i : idx) {
    const Vec3 q = cloud.points[i] - centroid;
    scatter += q * q.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  PlaneModel plane;
  plane.normal = eig.eigenvectors().col(0).normalized();
  plane.d = -plane.normal.dot(centroid);
  canonicalize(plane);
  return plane;
}

}  // namespace detail

/// RANSAC plane fit: picks the 3-point hypothesis with the largest inlier
/// count, then refits by least squares over its inliers. Deterministic for a
/// given (cloud, config).
inline PlaneModel fit_ground_plane(const PointCloud& cloud, const RansacConfig& cfg) {
  const std::size_t n = cloud.size();
  if (n < 3) throw DegenerateCloud("plane fit needs >= 3 points");

  std::vector<std::uint32_t> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cloud.points[i].z() < cfg.hypothesis_z_max) pool.push_back(static_cast<std::uint32_t>(i));
  }
  if (pool.size() < 3) {
    pool.resize(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = static_cast<std::uint32_t>(i);
  }

  Rng rng(cfg.seed);
  PlaneModel best;
  std::size_t best_count = 0;
  bool any_valid = false;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::uint32_t ia = pool[uniform_index(rng, pool.size())];
    std::uint32_t ib = pool[uniform_index(rng, pool.size())];
    std::uint32_t ic = pool[uniform_index(rng, pool.size())];
    if (ia == ib || ib == ic || ia == ic) continue;
    bool ok = false;
    const PlaneModel hyp =
        detail::plane_from_points(cloud.points[ia], cloud.points[ib], cloud.points[ic], ok);
    if (!ok) continue;
    any_valid = true;
    std::size_t count = 0;
    for (const Vec3& p : cloud.points) {
      if (hyp.distance(p) <= cfg.inlier_dist_m) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best = hyp;
    }
  }
  if (!any_valid) throw DegenerateCloud("all sampled hypotheses were collinear");
  if (static_cast<double>(best_count) < cfg.min_inlier_fraction * static_cast<double>(n)) {
    throw NoGround("best inlier fraction " +
                   std::to_string(static_cast<double>(best_count) / static_cast<double>(n)) +
                   " below threshold");
  }

  std::vector<std::uint32_t> inliers;
  inliers.reserve(best_count);
  for (std::size_t i = 0; i < n; ++i) {
    if (best.distance(cloud.points[i]) <= cfg.inlier_dist_m) {
      inliers.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return detail::refine_plane(cloud, inliers);
}

/// Keeps points farther than inlier_dist_m from the plane, order preserved.
inline PointCloud remove_ground(const PointCloud& cloud, const PlaneModel& plane,
                                double inlier_dist_m) {
  PointCloud out;
  out.frame_index = cloud.frame_index;
  out.dropped_nonfinite = cloud.dropped_nonfinite;
  out.points.reserve(cloud.size());
  out.reflectance.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (plane.distance(cloud.points[i]) > inlier_dist_m) {
      out.points.push_back(cloud.points[i]);
      if (i < cloud.reflectance.size()) out.reflectance.push_back(cloud.reflectance[i]);
    }
  }
  return out;
}

}  // namespace rslam
