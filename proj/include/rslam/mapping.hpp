#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "rslam/errors.hpp"
#include "rslam/features.hpp"
#include "rslam/raster.hpp"
#include "rslam/se3.hpp"
#include "rslam/tracking.hpp"

namespace rslam {

using PointId = long;

struct KeyFrame {
  int id = -1;
  int frame_index = 0;
  PoseSE3 pose;  // sensor -> world
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;  // aligned with keypoints
  std::vector<Vec3> points_sensor;      // aligned with keypoints
  std::vector<PointId> point_ids;       // aligned; -1 until registered

  static KeyFrame from_features(int id, int frame_index, const PoseSE3& pose,
                                const FrameFeatures& feats) {
    KeyFrame kf;
    kf.id = id;
    kf.frame_index = frame_index;
    kf.pose = pose;
    kf.keypoints = feats.keypoints;
    kf.descriptors = feats.descriptors;
    kf.points_sensor = feats.points_sensor;
    kf.point_ids.assign(feats.size(), -1);
    return kf;
  }
};

struct MapPoint {
  PointId id = -1;
  Vec3 position = Vec3::Zero();  // world frame
  Descriptor descriptor;         // representative
  std::set<int> observing_keyframes;
};

struct LocalMap {
  int window_size = 5;
  std::vector<int> window;  // keyframe ids, oldest first
  std::map<int, KeyFrame> keyframes;
  std::map<PointId, MapPoint> points;
  std::vector<KeyFrame> archived_keyframes;  // evicted, append-only
  std::vector<MapPoint> archived_points;     // culled, append-only
  PointId next_point_id = 0;
};

struct MapGates {
  int hamming = 50;
  double dist_m = 0.5;
};

/// Matches the keyframe's features against the local map (descriptor gate
/// plus a 3D distance gate); matched features add observations, unmatched
/// ones become new map-points. The first keyframe seeds the map with all of
/// its points.
inline void register_keyframe(LocalMap& map, KeyFrame kf, const MapGates& gates = MapGates{}) {
  if (map.keyframes.count(kf.id)) {
    throw DuplicateKeyFrame("keyframe " + std::to_string(kf.id) + " already registered");
  }

  std::set<PointId> claimed;
  for (std::size_t i = 0; i < kf.keypoints.size(); ++i) {
    const Vec3 p_world = kf.pose * kf.points_sensor[i];
    PointId best_id = -1;
    int best_hamming = gates.hamming + 1;
    double best_dist = gates.dist_m;
    for (const auto& [pid, pt] : map.points) {
      if (claimed.count(pid)) continue;
      const double dist = (pt.position - p_world).norm();
      if (dist > gates.dist_m) continue;
      const int ham = kf.descriptors[i].hamming(pt.descriptor);
      if (ham > gates.hamming) continue;
      if (ham < best_hamming || (ham == best_hamming && dist < best_dist)) {
        best_hamming = ham;
        best_dist = dist;
        best_id = pid;
      }
    }
    if (best_id >= 0) {
      kf.point_ids[i] = best_id;
      map.points[best_id].observing_keyframes.insert(kf.id);
      claimed.insert(best_id);
    } else {
      MapPoint pt;
      pt.id = map.next_point_id++;
      pt.position = p_world;
      pt.descriptor = kf.descriptors[i];
      pt.observing_keyframes.insert(kf.id);
      kf.point_ids[i] = pt.id;
      map.points.emplace(pt.id, std::move(pt));
    }
  }
  map.window.push_back(kf.id);
  map.keyframes.emplace(kf.id, std::move(kf));
}

/// Shrinks the window to the newest window_size keyframes, then drops
/// map-points no longer observed from the window. Evicted keyframes and
/// dropped points are archived, not destroyed.
inline void cull(LocalMap& map) {
  while (static_cast<int>(map.window.size()) > map.window_size) {
    const int evicted = map.window.front();
    map.window.erase(map.window.begin());
    auto it = map.keyframes.find(evicted);
    if (it != map.keyframes.end()) {
      map.archived_keyframes.push_back(std::move(it->second));
      map.keyframes.erase(it);
    }
  }
  const std::set<int> window_set(map.window.begin(), map.window.end());
  for (auto it = map.points.begin(); it != map.points.end();) {
    bool visible = false;
    for (int kf_id : it->second.observing_keyframes) {
      if (window_set.count(kf_id)) {
        visible = true;
        break;
      }
    }
    if (!visible) {
      map.archived_points.push_back(std::move(it->second));
      it = map.points.erase(it);
    } else {
      ++it;
    }
  }
}

/// Reprojection residual e = observed pixel - projection of the world point
/// through the keyframe pose (inverted: world -> sensor) and the camera.
/// Pixel coordinates are grid coordinates (optical center at grid center).
inline Vec2 reproject_residual(const PoseSE3& kf_pose, const Vec3& point_w, const Vec2& obs,
                               const CameraModel& cam) {
  const Vec3 p_s = kf_pose.inverse() * point_w;
  const GridPoint g = project_to_grid(p_s, cam);  // throws BehindCamera
  return Vec2(obs.x() - g.u, obs.y() - g.v);
}

struct BaJacobians {
  Eigen::Matrix<double, 2, 3> rotation;     // d e / d axis-angle increment
  Eigen::Matrix<double, 2, 3> translation;  // d e / d translation increment
  Eigen::Matrix<double, 2, 3> point;        // d e / d world point
};

/// Analytic residual derivatives for one observation. The pose increment is
/// the local update pose_increment(pose, [omega; rho]); all blocks agree
/// with central finite differences of reproject_residual.
inline BaJacobians ba_jacobians(const PoseSE3& kf_pose, const Vec3& point_w,
                                const CameraModel& cam) {
  const Vec3 p_s = kf_pose.inverse() * point_w;
  const Vec3 p_c = lidar_to_camera(p_s, cam);
  if (p_c.z() <= 0.0) throw BehindCamera("point has non-positive camera depth");

  const double z_inv = 1.0 / p_c.z();
  Eigen::Matrix<double, 2, 3> proj;  // d(projection)/d(p_c)
  proj << cam.f * z_inv, 0.0, -cam.f * p_c.x() * z_inv * z_inv,
      0.0, cam.f * z_inv, -cam.f * p_c.y() * z_inv * z_inv;

  const Eigen::Matrix<double, 2, 3> de_dps = -proj * cam.R;  // e = obs - proj
  BaJacobians J;
  J.rotation = de_dps * skew(p_s);
  J.translation = -de_dps;
  J.point = de_dps * kf_pose.R.transpose();
  return J;
}

struct BaConfig {
  int max_iters = 25;
  double lambda_init = 1e-4;
  double huber_delta = 0.0;  // 0 disables the robust kernel
  double rel_tol = 1e-8;
};

struct BaResult {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int accepted_steps = 0;
  bool singular = false;
};

namespace detail {

struct BaObservation {
  int pose_idx;   // index into window poses
  int point_idx;  // index into dense point array
  Vec2 obs;
};

inline double huber_weight(double err_norm, double delta) {
  if (delta <= 0.0 || err_norm <= delta) return 1.0;
  return delta / err_norm;
}

inline double ba_cost(const std::vector<SE3>& poses, const std::vector<Vec3>& points,
                      const std::vector<BaObservation>& obs, const CameraModel& cam,
                      double huber_delta, bool& valid) {
  double cost = 0.0;
  valid = true;
  for (const auto& o : obs) {
    Vec2 e;
    try {
      e = reproject_residual(poses[o.pose_idx], points[o.point_idx], o.obs, cam);
    } catch (const BehindCamera&) {
      valid = false;
      return std::numeric_limits<double>::infinity();
    }
    const double n = e.norm();
    if (huber_delta > 0.0 && n > huber_delta) {
      cost += huber_delta * (2.0 * n - huber_delta);
    } else {
      cost += e.squaredNorm();
    }
  }
  return cost;
}

}  // namespace detail

/// Levenberg-Marquardt over the window poses and their map-points,
/// minimizing the total squared reprojection error. The oldest window pose
/// is held fixed as the gauge. Point blocks are eliminated by the Schur
/// complement. Accepted cost is monotone non-increasing.
inline BaResult local_bundle_adjust(LocalMap& map, const CameraModel& cam,
                                    const BaConfig& cfg = BaConfig{}) {
  BaResult result;
  if (map.window.empty()) return result;

  // Dense indexing for window poses and the points they observe.
  std::vector<int> kf_ids(map.window.begin(), map.window.end());
  std::map<PointId, int> point_index;
  std::vector<PointId> point_ids;
  std::vector<detail::BaObservation> observations;
  for (std::size_t k = 0; k < kf_ids.size(); ++k) {
    const KeyFrame& kf = map.keyframes.at(kf_ids[k]);
    for (std::size_t i = 0; i < kf.point_ids.size(); ++i) {
      const PointId pid = kf.point_ids[i];
      if (pid < 0 || !map.points.count(pid)) continue;
      auto [it, inserted] = point_index.emplace(pid, static_cast<int>(point_ids.size()));
      if (inserted) point_ids.push_back(pid);
      observations.push_back(detail::BaObservation{static_cast<int>(k), it->second,
                                                   Vec2(kf.keypoints[i].u, kf.keypoints[i].v)});
    }
  }
  if (observations.empty()) return result;

  std::vector<SE3> poses;
  for (int id : kf_ids) poses.push_back(map.keyframes.at(id).pose);
  std::vector<Vec3> points;
  for (PointId pid : point_ids) points.push_back(map.points.at(pid).position);

  const int n_poses = static_cast<int>(poses.size());
  const int n_free_poses = n_poses - 1;  // pose 0 is the gauge
  const int n_points = static_cast<int>(points.size());

  bool valid = true;
  double cost = detail::ba_cost(poses, points, observations, cam, cfg.huber_delta, valid);
  result.initial_cost = cost;
  result.final_cost = cost;
  if (!valid || cost < 1e-16) return result;

  const std::vector<SE3> poses_in = poses;
  const std::vector<Vec3> points_in = points;

  double lambda = cfg.lambda_init;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // Assemble the normal equations in pose/point blocks.
    const int pose_dim = 6 * std::max(n_free_poses, 1);
    Eigen::MatrixXd H_pp = Eigen::MatrixXd::Zero(pose_dim, pose_dim);
    Eigen::VectorXd b_p = Eigen::VectorXd::Zero(pose_dim);
    std::vector<Mat3> H_ll(n_points, Mat3::Zero());
    std::vector<Vec3> b_l(n_points, Vec3::Zero());
    // Pose-point coupling blocks grouped by point for the Schur product.
    using CouplingBlock = std::pair<int, Eigen::Matrix<double, 6, 3>>;
    std::vector<std::vector<CouplingBlock>> W(n_points);

    bool assembled = true;
    for (const auto& o : observations) {
      Vec2 e;
      BaJacobians J;
      try {
        e = reproject_residual(poses[o.pose_idx], points[o.point_idx], o.obs, cam);
        J = ba_jacobians(poses[o.pose_idx], points[o.point_idx], cam);
      } catch (const BehindCamera&) {
        assembled = false;
        break;
      }
      const double w = detail::huber_weight(e.norm(), cfg.huber_delta);
      Eigen::Matrix<double, 2, 6> Jp;
      Jp.block<2, 3>(0, 0) = J.rotation;
      Jp.block<2, 3>(0, 3) = J.translation;

      H_ll[o.point_idx] += w * J.point.transpose() * J.point;
      b_l[o.point_idx] -= w * J.point.transpose() * e;
      if (o.pose_idx > 0) {
        const int pk = o.pose_idx - 1;
        H_pp.block<6, 6>(6 * pk, 6 * pk) += w * Jp.transpose() * Jp;
        b_p.segment<6>(6 * pk) -= w * Jp.transpose() * e;
        auto& blocks = W[o.point_idx];
        auto it = std::find_if(blocks.begin(), blocks.end(),
                               [pk](const CouplingBlock& b) { return b.first == pk; });
        if (it == blocks.end()) {
          blocks.emplace_back(pk, w * Jp.transpose() * J.point);
        } else {
          it->second += w * Jp.transpose() * J.point;
        }
      }
    }
    if (!assembled) break;

    bool solved = false;
    while (lambda < 1e12) {
      // Schur complement: eliminate the point blocks.
      std::vector<Mat3> H_ll_inv(n_points);
      bool invertible = true;
      for (int j = 0; j < n_points; ++j) {
        Mat3 damped = H_ll[j] + lambda * Mat3::Identity();
        H_ll_inv[j] = damped.inverse();
        if (!H_ll_inv[j].allFinite()) {
          invertible = false;
          break;
        }
      }
      if (!invertible) {
        result.singular = true;
        break;
      }

      Eigen::VectorXd delta_p = Eigen::VectorXd::Zero(pose_dim);
      if (n_free_poses > 0) {
        Eigen::MatrixXd S = H_pp;
        S.diagonal().array() += lambda;
        Eigen::VectorXd rhs = b_p;
        for (int j = 0; j < n_points; ++j) {
          for (const auto& [k1, W1] : W[j]) {
            rhs.segment<6>(6 * k1) -= W1 * H_ll_inv[j] * b_l[j];
            for (const auto& [k2, W2] : W[j]) {
              S.block<6, 6>(6 * k1, 6 * k2) -= W1 * H_ll_inv[j] * W2.transpose();
            }
          }
        }
        delta_p = S.ldlt().solve(rhs);
        if (!delta_p.allFinite()) {
          result.singular = true;
          break;
        }
      }

      std::vector<Vec3> delta_l(n_points);
      for (int j = 0; j < n_points; ++j) {
        delta_l[j] = b_l[j];
        for (const auto& [k1, W1] : W[j]) {
          delta_l[j] -= W1.transpose() * delta_p.segment<6>(6 * k1);
        }
      }
      bool finite = true;
      for (int j = 0; j < n_points; ++j) {
        delta_l[j] = H_ll_inv[j] * delta_l[j];
        finite = finite && delta_l[j].allFinite();
      }
      if (!finite) {
        result.singular = true;
        break;
      }

      std::vector<SE3> new_poses = poses;
      for (int k = 1; k < n_poses; ++k) {
        new_poses[k] = pose_increment(poses[k], delta_p.segment<6>(6 * (k - 1)));
      }
      std::vector<Vec3> new_points = points;
      for (int j = 0; j < n_points; ++j) new_points[j] += delta_l[j];

      bool cand_valid = true;
      const double new_cost =
          detail::ba_cost(new_poses, new_points, observations, cam, cfg.huber_delta, cand_valid);
      if (cand_valid && new_cost <= cost) {
        const double rel_change = (cost - new_cost) / std::max(cost, 1e-300);
        poses = std::move(new_poses);
        points = std::move(new_points);
        cost = new_cost;
        result.accepted_steps += 1;
        lambda = std::max(lambda * 0.5, 1e-12);
        solved = true;
        if (rel_change < cfg.rel_tol) iter = cfg.max_iters;  // converged
        break;
      }
      lambda *= 10.0;
    }
    if (!solved) break;
    if (cost < 1e-16) break;
  }

  if (result.singular && result.accepted_steps == 0) {
    poses = poses_in;
    points = points_in;
    cost = result.initial_cost;
  }

  for (std::size_t k = 0; k < poses.size(); ++k) {
    SE3 p = poses[k];
    if (p.rotation_drift() > 1e-9) p.orthonormalize();
    map.keyframes.at(kf_ids[k]).pose = p;
  }
  for (std::size_t j = 0; j < point_ids.size(); ++j) {
    map.points.at(point_ids[j]).position = points[j];
  }
  result.final_cost = cost;
  return result;
}

}  // namespace rslam
