#pragma once

#include <chrono>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "rslam/align.hpp"
#include "rslam/errors.hpp"
#include "rslam/features.hpp"
#include "rslam/raster.hpp"
#include "rslam/se3.hpp"

namespace rslam {

/// Pose convention throughout: sensor -> world, p_w = R * p_s + t.
using PoseSE3 = SE3;

/// Features of one frame with their back-projected sensor-frame positions.
struct FrameFeatures {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
  std::vector<Vec3> points_sensor;

  std::size_t size() const { return keypoints.size(); }
};

struct TrackingConfig {
  FeatureConfig features;
  MatchRansacConfig ransac;
  int min_inliers = 20;
  // Corners detected on the blur halo of an object may sit on a raster-empty
  // pixel; they are moved to the highest occupied pixel within this radius
  // (0 disables, unprojectable corners are then dropped).
  int snap_radius = 1;
  int keyframe_min_frames = 5;
  int keyframe_max_common = 100;
};

struct TrackState {
  PoseSE3 current_pose;
  int last_keyframe_id = -1;
  int frames_since_keyframe = 0;
  SE3 last_relative_motion;
  bool has_motion = false;
  FrameFeatures prev_features;
  bool initialized = false;
};

struct TrackQuality {
  int matched_count = 0;
  int inlier_count = 0;
  bool fallback_used = false;
  bool bootstrap = false;
};

struct TrackResult {
  SE3 relative;  // frame_t -> frame_{t-1}
  TrackQuality quality;
  double extract_ms = 0.0;  // feature extraction
  double match_ms = 0.0;    // descriptor matching
  double pose_ms = 0.0;     // geometric filtering + motion solve
};

/// Detects, orients and describes corners on the blurred intensity plane and
/// back-projects them through the height buffer. Keypoints whose pixel is
/// empty (and cannot be snapped) are dropped; duplicates after snapping keep
/// the strongest corner.
inline FrameFeatures extract_frame_features(const RasterFrame& frame, const CameraModel& cam,
                                            const TrackingConfig& cfg) {
  FrameFeatures out;
  const Image8 blurred = gaussian_blur(frame.intensity, cfg.features.blur_sigma);
  auto kps = detect_fast(blurred, cfg.features.fast_threshold, cfg.features.target_count);

  std::unordered_set<long> used_pixels;
  for (Keypoint kp : kps) {
    int x = static_cast<int>(kp.u), y = static_cast<int>(kp.v);
    if (!frame.occupied(x, y)) {
      int best_x = -1, best_y = -1;
      double best_z = -std::numeric_limits<double>::infinity();
      for (int dy = -cfg.snap_radius; dy <= cfg.snap_radius; ++dy) {
        for (int dx = -cfg.snap_radius; dx <= cfg.snap_radius; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (frame.occupied(nx, ny) && frame.height_at(nx, ny) > best_z) {
            best_z = frame.height_at(nx, ny);
            best_x = nx;
            best_y = ny;
          }
        }
      }
      if (best_x < 0) continue;
      x = best_x;
      y = best_y;
      kp.u = x;
      kp.v = y;
    }
    if (x < kDescriptorBorder || x >= blurred.width - kDescriptorBorder ||
        y < kDescriptorBorder || y >= blurred.height - kDescriptorBorder) {
      continue;
    }
    if (!used_pixels.insert(static_cast<long>(y) * blurred.width + x).second) continue;

    kp.angle = compute_orientation(blurred, kp, cfg.features.orientation_radius);
    out.descriptors.push_back(compute_brief(blurred, kp));
    out.keypoints.push_back(kp);
    out.points_sensor.push_back(back_project(kp.u, kp.v, frame, cam));
  }
  return out;
}

/// Constant-velocity fallback: repeats the last observed relative motion.
inline SE3 fallback_motion(const TrackState& state) {
  if (!state.has_motion) throw NoHistory("no prior motion to extrapolate");
  return state.last_relative_motion;
}

/// Keyframe rule: enough frames have passed and the current frame shares at
/// most keyframe_max_common matched points with the last keyframe.
inline bool keyframe_decision(const TrackState& state, int matches_with_last_kf,
                              const TrackingConfig& cfg = TrackingConfig{}) {
  return state.frames_since_keyframe >= cfg.keyframe_min_frames &&
         matches_with_last_kf <= cfg.keyframe_max_common;
}

/// One tracking step: extract features, match against the previous frame,
/// reject outliers geometrically, solve the relative motion in closed form
/// and compose the pose. Low-inlier frames use the constant-velocity
/// fallback instead of failing.
inline TrackResult track_frame(TrackState& state, const RasterFrame& frame,
                               const CameraModel& cam, const TrackingConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  auto t0 = Clock::now();
  FrameFeatures feats = extract_frame_features(frame, cam, cfg);
  TrackResult result;
  result.extract_ms = ms_since(t0);

  if (!state.initialized) {
    state.prev_features = std::move(feats);
    state.initialized = true;
    result.quality.bootstrap = true;
    return result;
  }

  t0 = Clock::now();
  const auto matches =
      match_descriptors(feats.descriptors, state.prev_features.descriptors, cfg.features.ratio);
  result.match_ms = ms_since(t0);
  result.quality.matched_count = static_cast<int>(matches.size());

  t0 = Clock::now();
  bool have_estimate = false;
  if (matches.size() >= 3) {
    try {
      const RansacResult rr =
          ransac_rigid_filter(feats.points_sensor, state.prev_features.points_sensor, matches, cfg.ransac);
      result.quality.inlier_count = static_cast<int>(rr.inliers.size());
      if (result.quality.inlier_count >= cfg.min_inliers) {
        result.relative = rr.transform;
        have_estimate = true;
      }
    } catch (const TooFewMatches&) {
    } catch (const DegenerateGeometry&) {
    }
  }
  if (!have_estimate) {
    result.relative = state.has_motion ? fallback_motion(state) : SE3::identity();
    result.quality.fallback_used = true;
  }
  result.pose_ms = ms_since(t0);

  state.current_pose = state.current_pose * result.relative;
  if (state.current_pose.rotation_drift() > 1e-9) state.current_pose.orthonormalize();
  state.last_relative_motion = result.relative;
  state.has_motion = true;
  state.prev_features = std::move(feats);
  state.frames_since_keyframe += 1;
  return result;
}

}  // namespace rslam
