#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rslam/config.hpp"
#include "rslam/dataset_io.hpp"
#include "rslam/loop_closure.hpp"
#include "rslam/mapping.hpp"
#include "rslam/preprocess.hpp"
#include "rslam/raster.hpp"
#include "rslam/tracking.hpp"

namespace rslam {

/// Per-stage wall-clock samples for the timing report.
struct StageTimings {
  std::vector<double> image_projection;
  std::vector<double> feature_extraction_matching;
  std::vector<double> pose_estimation;
  std::vector<double> registration;
  std::vector<double> local_ba;

  void merge(const StageTimings& other) {
    auto append = [](std::vector<double>& dst, const std::vector<double>& src) {
      dst.insert(dst.end(), src.begin(), src.end());
    };
    append(image_projection, other.image_projection);
    append(feature_extraction_matching, other.feature_extraction_matching);
    append(pose_estimation, other.pose_estimation);
    append(registration, other.registration);
    append(local_ba, other.local_ba);
  }
};

struct RunSummary {
  int frames = 0;
  int keyframes = 0;
  int loops_checked = 0;
  int loops_accepted = 0;
  int fallback_frames = 0;
  int noground_frames = 0;
  std::size_t dropped_nonfinite = 0;
  bool has_ate = false;
  AteStats ate;
  Trajectory trajectory;
  std::string trajectory_path;
  std::string keyframes_path;
  std::string map_path;
  std::string metrics_path;
};

namespace detail {

struct FrameRecord {
  int frame_index = 0;
  int anchor_kf = -1;
  SE3 rel_from_anchor;  // anchor keyframe sensor frame -> this frame
};

inline double stage_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stage_sd(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = stage_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline std::vector<std::string> list_cloud_files(const std::string& dir, CloudFormat format) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir)) throw IoError("dataset path does not exist: " + dir);
  if (!fs::is_directory(dir)) throw IoError("dataset path is not a directory: " + dir);
  const std::string ext = format == CloudFormat::KittiBin ? ".bin" : ".xyz";
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no *" + ext + " files in " + dir);
  return files;
}

/// Blocking bounded queue used between the pipeline stages in concurrent
/// mode (backpressure by design).
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> items_;
  std::size_t capacity_;
  bool closed_ = false;
};

}  // namespace detail

/// Keyframe store shared between the tracking, mapping and loop-closure
/// agents: serialized writes, snapshot reads, batch pose updates. Loop
/// updates take precedence over mapping updates that were computed from an
/// older snapshot.
class KeyframeDatabase {
 public:
  void insert(KeyFrame kf) {
    std::lock_guard lock(mu_);
    const int id = kf.id;
    kfs_.emplace(id, std::move(kf));
    loop_version_[id] = 0;
  }

  KeyFrame copy(int id) const {
    std::lock_guard lock(mu_);
    return kfs_.at(id);
  }

  SE3 pose(int id) const {
    std::lock_guard lock(mu_);
    return kfs_.at(id).pose;
  }

  std::map<int, SE3> pose_snapshot() const {
    std::lock_guard lock(mu_);
    std::map<int, SE3> out;
    for (const auto& [id, kf] : kfs_) out.emplace(id, kf.pose);
    return out;
  }

  std::uint64_t loop_epoch() const {
    std::lock_guard lock(mu_);
    return loop_epoch_;
  }

  /// Mapping updates apply per keyframe unless a loop optimization has
  /// touched that keyframe since the given epoch was captured.
  void apply_mapping_updates(const std::map<int, SE3>& poses, std::uint64_t captured_epoch) {
    std::lock_guard lock(mu_);
    for (const auto& [id, pose] : poses) {
      auto it = kfs_.find(id);
      if (it == kfs_.end()) continue;
      if (loop_version_[id] > captured_epoch) continue;
      it->second.pose = pose;
    }
  }

  void apply_loop_updates(const std::map<int, SE3>& poses) {
    std::lock_guard lock(mu_);
    ++loop_epoch_;
    for (const auto& [id, pose] : poses) {
      auto it = kfs_.find(id);
      if (it == kfs_.end()) continue;
      it->second.pose = pose;
      loop_version_[id] = loop_epoch_;
    }
  }

  /// Also used after observations are filled in by registration.
  void store_registered(const KeyFrame& kf) {
    std::lock_guard lock(mu_);
    auto it = kfs_.find(kf.id);
    if (it == kfs_.end()) return;
    const SE3 current_pose = it->second.pose;
    it->second = kf;
    it->second.pose = current_pose;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return kfs_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<int, KeyFrame> kfs_;
  std::map<int, std::uint64_t> loop_version_;
  std::uint64_t loop_epoch_ = 0;
};

namespace detail {

struct KeyframeJob {
  int kf_id = -1;
  int prev_kf_id = -1;
  SE3 odometry;  // prev keyframe sensor frame -> this keyframe (tracked)
};

/// Mapping agent: owns the local map; registers keyframes, culls, runs
/// local BA and publishes window pose updates.
class Mapper {
 public:
  Mapper(const PipelineConfig& cfg, KeyframeDatabase& db) : cfg_(cfg), db_(db) {
    map_.window_size = cfg.window;
  }

  void process(const KeyframeJob& job) {
    refresh_from_database();

    const auto t0 = std::chrono::steady_clock::now();
    KeyFrame kf = db_.copy(job.kf_id);
    register_keyframe(map_, std::move(kf), cfg_.gates);
    db_.store_registered(map_.keyframes.at(job.kf_id));
    cull(map_);
    timings.registration.push_back(ms_since(t0));

    const auto t1 = std::chrono::steady_clock::now();
    const std::uint64_t epoch = db_.loop_epoch();
    local_bundle_adjust(map_, cfg_.camera, cfg_.ba);
    timings.local_ba.push_back(ms_since(t1));

    std::map<int, SE3> updates;
    for (int id : map_.window) updates.emplace(id, map_.keyframes.at(id).pose);
    db_.apply_mapping_updates(updates, epoch);
  }

  /// Pulls loop-corrected poses into the local map; points follow the
  /// correction of their first observing window keyframe.
  void refresh_from_database() {
    const std::uint64_t epoch = db_.loop_epoch();
    if (epoch == seen_epoch_) return;
    seen_epoch_ = epoch;
    std::map<int, SE3> corrections;
    for (int id : map_.window) {
      const SE3 db_pose = db_.pose(id);
      corrections.emplace(id, db_pose * map_.keyframes.at(id).pose.inverse());
      map_.keyframes.at(id).pose = db_pose;
    }
    for (auto& [pid, pt] : map_.points) {
      for (int kf_id : pt.observing_keyframes) {
        auto it = corrections.find(kf_id);
        if (it != corrections.end()) {
          pt.position = it->second * pt.position;
          break;
        }
      }
    }
  }

  LocalMap& local_map() { return map_; }
  StageTimings timings;

 private:
  static double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  }

  PipelineConfig cfg_;
  KeyframeDatabase& db_;
  LocalMap map_;
  std::uint64_t seen_epoch_ = 0;
};

/// Loop-closure agent: owns the pose graph; verifies nearest-keyframe
/// candidates and publishes globally optimized poses.
class LoopCloser {
 public:
  LoopCloser(const PipelineConfig& cfg, KeyframeDatabase& db, std::ostream* log)
      : cfg_(cfg), db_(db), log_(log) {}

  void process(const KeyframeJob& job) {
    graph_.nodes[job.kf_id] = db_.pose(job.kf_id);
    if (job.prev_kf_id >= 0) {
      graph_.odometry_edges.push_back(PoseGraphEdge{job.prev_kf_id, job.kf_id, job.odometry});
    }
    if (!cfg_.loop_enabled) return;

    const auto candidates = find_nearest_keyframes(graph_, job.kf_id, cfg_.loop.dist_threshold_m,
                                                   cfg_.loop.exclusion);
    const KeyFrame query = db_.copy(job.kf_id);
    for (int cand_id : candidates) {
      ++loops_checked;
      const auto accepted = verify_candidate(query, db_.copy(cand_id), cfg_.loop);
      if (log_) {
        (*log_) << job.kf_id << " " << cand_id << " "
                << (accepted ? static_cast<int>(accepted->matches.size()) : 0) << " "
                << (accepted ? 1 : 0) << "\n";
      }
      if (!accepted) continue;

      // Optimize from the freshest pose estimates.
      for (auto& [id, pose] : graph_.nodes) pose = db_.pose(id);
      add_loop_and_optimize(graph_, *accepted, cfg_.loop.max_iters);
      db_.apply_loop_updates(graph_.nodes);
      ++loops_accepted;
      break;  // at most one loop edge per new keyframe
    }
  }

  PoseGraph& graph() { return graph_; }
  int loops_checked = 0;
  int loops_accepted = 0;

 private:
  PipelineConfig cfg_;
  KeyframeDatabase& db_;
  PoseGraph graph_;
  std::ostream* log_;
};

}  // namespace detail

/// Runs the full pipeline over a dataset directory. Deterministic mode
/// executes tracking -> mapping -> loop closure synchronously per keyframe;
/// concurrent mode runs mapping and loop closure on their own threads fed by
/// bounded queues.
inline RunSummary run_pipeline(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  const auto files = detail::list_cloud_files(cfg.dataset_path, parse_cloud_format(cfg.dataset_format));
  fs::create_directories(cfg.output_dir);

  std::ofstream track_log(fs::path(cfg.output_dir) / "tracking_log.csv");
  track_log << "frame_index,matched_count,inlier_count,fallback_used,"
               "r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n";
  std::ofstream loop_log(fs::path(cfg.output_dir) / "loop_log.txt");

  const bool concurrent = cfg.mode == "concurrent";
  KeyframeDatabase db;
  detail::Mapper mapper(cfg, db);
  detail::LoopCloser loop_closer(cfg, db, &loop_log);

  detail::BoundedQueue<detail::KeyframeJob> map_queue(4);
  detail::BoundedQueue<detail::KeyframeJob> loop_queue(4);
  std::thread map_thread, loop_thread;
  if (concurrent) {
    map_thread = std::thread([&] {
      while (auto job = map_queue.pop()) {
        mapper.process(*job);
        loop_queue.push(*job);
      }
      loop_queue.close();
    });
    loop_thread = std::thread([&] {
      while (auto job = loop_queue.pop()) loop_closer.process(*job);
    });
  }

  RunSummary summary;
  StageTimings timings;
  TrackState track;
  std::vector<detail::FrameRecord> records;
  SE3 anchor_pose_tracked;
  std::vector<Descriptor> last_kf_descriptors;
  int next_kf_id = 0;

  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  const CloudFormat format = parse_cloud_format(cfg.dataset_format);
  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    const int frame_index = static_cast<int>(fi);

    // Pull the latest correction of the anchor keyframe into the tracker.
    if (track.last_keyframe_id >= 0) {
      const SE3 db_pose = db.pose(track.last_keyframe_id);
      const bool moved = (db_pose.t - anchor_pose_tracked.t).norm() != 0.0 ||
                         (db_pose.R - anchor_pose_tracked.R).norm() != 0.0;
      if (moved) {
        const SE3 correction = db_pose * anchor_pose_tracked.inverse();
        track.current_pose = correction * track.current_pose;
        if (track.current_pose.rotation_drift() > 1e-9) track.current_pose.orthonormalize();
        anchor_pose_tracked = db_pose;
      }
    }

    PointCloud cloud;
    bool loaded = true;
    try {
      cloud = load_point_cloud(files[fi], format, frame_index);
    } catch (const std::exception& e) {
      std::cerr << "[rslam] frame " << frame_index << ": " << e.what()
                << " (fallback motion applied)\n";
      loaded = false;
    }

    TrackResult tr;
    if (loaded) {
      summary.dropped_nonfinite += cloud.dropped_nonfinite;
      const auto t0 = Clock::now();
      if (cfg.ground_enabled && cloud.size() >= 3) {
        try {
          const PlaneModel plane = fit_ground_plane(cloud, cfg.ground);
          cloud = remove_ground(cloud, plane, cfg.ground.inlier_dist_m);
        } catch (const NoGround&) {
          ++summary.noground_frames;
          std::cerr << "[rslam] frame " << frame_index << ": no ground plane, frame kept\n";
        } catch (const DegenerateCloud&) {
          ++summary.noground_frames;
        }
      }
      const RasterFrame frame = rasterize(cloud, cfg.camera, cfg.zmap);
      timings.image_projection.push_back(ms_since(t0));

      tr = track_frame(track, frame, cfg.camera, cfg.tracking);
      timings.feature_extraction_matching.push_back(tr.extract_ms + tr.match_ms);
      timings.pose_estimation.push_back(tr.pose_ms);
    } else {
      // Missing frame: advance by the constant-velocity model. Frames before
      // tracking has bootstrapped keep the identity pose.
      tr.quality.fallback_used = true;
      if (track.initialized) {
        tr.relative = track.has_motion ? fallback_motion(track) : SE3::identity();
        track.current_pose = track.current_pose * tr.relative;
        track.last_relative_motion = tr.relative;
        track.has_motion = true;
        track.frames_since_keyframe += 1;
      }
    }
    if (tr.quality.fallback_used) ++summary.fallback_frames;

    // Keyframe decision: match the live frame against the last keyframe.
    bool make_keyframe = false;
    if (next_kf_id == 0) {
      make_keyframe = loaded && track.initialized;  // first tracked frame bootstraps the map
    } else if (loaded && !track.prev_features.descriptors.empty()) {
      const auto common = match_descriptors(track.prev_features.descriptors,
                                            last_kf_descriptors, cfg.tracking.features.ratio);
      make_keyframe = keyframe_decision(track, static_cast<int>(common.size()), cfg.tracking);
    }

    if (make_keyframe) {
      const int kf_id = next_kf_id++;
      const SE3 kf_pose = track.current_pose;
      KeyFrame kf = KeyFrame::from_features(kf_id, frame_index, kf_pose, track.prev_features);
      last_kf_descriptors = kf.descriptors;

      detail::KeyframeJob job;
      job.kf_id = kf_id;
      job.prev_kf_id = kf_id > 0 ? kf_id - 1 : -1;
      job.odometry = anchor_pose_tracked.inverse() * kf_pose;
      db.insert(std::move(kf));

      if (concurrent) {
        map_queue.push(job);
      } else {
        mapper.process(job);
        loop_closer.process(job);
      }

      track.last_keyframe_id = kf_id;
      track.frames_since_keyframe = 0;
      anchor_pose_tracked = kf_pose;
      ++summary.keyframes;
    }

    detail::FrameRecord rec;
    rec.frame_index = frame_index;
    rec.anchor_kf = track.last_keyframe_id;
    rec.rel_from_anchor = anchor_pose_tracked.inverse() * track.current_pose;
    records.push_back(rec);

    const SE3& P = track.current_pose;
    track_log << frame_index << ',' << tr.quality.matched_count << ','
              << tr.quality.inlier_count << ',' << (tr.quality.fallback_used ? 1 : 0);
    const double pv[12] = {P.R(0, 0), P.R(0, 1), P.R(0, 2), P.t.x(),
                           P.R(1, 0), P.R(1, 1), P.R(1, 2), P.t.y(),
                           P.R(2, 0), P.R(2, 1), P.R(2, 2), P.t.z()};
    for (double v : pv) track_log << ',' << v;
    track_log << '\n';
    ++summary.frames;
  }

  if (concurrent) {
    map_queue.close();
    map_thread.join();
    loop_thread.join();
  }
  timings.merge(mapper.timings);
  summary.loops_checked = loop_closer.loops_checked;
  summary.loops_accepted = loop_closer.loops_accepted;

  // Final trajectory: anchor keyframe poses (after all optimization) carried
  // forward by the tracked relative motions.
  for (const auto& rec : records) {
    const SE3 pose = rec.anchor_kf >= 0
                         ? db.pose(rec.anchor_kf) * rec.rel_from_anchor
                         : rec.rel_from_anchor;
    summary.trajectory.poses.emplace_back(rec.frame_index, pose);
  }

  summary.trajectory_path = (fs::path(cfg.output_dir) / "trajectory.txt").string();
  write_trajectory(summary.trajectory, summary.trajectory_path);

  Trajectory kf_traj;
  const auto kf_poses = db.pose_snapshot();
  for (const auto& [id, pose] : kf_poses) kf_traj.poses.emplace_back(id, pose);
  summary.keyframes_path = (fs::path(cfg.output_dir) / "keyframes.txt").string();
  if (!kf_traj.empty()) write_trajectory(kf_traj, summary.keyframes_path);

  // Map export: archived points plus the still-live local map.
  summary.map_path = (fs::path(cfg.output_dir) / "map_points.txt").string();
  {
    std::ofstream map_out(summary.map_path);
    const LocalMap& lm = mapper.local_map();
    auto dump = [&](const MapPoint& pt) {
      map_out << pt.id << " " << pt.position.x() << " " << pt.position.y() << " "
              << pt.position.z() << "\n";
    };
    for (const auto& pt : lm.archived_points) dump(pt);
    for (const auto& [pid, pt] : lm.points) dump(pt);
  }

  if (!cfg.groundtruth_path.empty()) {
    const Trajectory truth = load_groundtruth(cfg.groundtruth_path);
    summary.ate = compute_ate(summary.trajectory, truth);
    summary.has_ate = true;
  }

  summary.metrics_path = (fs::path(cfg.output_dir) / "metrics.txt").string();
  {
    std::ofstream m(summary.metrics_path);
    m << "frames=" << summary.frames << "\n";
    m << "keyframes=" << summary.keyframes << "\n";
    m << "loops_checked=" << summary.loops_checked << "\n";
    m << "loops_accepted=" << summary.loops_accepted << "\n";
    m << "fallback_frames=" << summary.fallback_frames << "\n";
    m << "noground_frames=" << summary.noground_frames << "\n";
    m << "dropped_nonfinite=" << summary.dropped_nonfinite << "\n";
    auto stage = [&](const char* name, const std::vector<double>& v) {
      m << "timing." << name << ".mean_ms=" << detail::stage_mean(v) << "\n";
      m << "timing." << name << ".sd_ms=" << detail::stage_sd(v) << "\n";
      m << "timing." << name << ".count=" << v.size() << "\n";
    };
    stage("image_projection", timings.image_projection);
    stage("feature_extraction_matching", timings.feature_extraction_matching);
    stage("pose_estimation", timings.pose_estimation);
    stage("registration", timings.registration);
    stage("local_ba", timings.local_ba);
    if (summary.has_ate) {
      m << "ate.rmse=" << summary.ate.rmse << "\n";
      m << "ate.sd=" << summary.ate.sd << "\n";
      m << "ate.mean=" << summary.ate.mean << "\n";
      m << "ate.median=" << summary.ate.median << "\n";
    }
  }
  return summary;
}

}  // namespace rslam
