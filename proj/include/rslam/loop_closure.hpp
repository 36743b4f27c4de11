#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "rslam/errors.hpp"
#include "rslam/features.hpp"
#include "rslam/mapping.hpp"
#include "rslam/se3.hpp"

namespace rslam {

/// Edge constraint: relative ~ T_a^{-1} * T_b (pose of b expressed in a's
/// sensor frame).
struct PoseGraphEdge {
  int a = 0;
  int b = 0;
  SE3 relative;
};

struct PoseGraph {
  std::map<int, SE3> nodes;  // keyframe id -> pose (sensor -> world)
  std::vector<PoseGraphEdge> odometry_edges;
  std::vector<PoseGraphEdge> loop_edges;
};

struct LoopCandidate {
  int query_id = -1;
  int candidate_id = -1;
  std::vector<Match> matches;  // RANSAC inliers (query index, candidate index)
  RigidTransform relative;     // query sensor frame -> candidate sensor frame
};

struct LoopConfig {
  double dist_threshold_m = 10.0;
  int exclusion = 50;  // skip this many keyframes immediately before the query
  double ratio = 0.75;
  int min_inliers = 30;
  double inlier_dist_m = 0.4;
  int iterations = 200;
  std::uint64_t seed = 0;
  int max_iters = 50;  // pose-graph LM iterations
};

/// Keyframes whose translation lies within dist_threshold_m of the query,
/// excluding the `exclusion` most recent keyframes before it, sorted by
/// distance ascending.
inline std::vector<int> find_nearest_keyframes(const PoseGraph& graph, int query_id,
                                               double dist_threshold_m, int exclusion) {
  const auto it = graph.nodes.find(query_id);
  if (it == graph.nodes.end()) throw DisconnectedGraph("query node not in graph");
  const Vec3 q = it->second.t;

  std::vector<std::pair<double, int>> hits;
  for (const auto& [id, pose] : graph.nodes) {
    if (id >= query_id || query_id - id <= exclusion) continue;
    const double d = (pose.t - q).norm();
    if (d <= dist_threshold_m) hits.emplace_back(d, id);
  }
  std::sort(hits.begin(), hits.end());
  std::vector<int> ids;
  ids.reserve(hits.size());
  for (const auto& [d, id] : hits) ids.push_back(id);
  return ids;
}

/// Feature-level verification of a loop candidate: descriptor matching with
/// the ratio test, then rigid RANSAC on the stored sensor-frame positions.
/// Rejection is a value (nullopt), not an error.
inline std::optional<LoopCandidate> verify_candidate(const KeyFrame& query,
                                                     const KeyFrame& candidate,
                                                     const LoopConfig& cfg) {
  const auto matches = match_descriptors(query.descriptors, candidate.descriptors, cfg.ratio);
  if (static_cast<int>(matches.size()) < std::max(3, cfg.min_inliers)) return std::nullopt;

  RansacResult rr;
  try {
    rr = ransac_rigid_filter(query.points_sensor, candidate.points_sensor, matches,
                             MatchRansacConfig{cfg.iterations, cfg.inlier_dist_m, cfg.seed});
  } catch (const TooFewMatches&) {
    return std::nullopt;
  } catch (const DegenerateGeometry&) {
    return std::nullopt;
  }
  if (static_cast<int>(rr.inliers.size()) < cfg.min_inliers) return std::nullopt;

  LoopCandidate out;
  out.query_id = query.id;
  out.candidate_id = candidate.id;
  out.matches = rr.inliers;
  out.relative = rr.transform;
  return out;
}

namespace detail {

inline Vec6 edge_residual(const PoseGraphEdge& edge, const SE3& Ta, const SE3& Tb) {
  return se3_log(edge.relative.inverse() * Ta.inverse() * Tb);
}

inline double graph_cost(const PoseGraph& graph) {
  double cost = 0.0;
  auto add = [&](const PoseGraphEdge& e) {
    cost += edge_residual(e, graph.nodes.at(e.a), graph.nodes.at(e.b)).squaredNorm();
  };
  for (const auto& e : graph.odometry_edges) add(e);
  for (const auto& e : graph.loop_edges) add(e);
  return cost;
}

inline void check_connected(const PoseGraph& graph) {
  if (graph.nodes.empty()) return;
  std::map<int, int> comp;
  int next = 0;
  for (const auto& [id, pose] : graph.nodes) comp[id] = next++;
  std::vector<int> parent(next);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto unite = [&](int a, int b) { parent[find(a)] = find(b); };
  auto visit = [&](const PoseGraphEdge& e) {
    if (!graph.nodes.count(e.a) || !graph.nodes.count(e.b)) {
      throw DisconnectedGraph("edge endpoint missing from graph");
    }
    unite(comp.at(e.a), comp.at(e.b));
  };
  for (const auto& e : graph.odometry_edges) visit(e);
  for (const auto& e : graph.loop_edges) visit(e);
  const int root = find(0);
  for (int i = 0; i < next; ++i) {
    if (find(i) != root) throw DisconnectedGraph("pose graph is not connected");
  }
}

}  // namespace detail

struct PoseGraphResult {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int accepted_steps = 0;
};

/// Levenberg-Marquardt over all node poses minimizing the total squared
/// se(3) log residual of every edge; the lowest-id node is frozen as the
/// gauge. Edge Jacobians come from central finite differences of the
/// residual under the local pose increment.
inline PoseGraphResult optimize_pose_graph(PoseGraph& graph, int max_iters = 50) {
  detail::check_connected(graph);
  PoseGraphResult result;
  if (graph.nodes.size() < 2) return result;

  std::vector<int> ids;
  ids.reserve(graph.nodes.size());
  for (const auto& [id, pose] : graph.nodes) ids.push_back(id);
  std::map<int, int> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = static_cast<int>(i);

  std::vector<SE3> poses;
  poses.reserve(ids.size());
  for (int id : ids) poses.push_back(graph.nodes.at(id));

  std::vector<const PoseGraphEdge*> edges;
  for (const auto& e : graph.odometry_edges) edges.push_back(&e);
  for (const auto& e : graph.loop_edges) edges.push_back(&e);

  auto total_cost = [&](const std::vector<SE3>& p) {
    double c = 0.0;
    for (const auto* e : edges) {
      c += detail::edge_residual(*e, p[index.at(e->a)], p[index.at(e->b)]).squaredNorm();
    }
    return c;
  };

  const int n_free = static_cast<int>(ids.size()) - 1;  // node ids[0] fixed
  double cost = total_cost(poses);
  result.initial_cost = cost;
  result.final_cost = cost;
  if (cost < 1e-18) return result;

  const double h = 1e-6;
  double lambda = 1e-6;
  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(6 * n_free, 6 * n_free);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(6 * n_free);

    for (const auto* e : edges) {
      const int ia = index.at(e->a), ib = index.at(e->b);
      const Vec6 r = detail::edge_residual(*e, poses[ia], poses[ib]);
      Eigen::Matrix<double, 6, 6> Ja, Jb;
      for (int k = 0; k < 6; ++k) {
        Vec6 d = Vec6::Zero();
        d(k) = h;
        Ja.col(k) = (detail::edge_residual(*e, pose_increment(poses[ia], d), poses[ib]) -
                     detail::edge_residual(*e, pose_increment(poses[ia], -d), poses[ib])) /
                    (2.0 * h);
        Jb.col(k) = (detail::edge_residual(*e, poses[ia], pose_increment(poses[ib], d)) -
                     detail::edge_residual(*e, poses[ia], pose_increment(poses[ib], -d))) /
                    (2.0 * h);
      }
      if (ia > 0) {
        H.block<6, 6>(6 * (ia - 1), 6 * (ia - 1)) += Ja.transpose() * Ja;
        b.segment<6>(6 * (ia - 1)) -= Ja.transpose() * r;
      }
      if (ib > 0) {
        H.block<6, 6>(6 * (ib - 1), 6 * (ib - 1)) += Jb.transpose() * Jb;
        b.segment<6>(6 * (ib - 1)) -= Jb.transpose() * r;
      }
      if (ia > 0 && ib > 0) {
        H.block<6, 6>(6 * (ia - 1), 6 * (ib - 1)) += Ja.transpose() * Jb;
        H.block<6, 6>(6 * (ib - 1), 6 * (ia - 1)) += Jb.transpose() * Ja;
      }
    }

    bool stepped = false;
    while (lambda < 1e12) {
      Eigen::MatrixXd damped = H;
      damped.diagonal().array() += lambda;
      const Eigen::VectorXd delta = damped.ldlt().solve(b);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      std::vector<SE3> cand = poses;
      for (std::size_t i = 1; i < cand.size(); ++i) {
        cand[i] = pose_increment(poses[i], delta.segment<6>(6 * (static_cast<int>(i) - 1)));
      }
      const double cand_cost = total_cost(cand);
      if (cand_cost <= cost) {
        const double rel_change = (cost - cand_cost) / std::max(cost, 1e-300);
        poses = std::move(cand);
        cost = cand_cost;
        result.accepted_steps += 1;
        lambda = std::max(lambda * 0.5, 1e-12);
        stepped = true;
        if (rel_change < 1e-10) iter = max_iters;
        break;
      }
      lambda *= 10.0;
    }
    if (!stepped) break;
    if (cost < 1e-18) break;
  }

  for (std::size_t i = 1; i < poses.size(); ++i) {
    SE3 p = poses[i];
    if (p.rotation_drift() > 1e-9) p.orthonormalize();
    graph.nodes.at(ids[i]) = p;
  }
  result.final_cost = cost;
  return result;
}

/// Appends the verified loop constraint and re-optimizes the whole graph.
inline PoseGraphResult add_loop_and_optimize(PoseGraph& graph, const LoopCandidate& loop,
                                             int max_iters = 50) {
  if (!graph.nodes.count(loop.query_id) || !graph.nodes.count(loop.candidate_id)) {
    throw DisconnectedGraph("loop endpoints not in graph");
  }
  graph.loop_edges.push_back(PoseGraphEdge{loop.candidate_id, loop.query_id, loop.relative});
  return optimize_pose_graph(graph, max_iters);
}

}  // namespace rslam
