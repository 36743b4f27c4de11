#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "rslam/dataset_io.hpp"
#include "rslam/random.hpp"

using namespace rslam;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rslam_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

SE3 random_pose(Rng& rng) {
  Vec3 axis(gaussian(rng), gaussian(rng), gaussian(rng));
  if (axis.norm() < 1e-9) axis = Vec3::UnitX();
  axis.normalize();
  SE3 T;
  T.R = so3_exp(axis * uniform(rng, 0.0, 3.0));
  T.t = Vec3(gaussian(rng), gaussian(rng), gaussian(rng)) * 50.0;
  return T;
}

}  // namespace

TEST_CASE("kitti-bin decode of hand-built bytes") {
  const float recs[8] = {1, 2, 3, 0.5f, 4, 5, 6, 0.1f};
  const auto path = temp_file("two_points.bin");
  write_bytes(path, recs, sizeof(recs));

  const PointCloud cloud = load_point_cloud(path.string(), CloudFormat::KittiBin, 3);
  REQUIRE(cloud.size() == 2);
  REQUIRE(cloud.frame_index == 3);
  REQUIRE(cloud.points[0] == Vec3(1, 2, 3));
  REQUIRE(cloud.points[1] == Vec3(4, 5, 6));
  REQUIRE(cloud.reflectance[0] == 0.5f);
  REQUIRE(cloud.reflectance[1] == 0.1f);
}

TEST_CASE("kitti-bin empty file and truncated record") {
  const auto empty = temp_file("empty.bin");
  write_bytes(empty, "", 0);
  REQUIRE(load_point_cloud(empty.string(), CloudFormat::KittiBin).size() == 0);

  const char junk[17] = {};
  const auto bad = temp_file("seventeen.bin");
  write_bytes(bad, junk, 17);
  REQUIRE_THROWS_AS(load_point_cloud(bad.string(), CloudFormat::KittiBin), FormatError);

  REQUIRE_THROWS_AS(load_point_cloud("/no/such/file.bin", CloudFormat::KittiBin), IoError);
}

TEST_CASE("non-finite records are dropped and counted") {
  float recs[8] = {1, 2, 3, 0, 4, 5, 6, 0};
  recs[1] = std::numeric_limits<float>::quiet_NaN();
  const auto path = temp_file("nan.bin");
  write_bytes(path, recs, sizeof(recs));
  const PointCloud cloud = load_point_cloud(path.string(), CloudFormat::KittiBin);
  REQUIRE(cloud.size() == 1);
  REQUIRE(cloud.dropped_nonfinite == 1);
}

TEST_CASE("ascii-xyz format") {
  const auto path = temp_file("cloud.xyz");
  std::ofstream(path) << "1 2 3\n-4.5 0 2e1\n";
  const PointCloud cloud = load_point_cloud(path.string(), CloudFormat::AsciiXyz);
  REQUIRE(cloud.size() == 2);
  REQUIRE(cloud.points[1] == Vec3(-4.5, 0, 20));
  REQUIRE(cloud.reflectance[0] == 0.0f);

  const auto bad = temp_file("bad.xyz");
  std::ofstream(bad) << "1 2\n";
  REQUIRE_THROWS_AS(load_point_cloud(bad.string(), CloudFormat::AsciiXyz), FormatError);
}

TEST_CASE("groundtruth parsing") {
  const auto path = temp_file("gt.txt");
  std::ofstream(path) << "1 0 0 0 0 1 0 0 0 0 1 0\n"
                      << "1 0 0 5 0 1 0 0 0 0 1 0\n";
  const Trajectory traj = load_groundtruth(path.string());
  REQUIRE(traj.size() == 2);
  REQUIRE(traj.poses[0].first == 0);
  REQUIRE((traj.poses[0].second.R - Mat3::Identity()).norm() < 1e-12);
  REQUIRE(traj.poses[0].second.t.norm() < 1e-12);
  REQUIRE(traj.poses[1].second.t == Vec3(5, 0, 0));

  const auto short_line = temp_file("gt_short.txt");
  std::ofstream(short_line) << "1 0 0 0 0 1 0 0 0 0 1\n";
  REQUIRE_THROWS_AS(load_groundtruth(short_line.string()), FormatError);

  const auto bad_rot = temp_file("gt_badrot.txt");
  std::ofstream(bad_rot) << "2 0 0 0 0 1 0 0 0 0 1 0\n";
  REQUIRE_THROWS_AS(load_groundtruth(bad_rot.string()), FormatError);
}

TEST_CASE("trajectory write/load round trip") {
  Rng rng(11);
  Trajectory traj;
  for (int i = 0; i < 25; ++i) traj.poses.emplace_back(i, random_pose(rng));
  const auto path = temp_file("traj.txt");
  write_trajectory(traj, path.string());
  const Trajectory back = load_groundtruth(path.string());
  REQUIRE(back.size() == traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    REQUIRE((back.poses[i].second.R - traj.poses[i].second.R).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((back.poses[i].second.t - traj.poses[i].second.t).cwiseAbs().maxCoeff() < 1e-12);
  }

  REQUIRE_THROWS_AS(write_trajectory(traj, "/no/such/dir/traj.txt"), IoError);
  REQUIRE_THROWS_AS(write_trajectory(Trajectory{}, path.string()), IoError);
}

TEST_CASE("single identity pose round trips") {
  Trajectory traj;
  traj.poses.emplace_back(0, SE3::identity());
  const auto path = temp_file("identity.txt");
  write_trajectory(traj, path.string());
  const Trajectory back = load_groundtruth(path.string());
  REQUIRE(back.size() == 1);
  REQUIRE((back.poses[0].second.R - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("ate of identical trajectories is zero") {
  Rng rng(13);
  Trajectory traj;
  for (int i = 0; i < 20; ++i) traj.poses.emplace_back(i, random_pose(rng));
  const AteStats stats = compute_ate(traj, traj);
  REQUIRE(stats.rmse < 1e-9);
  REQUIRE(stats.sd < 1e-9);
  REQUIRE(stats.mean < 1e-9);
  REQUIRE(stats.median < 1e-9);
}

TEST_CASE("ate absorbs a global rigid transform") {
  Rng rng(17);
  Trajectory truth;
  for (int i = 0; i < 30; ++i) truth.poses.emplace_back(i, random_pose(rng));

  SE3 g;
  g.R = rot_z(M_PI / 2.0);
  g.t = Vec3(10, 0, 0);
  Trajectory estimate = truth;
  for (auto& [frame, pose] : estimate.poses) pose = g * pose;

  const AteStats stats = compute_ate(estimate, truth);
  REQUIRE(stats.rmse < 1e-9);
}

TEST_CASE("ate matches a brute-force SE(2) alignment oracle") {
  // Unit square corners; one corner of the estimate displaced by 1 m.
  Trajectory truth, estimate;
  const Vec3 corners[4] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  for (int i = 0; i < 4; ++i) {
    SE3 t;
    t.t = corners[i];
    truth.poses.emplace_back(i, t);
    SE3 e = t;
    if (i == 3) e.t += Vec3(0, 1, 0);
    estimate.poses.emplace_back(i, e);
  }

  // Oracle: search yaw on a 1e-4 grid with the closed-form translation for
  // each yaw, then refine by golden section.
  auto residuals_for_yaw = [&](double yaw) {
    const Mat3 R = rot_z(yaw);
    Vec3 c_est = Vec3::Zero(), c_truth = Vec3::Zero();
    for (int i = 0; i < 4; ++i) {
      c_est += estimate.poses[i].second.t;
      c_truth += truth.poses[i].second.t;
    }
    c_est /= 4.0;
    c_truth /= 4.0;
    const Vec3 t = c_truth - R * c_est;
    std::vector<double> res;
    double cost = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double r = (truth.poses[i].second.t - (R * estimate.poses[i].second.t + t)).norm();
      res.push_back(r);
      cost += r * r;
    }
    return std::pair<double, std::vector<double>>(cost, res);
  };

  double best_yaw = 0.0, best_cost = std::numeric_limits<double>::infinity();
  for (double yaw = 0.0; yaw < 2.0 * M_PI; yaw += 1e-4) {
    const double cost = residuals_for_yaw(yaw).first;
    if (cost < best_cost) {
      best_cost = cost;
      best_yaw = yaw;
    }
  }
  double lo = best_yaw - 2e-4, hi = best_yaw + 2e-4;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (residuals_for_yaw(m1).first < residuals_for_yaw(m2).first) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  auto [cost, res] = residuals_for_yaw(0.5 * (lo + hi));
  std::sort(res.begin(), res.end());
  const double n = 4.0;
  double sum = 0.0, sum_sq = 0.0;
  for (double r : res) {
    sum += r;
    sum_sq += r * r;
  }
  const double oracle_mean = sum / n;
  const double oracle_rmse = std::sqrt(sum_sq / n);
  const double oracle_sd = std::sqrt(sum_sq / n - oracle_mean * oracle_mean);
  const double oracle_median = 0.5 * (res[1] + res[2]);

  const AteStats stats = compute_ate(estimate, truth);
  REQUIRE(stats.rmse == Catch::Approx(oracle_rmse).margin(1e-9));
  REQUIRE(stats.mean == Catch::Approx(oracle_mean).margin(1e-9));
  REQUIRE(stats.sd == Catch::Approx(oracle_sd).margin(1e-9));
  REQUIRE(stats.median == Catch::Approx(oracle_median).margin(1e-9));
}

TEST_CASE("rmse identity and rigid invariance properties") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Trajectory truth, estimate;
    for (int i = 0; i < 40; ++i) {
      const SE3 p = random_pose(rng);
      truth.poses.emplace_back(i, p);
      SE3 e = p;
      e.t += Vec3(gaussian(rng), gaussian(rng), gaussian(rng)) * 0.3;
      estimate.poses.emplace_back(i, e);
    }
    const AteStats stats = compute_ate(estimate, truth);
    REQUIRE(stats.rmse * stats.rmse ==
            Catch::Approx(stats.mean * stats.mean + stats.sd * stats.sd)
                .epsilon(1e-9));

    const SE3 g = random_pose(rng);
    Trajectory moved = estimate;
    for (auto& [frame, pose] : moved.poses) pose = g * pose;
    const AteStats stats2 = compute_ate(moved, truth);
    REQUIRE(std::abs(stats2.rmse - stats.rmse) < 1e-9);
    REQUIRE(std::abs(stats2.median - stats.median) < 1e-9);
  }
}

TEST_CASE("insufficient overlap") {
  Trajectory a, b;
  for (int i = 0; i < 5; ++i) a.poses.emplace_back(i, SE3::identity());
  b.poses.emplace_back(3, SE3::identity());
  b.poses.emplace_back(4, SE3::identity());
  b.poses.emplace_back(100, SE3::identity());
  REQUIRE_THROWS_AS(compute_ate(a, b), InsufficientOverlap);
}
