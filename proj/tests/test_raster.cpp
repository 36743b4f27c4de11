#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "rslam/random.hpp"
#include "rslam/raster.hpp"

using namespace rslam;

namespace {

CameraModel paper_camera() {
  return CameraModel{};  // f=500, center (0,0), R=I, t=(-25,-25,70), 750x750
}

CameraModel plain_camera() {
  CameraModel cam;
  cam.t = Vec3::Zero();
  return cam;
}

}  // namespace

TEST_CASE("lidar_to_camera") {
  const CameraModel cam = paper_camera();
  REQUIRE((lidar_to_camera(Vec3(25, 25, 0), cam) - Vec3(0, 0, 70)).norm() < 1e-12);

  const CameraModel ident = plain_camera();
  const Vec3 p(3.5, -2, 9);
  REQUIRE((lidar_to_camera(p, ident) - p).norm() == 0.0);

  CameraModel rot = plain_camera();
  rot.R = rot_z(M_PI / 2.0);
  REQUIRE((lidar_to_camera(Vec3(1, 0, 0), rot) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("projection") {
  const CameraModel cam = plain_camera();
  const Projection on_axis = project(Vec3(0, 0, 70), cam);
  REQUIRE(on_axis.u == 0.0);
  REQUIRE(on_axis.v == 0.0);
  REQUIRE(on_axis.depth == 70.0);

  const Projection off = project(Vec3(7, 0, 70), cam);
  REQUIRE(off.u == Catch::Approx(50.0).margin(1e-12));
  REQUIRE(off.v == 0.0);

  REQUIRE_THROWS_AS(project(Vec3(0, 0, -1), cam), BehindCamera);
}

TEST_CASE("rasterize basics") {
  const CameraModel cam = paper_camera();

  PointCloud empty;
  const RasterFrame ef = rasterize(empty, cam);
  REQUIRE(std::all_of(ef.intensity.data.begin(), ef.intensity.data.end(),
                      [](std::uint8_t v) { return v == 0; }));

  // Two points at the same (x, y): the larger z wins the pixel.
  PointCloud two;
  two.points = {Vec3(25, 25, 1), Vec3(25, 25, 3)};
  const RasterFrame tf = rasterize(two, cam);
  REQUIRE(tf.occupied(375, 375));
  REQUIRE(tf.height_at(375, 375) == 3.0);
  std::size_t occupied = 0;
  for (std::uint8_t v : tf.intensity.data) occupied += (v != 0);
  REQUIRE(occupied == 1);

  // Reversed order gives the same winner.
  std::swap(two.points[0], two.points[1]);
  const RasterFrame tr = rasterize(two, cam);
  REQUIRE(tr.height_at(375, 375) == 3.0);

  // A single point at the optical axis lands on the grid center.
  PointCloud one;
  one.points = {Vec3(25, 25, 0)};
  const RasterFrame of = rasterize(one, cam);
  REQUIRE(of.occupied(375, 375));
  REQUIRE(of.height_at(375, 375) == 0.0);
}

TEST_CASE("intensity quantization and occupancy agreement") {
  const CameraModel cam = paper_camera();
  const ZMap zmap;  // [-2, 8]
  PointCloud cloud;
  cloud.points = {Vec3(25, 25, -5), Vec3(20, 25, 20), Vec3(25, 20, 3)};
  const RasterFrame f = rasterize(cloud, cam, zmap);
  // Below z_min clamps to 1, above z_max to 255, interior maps linearly.
  REQUIRE(f.intensity.at(375, 375) == 1);
  bool saw255 = false;
  std::size_t occupancy_mismatches = 0;
  for (int y = 0; y < f.intensity.height; ++y) {
    for (int x = 0; x < f.intensity.width; ++x) {
      const bool occ = f.intensity.at(x, y) != 0;
      if (occ == std::isnan(f.height_at(x, y))) ++occupancy_mismatches;
      if (f.intensity.at(x, y) == 255) saw255 = true;
    }
  }
  REQUIRE(occupancy_mismatches == 0);
  REQUIRE(saw255);
  REQUIRE(quantize_height(3.0, zmap) == 128);  // round(255 * 5 / 10)
}

TEST_CASE("back_project inverts project within the quantization bound") {
  const CameraModel cam = paper_camera();
  PointCloud one;
  one.points = {Vec3(25, 25, 0)};
  const RasterFrame f = rasterize(one, cam);
  const Vec3 back = back_project(375, 375, f, cam);
  REQUIRE((back - Vec3(25, 25, 0)).cwiseAbs().maxCoeff() < 1e-9);

  REQUIRE_THROWS_AS(back_project(10, 10, f, cam), EmptyPixel);
}

TEST_CASE("random round trip stays within the half-pixel bound") {
  const CameraModel cam = paper_camera();
  Rng rng(314);
  PointCloud cloud;
  for (int i = 0; i < 1000; ++i) {
    Vec3 p(uniform(rng, -30, 30), uniform(rng, -30, 30), uniform(rng, -30, 30));
    if (lidar_to_camera(p, cam).z() <= 1.0) {
      --i;
      continue;
    }
    cloud.points.push_back(p);
  }
  const RasterFrame f = rasterize(cloud, cam);

  for (const Vec3& p : cloud.points) {
    const Projection pr = project(p, cam);
    const long px = std::lround(pr.u) + cam.width / 2;
    const long py = std::lround(pr.v) + cam.height / 2;
    if (px < 0 || px >= cam.width || py < 0 || py >= cam.height) continue;
    if (f.height_at(static_cast<int>(px), static_cast<int>(py)) != p.z()) continue;  // lost its pixel
    const Vec3 back = back_project(static_cast<double>(px), static_cast<double>(py), f, cam);
    const double bound = 0.5 * pr.depth / cam.f + 1e-9;
    REQUIRE(std::abs(back.x() - p.x()) <= bound);
    REQUIRE(std::abs(back.y() - p.y()) <= bound);
    REQUIRE(std::abs(back.z() - p.z()) <= 1e-9);
  }
}

TEST_CASE("rasterize is independent of point order") {
  const CameraModel cam = paper_camera();
  Rng rng(555);
  PointCloud cloud;
  for (int i = 0; i < 5000; ++i) {
    cloud.points.emplace_back(uniform(rng, 0, 50), uniform(rng, 0, 50), uniform(rng, -2, 8));
  }
  const RasterFrame a = rasterize(cloud, cam);

  PointCloud shuffled = cloud;
  for (std::size_t i = shuffled.points.size(); i > 1; --i) {
    std::swap(shuffled.points[i - 1], shuffled.points[uniform_index(rng, i)]);
  }
  const RasterFrame b = rasterize(shuffled, cam);
  REQUIRE(a.intensity.data == b.intensity.data);
  std::size_t height_mismatches = 0;
  for (std::size_t i = 0; i < a.height.size(); ++i) {
    const bool same = std::isnan(a.height[i]) ? std::isnan(b.height[i])
                                              : a.height[i] == b.height[i];
    if (!same) ++height_mismatches;
  }
  REQUIRE(height_mismatches == 0);
}

TEST_CASE("points behind the camera or outside the grid are counted") {
  CameraModel cam = paper_camera();
  PointCloud cloud;
  cloud.points = {Vec3(0, 0, -100), Vec3(500, 500, 0), Vec3(25, 25, 0)};
  const RasterFrame f = rasterize(cloud, cam);
  REQUIRE(f.skipped_behind == 1);
  REQUIRE(f.skipped_outside == 1);
}

TEST_CASE("pgm dump") {
  Image8 img(4, 2);
  img.at(0, 0) = 255;
  const auto path = std::filesystem::temp_directory_path() / "rslam_test.pgm";
  write_pgm(img, path.string());
  std::ifstream in(path, std::ios::binary);
  std::string header;
  in >> header;
  REQUIRE(header == "P5");
  int w, h, maxval;
  in >> w >> h >> maxval;
  REQUIRE(w == 4);
  REQUIRE(h == 2);
  REQUIRE(maxval == 255);
}

TEST_CASE("zmap validation") {
  PointCloud cloud;
  REQUIRE_THROWS_AS(rasterize(cloud, CameraModel{}, ZMap{5.0, 5.0}), ConfigError);
}
