#include <catch2/catch_amalgamated.hpp>

#include "rslam/random.hpp"
#include "rslam/se3.hpp"

using namespace rslam;

namespace {

SE3 random_pose(Rng& rng, double trans_scale = 10.0) {
  Vec3 axis(gaussian(rng), gaussian(rng), gaussian(rng));
  if (axis.norm() < 1e-12) axis = Vec3::UnitX();
  axis.normalize();
  SE3 T;
  T.R = so3_exp(axis * uniform(rng, 0.0, 3.0));
  T.t = Vec3(gaussian(rng), gaussian(rng), gaussian(rng)) * trans_scale;
  return T;
}

}  // namespace

TEST_CASE("compose and inverse") {
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    const SE3 a = random_pose(rng);
    const SE3 b = random_pose(rng);
    const Vec3 p(gaussian(rng), gaussian(rng), gaussian(rng));
    REQUIRE(((a * b) * p - a * (b * p)).norm() < 1e-9);
    const SE3 id = a * a.inverse();
    REQUIRE((id.R - Mat3::Identity()).norm() < 1e-12);
    REQUIRE(id.t.norm() < 1e-9);
  }
}

TEST_CASE("so3 exp/log round trip") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Vec3 w(gaussian(rng), gaussian(rng), gaussian(rng));
    w *= uniform(rng, 0.0, 3.1) / std::max(w.norm(), 1e-12);
    const Mat3 R = so3_exp(w);
    REQUIRE((so3_exp(so3_log(R)) - R).norm() < 1e-9);
  }
  // Small-angle branch.
  const Vec3 tiny(1e-12, -2e-12, 3e-13);
  REQUIRE((so3_log(so3_exp(tiny)) - tiny).norm() < 1e-15);
  // Near-pi branch.
  const Vec3 near_pi = Vec3(1, 2, 3).normalized() * (M_PI - 1e-9);
  const Mat3 R = so3_exp(near_pi);
  REQUIRE((so3_exp(so3_log(R)) - R).norm() < 1e-6);
}

TEST_CASE("se3 exp/log round trip") {
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    const SE3 T = random_pose(rng);
    const SE3 back = se3_exp(se3_log(T));
    REQUIRE((back.R - T.R).norm() < 1e-9);
    REQUIRE((back.t - T.t).norm() < 1e-8);
  }
  REQUIRE(se3_log(SE3::identity()).norm() == 0.0);
}

TEST_CASE("orthonormalize projects back to a rotation") {
  Rng rng(5);
  SE3 T = random_pose(rng);
  T.R(0, 1) += 1e-6;  // perturb off the manifold
  T.orthonormalize();
  REQUIRE(T.rotation_drift() < 1e-12);
  REQUIRE(T.R.determinant() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("pose increment is a right-multiplied exp") {
  Rng rng(3);
  const SE3 T = random_pose(rng);
  Vec6 d;
  d << 0.01, -0.02, 0.03, 0.5, -0.25, 0.125;
  const SE3 updated = pose_increment(T, d);
  const SE3 expected = T * se3_exp(d);
  REQUIRE((updated.R - expected.R).norm() < 1e-12);
  REQUIRE((updated.t - expected.t).norm() < 1e-12);
}
