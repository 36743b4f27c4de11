#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace rslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

/// Rigid transform p' = R * p + t. Used both as a pose (sensor -> world)
/// and as a relative motion between two sensor frames.
struct SE3 {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static SE3 identity() { return SE3{}; }

  Vec3 operator*(const Vec3& p) const { return R * p + t; }

  SE3 operator*(const SE3& other) const {
    return SE3{R * other.R, R * other.t + t};
  }

  SE3 inverse() const { return SE3{R.transpose(), -(R.transpose() * t)}; }

  /// Project R back onto SO(3) (nearest rotation in Frobenius norm).
  void orthonormalize() {
    Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    R = svd.matrixU() * fix * svd.matrixV().transpose();
  }

  double rotation_drift() const {
    return (R * R.transpose() - Mat3::Identity()).norm();
  }
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

inline Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 K = skew(w);
  if (theta < 1e-9) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * K + b * K * K;
}

inline Vec3 so3_log(const Mat3& R) {
  const double tr = R.trace();
  double cos_theta = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  Vec3 axis(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < 1e-9) {
    return 0.5 * axis;
  }
  if (theta > M_PI - 1e-6) {
    // Near pi the off-diagonal formula loses precision; use the diagonal.
    Mat3 S = 0.5 * (R + Mat3::Identity());
    Vec3 a(std::sqrt(std::max(0.0, S(0, 0))), std::sqrt(std::max(0.0, S(1, 1))),
           std::sqrt(std::max(0.0, S(2, 2))));
    int k;
    a.maxCoeff(&k);
    for (int i = 0; i < 3; ++i) {
      if (i != k && S(k, i) < 0) a(i) = -a(i);
    }
    if (axis(k) < 0) a = -a;
    return theta * a.normalized();
  }
  return (theta / (2.0 * std::sin(theta))) * axis;
}

/// xi = [omega; rho], rotation first.
inline SE3 se3_exp(const Vec6& xi) {
  const Vec3 w = xi.head<3>();
  const Vec3 rho = xi.tail<3>();
  const double theta = w.norm();
  const Mat3 K = skew(w);
  Mat3 V;
  if (theta < 1e-9) {
    V = Mat3::Identity() + 0.5 * K + (1.0 / 6.0) * K * K;
  } else {
    const double t2 = theta * theta;
    V = Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * K +
        ((theta - std::sin(theta)) / (t2 * theta)) * K * K;
  }
  return SE3{so3_exp(w), V * rho};
}

inline Vec6 se3_log(const SE3& T) {
  const Vec3 w = so3_log(T.R);
  const double theta = w.norm();
  const Mat3 K = skew(w);
  Mat3 V_inv;
  if (theta < 1e-9) {
    V_inv = Mat3::Identity() - 0.5 * K + (1.0 / 12.0) * K * K;
  } else {
    const double half = 0.5 * theta;
    const double cot_half = std::cos(half) / std::sin(half);
    V_inv = Mat3::Identity() - 0.5 * K +
            ((1.0 - half * cot_half) / (theta * theta)) * K * K;
  }
  Vec6 xi;
  xi.head<3>() = w;
  xi.tail<3>() = V_inv * T.t;
  return xi;
}

inline Mat3 rot_z(double angle) {
  return so3_exp(Vec3(0, 0, angle));
}

/// Local (body-frame) update used by the optimizers: pose * Exp(delta),
/// delta = [axis-angle; translation].
inline SE3 pose_increment(const SE3& pose, const Vec6& delta) {
  return pose * se3_exp(delta);
}

/// Chordal distance between two rotations, ||Ra - Rb||_F.
inline double chordal_distance(const Mat3& a, const Mat3& b) {
  return (a - b).norm();
}

}  // namespace rslam
