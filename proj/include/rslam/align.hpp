#pragma once

#include <span>
#include <vector>

#include "rslam/errors.hpp"
#include "rslam/se3.hpp"

namespace rslam {

/// Relative rigid motion; as returned by align_svd it maps the first point
/// set onto the second (src -> dst).
using RigidTransform = SE3;

/// Closed-form least-squares rigid alignment with known correspondences:
/// finds (R, t) minimizing (1/N) sum ||dst_i - R * src_i - t||^2 by the
/// centroid/covariance SVD method, with a determinant guard against
/// reflections. No iteration; correspondences are given.
inline RigidTransform align_svd(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size() || src.size() < 3) {
    throw DegenerateGeometry("align_svd needs two equal point sets of size >= 3");
  }
  const double n = static_cast<double>(src.size());
  Vec3 c_src = Vec3::Zero();
  Vec3 c_dst = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    c_src += src[i];
    c_dst += dst[i];
  }
  c_src /= n;
  c_dst /= n;

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cov += (src[i] - c_src) * (dst[i] - c_dst).transpose();
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (s(1) <= 1e-12 * std::max(1.0, s(0))) {
    throw DegenerateGeometry("point sets are collinear or coincident");
  }

  Mat3 fix = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) {
    fix(2, 2) = -1.0;
  }
  RigidTransform out;
  out.R = svd.matrixV() * fix * svd.matrixU().transpose();
  out.t = c_dst - out.R * c_src;
  return out;
}

/// Mean squared residual of the alignment objective at a given transform.
inline double alignment_residual(std::span<const Vec3> src, std::span<const Vec3> dst,
                                 const RigidTransform& T) {
  double acc = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    acc += (dst[i] - T.R * src[i] - T.t).squaredNorm();
  }
  return acc / static_cast<double>(src.size());
}

}  // namespace rslam
