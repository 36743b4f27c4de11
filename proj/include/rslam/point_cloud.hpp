#pragma once

#include <cstddef>
#include <vector>

#include "rslam/se3.hpp"

namespace rslam {

/// One LIDAR sweep in sensor coordinates (meters). Reflectance is carried
/// through loading but unused by the pipeline.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<float> reflectance;
  int frame_index = 0;
  std::size_t dropped_nonfinite = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

}  // namespace rslam
