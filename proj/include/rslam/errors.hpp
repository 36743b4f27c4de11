#pragma once

#include <stdexcept>
#include <string>

namespace rslam {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientOverlap : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateCloud : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoGround : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BehindCamera : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyPixel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PatchOutOfBounds : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewMatches : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoHistory : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DuplicateKeyFrame : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DisconnectedGraph : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rslam
