#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "rslam/align.hpp"
#include "rslam/detail/orb_pattern.hpp"
#include "rslam/errors.hpp"
#include "rslam/image.hpp"
#include "rslam/random.hpp"

namespace rslam {

struct Keypoint {
  double u = 0.0;
  double v = 0.0;
  double response = 0.0;
  double angle = 0.0;  // [0, 2*pi)
};

struct Descriptor {
  std::array<std::uint64_t, 4> words{};

  int hamming(const Descriptor& other) const {
    int d = 0;
    for (int i = 0; i < 4; ++i) d += std::popcount(words[i] ^ other.words[i]);
    return d;
  }
  bool operator==(const Descriptor& other) const { return words == other.words; }
};

struct Match {
  int idx_a = 0;
  int idx_b = 0;
  int hamming = 0;
};

namespace detail {

inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

}  // namespace detail

/// Separable Gaussian smoothing, kernel radius ceil(3*sigma), reflected
/// borders, rounded to nearest integer at the end.
inline Image8 gaussian_blur(const Image8& img, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int w = img.width, h = img.height;
  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * img.at(detail::reflect101(x + i, w), y);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  Image8 out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(detail::reflect101(y + i, h)) * w + x];
      }
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
    }
  }
  return out;
}

namespace detail {

inline constexpr int kRingDx[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
inline constexpr int kRingDy[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};

/// Largest margin m such that some arc of >= 9 contiguous ring pixels is
/// all brighter than center + (m - 1); i.e. the corner survives thresholds
/// strictly below m.
inline int arc_score(const int d[16]) {
  int best = std::numeric_limits<int>::min();
  for (int start = 0; start < 16; ++start) {
    int m = d[start];
    for (int j = 1; j < 9; ++j) m = std::min(m, d[(start + j) & 15]);
    best = std::max(best, m);
  }
  return best;
}

inline int fast_score(const Image8& img, int x, int y) {
  const int c = img.at(x, y);
  int d[16], nd[16];
  for (int i = 0; i < 16; ++i) {
    d[i] = img.at(x + kRingDx[i], y + kRingDy[i]) - c;
    nd[i] = -d[i];
  }
  return std::max(arc_score(d), arc_score(nd));
}

}  // namespace detail

/// FAST-9 segment-test corners: an arc of at least 9 contiguous ring pixels
/// all brighter than center + threshold or all darker than center - threshold.
/// Non-maximum suppression runs on the score (the largest threshold at which
/// the pixel is still a corner). If fewer than target_count / 2 corners are
/// found the threshold is halved once and detection re-runs. The strongest
/// target_count corners are returned.
inline std::vector<Keypoint> detect_fast(const Image8& img, int threshold, int target_count) {
  if (threshold < 1) throw ConfigError("FAST threshold must be >= 1");

  const int w = img.width, h = img.height;
  auto detect_pass = [&](int thr) {
    std::vector<std::pair<int, int>> corners;  // (index, score)
    for (int y = 3; y < h - 3; ++y) {
      for (int x = 3; x < w - 3; ++x) {
        const int c = img.at(x, y);
        // Compass pre-test: a 9-long arc covers at least two of the four
        // compass ring pixels.
        int brighter = 0, darker = 0;
        for (int k = 0; k < 16; k += 4) {
          const int p = img.at(x + detail::kRingDx[k], y + detail::kRingDy[k]);
          if (p > c + thr) ++brighter;
          if (p < c - thr) ++darker;
        }
        if (brighter < 2 && darker < 2) continue;
        const int score = detail::fast_score(img, x, y);
        if (score > thr) corners.emplace_back(y * w + x, score);
      }
    }
    return corners;
  };

  auto corners = detect_pass(threshold);
  if (static_cast<int>(corners.size()) * 2 < target_count && threshold > 1) {
    corners = detect_pass(std::max(1, threshold / 2));
  }

  // Suppress corners that are 8-adjacent to a stronger one (ties keep the
  // earlier pixel in raster order).
  std::vector<int> score_map(static_cast<std::size_t>(w) * h, 0);
  for (const auto& [idx, score] : corners) score_map[idx] = score;
  std::vector<Keypoint> kept;
  for (const auto& [idx, score] : corners) {
    const int x = idx % w, y = idx / w;
    bool is_max = true;
    for (int dy = -1; dy <= 1 && is_max; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
        const int ns = score_map[ny * w + nx];
        if (ns > score || (ns == score && (ny * w + nx) < idx)) {
          is_max = false;
          break;
        }
      }
    }
    if (is_max) {
      kept.push_back(Keypoint{static_cast<double>(x), static_cast<double>(y),
                              static_cast<double>(score), 0.0});
    }
  }

  std::stable_sort(kept.begin(), kept.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.response != b.response) return a.response > b.response;
    if (a.v != b.v) return a.v < b.v;
    return a.u < b.u;
  });
  if (static_cast<int>(kept.size()) > target_count) kept.resize(target_count);
  return kept;
}

/// Intensity-centroid orientation over a circular patch:
/// angle = atan2(m01, m10) with m_pq = sum x^p y^q I(x, y) in patch-centered
/// coordinates. atan2(0, 0) is defined as 0.
inline double compute_orientation(const Image8& img, const Keypoint& kp, int radius) {
  const int cx = static_cast<int>(std::lround(kp.u));
  const int cy = static_cast<int>(std::lround(kp.v));
  if (cx - radius < 0 || cx + radius >= img.width || cy - radius < 0 || cy + radius >= img.height) {
    throw PatchOutOfBounds("orientation patch does not fit in image");
  }
  double m10 = 0.0, m01 = 0.0;
  const int r2 = radius * radius;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > r2) continue;
      const double val = img.at(cx + dx, cy + dy);
      m10 += dx * val;
      m01 += dy * val;
    }
  }
  if (m10 == 0.0 && m01 == 0.0) return 0.0;
  double angle = std::atan2(m01, m10);
  if (angle < 0) angle += 2.0 * M_PI;
  return angle;
}

/// Number of discrete steering angles for the BRIEF pattern (12 degree steps).
inline constexpr int kOrbAngleBins = 30;

/// Border inside which keypoints cannot be described (rotated 31x31 patch).
inline constexpr int kDescriptorBorder = 19;

/// Rotation-steered 256-bit BRIEF on the standard learned pattern. The
/// pattern is rotated by the keypoint angle discretized in 12 degree steps;
/// bit i is set iff I(p_i) < I(q_i). Run on the blurred image.
inline Descriptor compute_brief(const Image8& img, const Keypoint& kp) {
  const int cx = static_cast<int>(std::lround(kp.u));
  const int cy = static_cast<int>(std::lround(kp.v));
  if (cx < kDescriptorBorder || cx >= img.width - kDescriptorBorder ||
      cy < kDescriptorBorder || cy >= img.height - kDescriptorBorder) {
    throw PatchOutOfBounds("descriptor patch does not fit in image");
  }
  const double step = 2.0 * M_PI / kOrbAngleBins;
  int bin = static_cast<int>(std::lround(kp.angle / step)) % kOrbAngleBins;
  if (bin < 0) bin += kOrbAngleBins;
  const double ca = std::cos(bin * step);
  const double sa = std::sin(bin * step);

  Descriptor desc;
  for (int i = 0; i < 256; ++i) {
    const int x1 = detail::kOrbPattern[4 * i], y1 = detail::kOrbPattern[4 * i + 1];
    const int x2 = detail::kOrbPattern[4 * i + 2], y2 = detail::kOrbPattern[4 * i + 3];
    const int rx1 = static_cast<int>(std::lround(ca * x1 - sa * y1));
    const int ry1 = static_cast<int>(std::lround(sa * x1 + ca * y1));
    const int rx2 = static_cast<int>(std::lround(ca * x2 - sa * y2));
    const int ry2 = static_cast<int>(std::lround(sa * x2 + ca * y2));
    const std::uint8_t p = img.at(cx + rx1, cy + ry1);
    const std::uint8_t q = img.at(cx + rx2, cy + ry2);
    if (p < q) desc.words[i >> 6] |= std::uint64_t{1} << (i & 63);
  }
  return desc;
}

/// Brute-force Hamming matching with Lowe ratio test applied in both
/// directions plus a mutual nearest-neighbor cross-check; the result is
/// one-to-one.
inline std::vector<Match> match_descriptors(const std::vector<Descriptor>& a,
                                            const std::vector<Descriptor>& b, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("ratio must be in (0, 1)");
  if (a.empty() || b.empty()) return {};

  auto nearest = [](const Descriptor& query, const std::vector<Descriptor>& set, int& best_idx) {
    int best = 257, second = 257;
    best_idx = -1;
    for (std::size_t j = 0; j < set.size(); ++j) {
      const int d = query.hamming(set[j]);
      if (d < best) {
        second = best;
        best = d;
        best_idx = static_cast<int>(j);
      } else if (d < second) {
        second = d;
      }
    }
    return std::pair<int, int>{best, second};
  };

  std::vector<int> fwd(a.size(), -1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    int j;
    const auto [d1, d2] = nearest(a[i], b, j);
    if (j >= 0 && static_cast<double>(d1) < ratio * static_cast<double>(d2)) fwd[i] = j;
  }
  std::vector<int> bwd(b.size(), -1);
  for (std::size_t j = 0; j < b.size(); ++j) {
    int i;
    const auto [d1, d2] = nearest(b[j], a, i);
    if (i >= 0 && static_cast<double>(d1) < ratio * static_cast<double>(d2)) bwd[j] = i;
  }

  std::vector<Match> matches;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int j = fwd[i];
    if (j >= 0 && bwd[j] == static_cast<int>(i)) {
      matches.push_back(Match{static_cast<int>(i), j, a[i].hamming(b[j])});
    }
  }
  return matches;
}

struct MatchRansacConfig {
  int iterations = 200;
  double inlier_dist_m = 0.4;
  std::uint64_t seed = 0;
};

struct RansacResult {
  std::vector<Match> inliers;
  RigidTransform transform;
};

/// Geometric outlier rejection for matched 3D points: repeatedly samples 3
/// matches, solves the exact rigid transform, and keeps the largest consensus
/// set; the transform is refit on that set. Each hypothesis draws from its
/// own (seed, index) stream, so results are reproducible.
inline RansacResult ransac_rigid_filter(const std::vector<Vec3>& pts_a,
                                        const std::vector<Vec3>& pts_b,
                                        const std::vector<Match>& matches,
                                        const MatchRansacConfig& cfg) {
  if (matches.size() < 3) {
    throw TooFewMatches("rigid RANSAC needs >= 3 matches, got " + std::to_string(matches.size()));
  }

  const std::size_t n = matches.size();
  std::size_t best_count = 0;
  RigidTransform best_T;
  bool have_best = false;
  std::array<Vec3, 3> sa, sb;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    Rng rng = seeded_stream(cfg.seed, static_cast<std::uint64_t>(iter));
    std::size_t i0 = uniform_index(rng, n);
    std::size_t i1 = uniform_index(rng, n);
    std::size_t i2 = uniform_index(rng, n);
    if (i0 == i1 || i1 == i2 || i0 == i2) continue;
    for (int k = 0; k < 3; ++k) {
      const std::size_t idx = k == 0 ? i0 : (k == 1 ? i1 : i2);
      sa[k] = pts_a[matches[idx].idx_a];
      sb[k] = pts_b[matches[idx].idx_b];
    }
    RigidTransform T;
    try {
      T = align_svd(sa, sb);
    } catch (const DegenerateGeometry&) {
      continue;
    }
    std::size_t count = 0;
    for (const Match& m : matches) {
      if ((T.R * pts_a[m.idx_a] + T.t - pts_b[m.idx_b]).norm() < cfg.inlier_dist_m) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_T = T;
      have_best = true;
    }
  }
  if (!have_best) throw DegenerateGeometry("no valid RANSAC hypothesis (degenerate matches)");

  RansacResult result;
  std::vector<Vec3> in_a, in_b;
  for (const Match& m : matches) {
    if ((best_T.R * pts_a[m.idx_a] + best_T.t - pts_b[m.idx_b]).norm() < cfg.inlier_dist_m) {
      result.inliers.push_back(m);
      in_a.push_back(pts_a[m.idx_a]);
      in_b.push_back(pts_b[m.idx_b]);
    }
  }
  result.transform = in_a.size() >= 3 ? align_svd(in_a, in_b) : best_T;
  return result;
}

struct FeatureConfig {
  double blur_sigma = 1.0;
  int fast_threshold = 20;
  int target_count = 1000;
  double ratio = 0.75;
  int orientation_radius = 15;
};

struct ImageFeatures {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
  Image8 blurred;
};

/// Blur, detect, orient and describe in one pass. Keypoints too close to the
/// border for the rotated descriptor patch are discarded.
inline ImageFeatures extract_features(const Image8& img, const FeatureConfig& cfg) {
  ImageFeatures out;
  out.blurred = gaussian_blur(img, cfg.blur_sigma);
  auto kps = detect_fast(out.blurred, cfg.fast_threshold, cfg.target_count);
  out.keypoints.reserve(kps.size());
  out.descriptors.reserve(kps.size());
  for (Keypoint& kp : kps) {
    const int x = static_cast<int>(kp.u), y = static_cast<int>(kp.v);
    if (x < kDescriptorBorder || x >= img.width - kDescriptorBorder ||
        y < kDescriptorBorder || y >= img.height - kDescriptorBorder) {
      continue;
    }
    kp.angle = compute_orientation(out.blurred, kp, cfg.orientation_radius);
    out.descriptors.push_back(compute_brief(out.blurred, kp));
    out.keypoints.push_back(kp);
  }
  return out;
}

}  // namespace rslam
