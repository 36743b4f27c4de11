#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rslam/errors.hpp"

namespace rslam {

/// Dense row-major 8-bit grid.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int w, int h, std::uint8_t fill = 0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
};

/// Binary PGM (P5) dump, for visual inspection of rasterized frames.
inline void write_pgm(const Image8& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace rslam
