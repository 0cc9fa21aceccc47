#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace msseg {

// Spatial extent ordered (depth, height, width); width varies fastest in memory.
struct Shape3 {
  int d = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  int operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * h + y) * w + x;
  }
  bool operator==(const Shape3&) const = default;

  std::string str() const {
    return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
};

// Voxel coordinate (z, y, x).
struct Index3 {
  int z = 0;
  int y = 0;
  int x = 0;

  bool operator==(const Index3&) const = default;
};

// Millimetres per voxel, one entry per axis in Shape3 order.
using Spacing3 = std::array<double, 3>;

// Mirror without repeating the edge sample: ..., 2, 1, 0, 1, 2, ...
// Periodic extension so offsets larger than the axis still resolve.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace msseg
