#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "msseg/geometry.hpp"

namespace msseg {

// (batch, channel, depth, height, width)
struct Shape5 {
  int n = 0;
  int c = 0;
  int d = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const { return static_cast<std::size_t>(n) * c * spatial().size(); }
  Shape3 spatial() const { return {d, h, w}; }
  bool operator==(const Shape5&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," + std::to_string(h) +
           "," + std::to_string(w) + ")";
  }
};

template <typename Real>
struct Tensor {
  Shape5 shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape5 s, Real fill = Real(0)) : shape(s), data(s.numel(), fill) {}

  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }

  // Offset of the first voxel of (batch, channel).
  std::size_t channel_offset(int b, int ch) const {
    return (static_cast<std::size_t>(b) * shape.c + ch) * shape.spatial().size();
  }
  Real& at(int b, int ch, int z, int y, int x) { return data[channel_offset(b, ch) + shape.spatial().index(z, y, x)]; }
  const Real& at(int b, int ch, int z, int y, int x) const {
    return data[channel_offset(b, ch) + shape.spatial().index(z, y, x)];
  }
};

}  // namespace msseg
