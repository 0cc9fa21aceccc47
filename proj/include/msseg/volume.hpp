#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "msseg/filter.hpp"
#include "msseg/geometry.hpp"

namespace msseg {

// Dense 3D grid with voxel spacing. Row-major, width fastest.
template <typename T>
struct Grid {
  Shape3 shape;
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::vector<T> data;

  Grid() = default;
  explicit Grid(Shape3 s, Spacing3 sp = {1.0, 1.0, 1.0}, T fill = T{})
      : shape(s), spacing(sp), data(s.size(), fill) {}

  T& at(int z, int y, int x) { return data[shape.index(z, y, x)]; }
  const T& at(int z, int y, int x) const { return data[shape.index(z, y, x)]; }
  std::size_t size() const { return data.size(); }
};

using Volume = Grid<float>;
// Class ids; the internal convention is contiguous [0, K).
using LabelMap = Grid<std::uint8_t>;
// One byte per voxel, nonzero = inside.
using Mask = Grid<std::uint8_t>;

// Throws MalformedHeader when the invariants (size, spacing > 0, finite values) fail.
void validate(const Volume& v);

Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);
LabelMap load_label_map(const std::filesystem::path& path);
void save_label_map(const LabelMap& m, const std::filesystem::path& path);

Mask brain_mask(const Volume& v);

// Zero mean, unit population standard deviation inside the mask; background set to 0.
Volume normalize_volume(const Volume& v, const Mask& mask, double epsilon = 1e-8);

Volume gaussian_smooth(const Volume& v, const GaussianKernel& k);

// Smooth, then keep every second voxel. Output shape ceil(n/2), spacing doubled.
Volume downsample2(const Volume& v, const GaussianKernel& k);

// Nearest-neighbour doubling along every axis, spacing halved.
Volume upsample_nn(const Volume& v);

// Sub-block [origin, origin + size). Caller guarantees it lies inside `v`.
template <typename T>
Grid<T> crop(const Grid<T>& v, Index3 origin, Shape3 size) {
  Grid<T> out(size, v.spacing);
  for (int z = 0; z < size.d; ++z)
    for (int y = 0; y < size.h; ++y)
      for (int x = 0; x < size.w; ++x) out.at(z, y, x) = v.at(origin.z + z, origin.y + y, origin.x + x);
  return out;
}

// Extend at the high end of each axis by reflection until `target` is reached.
template <typename T>
Grid<T> pad_reflect(const Grid<T>& v, Shape3 target) {
  Grid<T> out(target, v.spacing);
  for (int z = 0; z < target.d; ++z) {
    const int sz = reflect_index(z, v.shape.d);
    for (int y = 0; y < target.h; ++y) {
      const int sy = reflect_index(y, v.shape.h);
      for (int x = 0; x < target.w; ++x) out.at(z, y, x) = v.at(sz, sy, reflect_index(x, v.shape.w));
    }
  }
  return out;
}

}  // namespace msseg
