#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "msseg/geometry.hpp"

namespace msseg {

// Normalized, symmetric, truncated 1D Gaussian applied separably along each axis.
class GaussianKernel {
 public:
  explicit GaussianKernel(double sigma = 1.0, int radius = 2);

  double sigma() const { return sigma_; }
  int radius() const { return radius_; }
  std::span<const double> taps() const { return taps_; }

 private:
  double sigma_;
  int radius_;
  std::vector<double> taps_;
};

namespace detail {

inline std::size_t axis_stride(Shape3 s, int axis) {
  return axis == 0 ? static_cast<std::size_t>(s.h) * s.w : (axis == 1 ? static_cast<std::size_t>(s.w) : 1u);
}

// One 1D correlation pass along `axis`, reflective borders. `adjoint` scatters instead of gathers.
template <typename Real>
void filter_axis(const Real* in, Real* out, Shape3 shape, int axis, const GaussianKernel& k, bool adjoint) {
  const int n = shape[axis];
  const std::size_t stride = axis_stride(shape, axis);
  const int r = k.radius();
  const auto taps = k.taps();
  const std::size_t total = shape.size();
  if (adjoint) {
    for (std::size_t i = 0; i < total; ++i) out[i] = Real(0);
  }
  const std::size_t block = stride * static_cast<std::size_t>(n);
  for (std::size_t outer = 0; outer < total; outer += block) {
    for (std::size_t inner = 0; inner < stride; ++inner) {
      const std::size_t base = outer + inner;
      for (int o = 0; o < n; ++o) {
        if (adjoint) {
          const Real g = in[base + o * stride];
          for (int t = -r; t <= r; ++t) {
            out[base + reflect_index(o + t, n) * stride] += static_cast<Real>(taps[t + r]) * g;
          }
        } else {
          Real acc = 0;
          for (int t = -r; t <= r; ++t) {
            acc += static_cast<Real>(taps[t + r]) * in[base + reflect_index(o + t, n) * stride];
          }
          out[base + o * stride] = acc;
        }
      }
    }
  }
}

}  // namespace detail

// Separable 3D smoothing, passes applied along W, then H, then D.
template <typename Real>
void smooth3d(std::span<const Real> in, std::span<Real> out, Shape3 shape, const GaussianKernel& k) {
  std::vector<Real> a(shape.size());
  std::vector<Real> b(shape.size());
  detail::filter_axis(in.data(), a.data(), shape, 2, k, false);
  detail::filter_axis(a.data(), b.data(), shape, 1, k, false);
  detail::filter_axis(b.data(), out.data(), shape, 0, k, false);
}

// Exact transpose of smooth3d (passes in reverse order, scatter form).
template <typename Real>
void smooth3d_adjoint(std::span<const Real> in, std::span<Real> out, Shape3 shape, const GaussianKernel& k) {
  std::vector<Real> a(shape.size());
  std::vector<Real> b(shape.size());
  detail::filter_axis(in.data(), a.data(), shape, 0, k, true);
  detail::filter_axis(a.data(), b.data(), shape, 1, k, true);
  detail::filter_axis(b.data(), out.data(), shape, 2, k, true);
}

inline Shape3 half_shape(Shape3 s) { return {(s.d + 1) / 2, (s.h + 1) / 2, (s.w + 1) / 2}; }

// Keep every second sample (index 2i, clamped to the last sample) along each axis.
template <typename Real>
std::vector<Real> decimate2(std::span<const Real> in, Shape3 shape) {
  const Shape3 out_shape = half_shape(shape);
  std::vector<Real> out(out_shape.size());
  for (int z = 0; z < out_shape.d; ++z) {
    const int sz = std::min(2 * z, shape.d - 1);
    for (int y = 0; y < out_shape.h; ++y) {
      const int sy = std::min(2 * y, shape.h - 1);
      for (int x = 0; x < out_shape.w; ++x) {
        const int sx = std::min(2 * x, shape.w - 1);
        out[out_shape.index(z, y, x)] = in[shape.index(sz, sy, sx)];
      }
    }
  }
  return out;
}

}  // namespace msseg
