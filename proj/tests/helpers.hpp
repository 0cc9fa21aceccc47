#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "msseg/rng.hpp"
#include "msseg/tensor.hpp"
#include "msseg/volume.hpp"

namespace testing {

using namespace msseg;

// Hand-rolled generators for property tests.
inline Shape3 random_shape(Rng& rng, int lo, int hi) {
  return {rng.uniform_int(lo, hi), rng.uniform_int(lo, hi), rng.uniform_int(lo, hi)};
}

inline Volume random_volume(Rng& rng, Shape3 s, double lo = -3.0, double hi = 3.0) {
  Volume v(s);
  for (float& x : v.data) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

inline LabelMap random_labels(Rng& rng, Shape3 s, int classes) {
  LabelMap m(s);
  for (auto& x : m.data) x = static_cast<std::uint8_t>(rng.uniform_int(0, classes - 1));
  return m;
}

// Blobby mask: a random box plus sprinkled voxels, so boundaries are nontrivial.
inline Mask random_mask(Rng& rng, Shape3 s, double sprinkle = 0.05) {
  Mask m(s);
  const int z0 = rng.uniform_int(0, s.d - 1), y0 = rng.uniform_int(0, s.h - 1), x0 = rng.uniform_int(0, s.w - 1);
  const int z1 = rng.uniform_int(z0, s.d - 1), y1 = rng.uniform_int(y0, s.h - 1), x1 = rng.uniform_int(x0, s.w - 1);
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const bool in_box = z >= z0 && z <= z1 && y >= y0 && y <= y1 && x >= x0 && x <= x1;
        m.at(z, y, x) = in_box || rng.uniform() < sprinkle;
      }
  return m;
}

template <typename Real>
Tensor<Real> random_tensor(Rng& rng, Shape5 s, double stddev = 1.0) {
  Tensor<Real> t(s);
  for (Real& v : t.data) v = static_cast<Real>(rng.normal(0.0, stddev));
  return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("msseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Dense reference convolution with a 3D kernel given as a function of the offset,
// reflective borders. Slow on purpose.
template <typename KernelFn>
std::vector<double> dense_convolve(const Volume& v, int radius, KernelFn kernel) {
  std::vector<double> out(v.size(), 0.0);
  const Shape3 s = v.shape;
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        double acc = 0.0;
        for (int dz = -radius; dz <= radius; ++dz)
          for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
              acc += kernel(dz, dy, dx) *
                     v.at(reflect_index(z + dz, s.d), reflect_index(y + dy, s.h), reflect_index(x + dx, s.w));
        out[s.index(z, y, x)] = acc;
      }
  return out;
}

// exp(-d^2 / 2 sigma^2) taps normalized to one, computed independently of GaussianKernel.
inline std::vector<double> reference_taps(double sigma, int radius) {
  std::vector<double> t;
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    t.push_back(std::exp(-(i * i) / (2.0 * sigma * sigma)));
    total += t.back();
  }
  for (double& x : t) x /= total;
  return t;
}

}  // namespace testing
