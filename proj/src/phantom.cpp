#include "msseg/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "msseg/error.hpp"
#include "msseg/rng.hpp"

namespace msseg {

namespace {

enum Tissue { kBrain = 0, kEdema = 1, kEnhancing = 2, kNecrotic = 3 };

// Relative intensity per tissue for T1, T1ce, T2, FLAIR.
constexpr std::array<std::array<double, 4>, 4> kContrast = {{
    {1.0, 0.80, 0.85, 0.50},
    {1.0, 0.90, 2.00, 0.40},
    {1.0, 1.80, 1.50, 2.00},
    {1.0, 2.00, 1.40, 1.20},
}};

struct Ellipsoid {
  std::array<double, 3> centre;
  std::array<double, 3> radii;

  double level(int z, int y, int x) const {
    const double dz = (z - centre[0]) / radii[0];
    const double dy = (y - centre[1]) / radii[1];
    const double dx = (x - centre[2]) / radii[2];
    return dz * dz + dy * dy + dx * dx;
  }
};

// Low-order angular wobble so lesion surfaces are not perfect quadrics.
struct Wobble {
  std::array<std::array<double, 3>, 3> dirs;
  std::array<double, 3> amps;
  std::array<double, 3> phases;

  double at(const Ellipsoid& e, int z, int y, int x) const {
    std::array<double, 3> p{(z - e.centre[0]) / e.radii[0], (y - e.centre[1]) / e.radii[1],
                            (x - e.centre[2]) / e.radii[2]};
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double t = dirs[i][0] * p[0] + dirs[i][1] * p[1] + dirs[i][2] * p[2];
      s += amps[i] * std::sin(3.0 * t + phases[i]);
    }
    return s;
  }
};

// Per-voxel tissue class before mapping to label ids; -1 = outside the head.
std::vector<int> carve(Shape3 size, const Ellipsoid& brain, const Ellipsoid& lesion, const Wobble& wobble,
                       double core_scale, double necrotic_scale) {
  std::vector<int> tissue(size.size(), -1);
  for (int z = 0; z < size.d; ++z)
    for (int y = 0; y < size.h; ++y)
      for (int x = 0; x < size.w; ++x) {
        if (brain.level(z, y, x) > 1.0) continue;
        const double q = std::sqrt(lesion.level(z, y, x)) + wobble.at(lesion, z, y, x);
        int t = kBrain;
        if (q <= necrotic_scale) {
          t = kNecrotic;
        } else if (q <= core_scale) {
          t = kEnhancing;
        } else if (q <= 1.0) {
          t = kEdema;
        }
        tissue[size.index(z, y, x)] = t;
      }
  return tissue;
}

// Tissue -> internal label id for the requested class count.
int label_for(int tissue, int num_classes) {
  if (tissue <= kBrain) return 0;
  switch (num_classes) {
    case 2: return 1;
    case 3: return tissue == kEdema ? 2 : 1;
    default: return tissue == kEdema ? 2 : (tissue == kEnhancing ? 3 : 1);
  }
}

Volume smooth_noise(Shape3 size, Rng& rng) {
  Volume field(size);
  for (float& v : field.data) v = static_cast<float>(rng.normal());
  field = gaussian_smooth(field, GaussianKernel(2.0, 4));
  double ss = 0.0;
  for (float v : field.data) ss += static_cast<double>(v) * v;
  const double scale = 1.0 / std::sqrt(std::max(ss / static_cast<double>(field.size()), 1e-12));
  for (float& v : field.data) v = static_cast<float>(v * scale);
  return field;
}

}  // namespace

SyntheticCase synth_case(std::uint64_t seed, Shape3 size, int num_modalities, int num_classes,
                         const PhantomOptions& options) {
  if (size.d < 16 || size.h < 16 || size.w < 16) {
    throw Error(ErrorCode::VolumeTooSmall, "phantom needs every axis >= 16, got " + size.str());
  }
  if (num_classes < 2 || num_classes > 4 || num_modalities < 1) {
    throw Error(ErrorCode::InvalidConfig, "phantom supports 2..4 classes and >= 1 modality");
  }
  Rng rng(mix_seed(seed, "phantom"));

  const std::array<int, 3> dims{size.d, size.h, size.w};
  Ellipsoid brain{};
  for (int a = 0; a < 3; ++a) {
    brain.centre[a] = (dims[a] - 1) / 2.0 + rng.uniform(-0.5, 0.5);
    brain.radii[a] = dims[a] * rng.uniform(0.38, 0.45);
  }

  const int min_dim = std::min({size.d, size.h, size.w});
  std::vector<int> tissue;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 200) throw Error(ErrorCode::InvalidConfig, "could not place a lesion within the fraction bounds");
    Ellipsoid lesion{};
    for (int a = 0; a < 3; ++a) {
      lesion.radii[a] = min_dim * rng.uniform(0.13, 0.22);
      lesion.centre[a] = brain.centre[a] + rng.uniform(-0.35, 0.35) * brain.radii[a];
    }
    Wobble wobble{};
    for (int i = 0; i < 3; ++i) {
      double n = 0.0;
      for (int a = 0; a < 3; ++a) {
        wobble.dirs[i][a] = rng.normal();
        n += wobble.dirs[i][a] * wobble.dirs[i][a];
      }
      for (int a = 0; a < 3; ++a) wobble.dirs[i][a] /= std::sqrt(std::max(n, 1e-12));
      wobble.amps[i] = rng.uniform(0.0, 0.05);
      wobble.phases[i] = rng.uniform(0.0, 6.283185307179586);
    }
    const double core_scale = rng.uniform(0.55, 0.70);
    const double necrotic_scale = core_scale * rng.uniform(0.40, 0.60);
    tissue = carve(size, brain, lesion, wobble, core_scale, necrotic_scale);

    std::size_t tumor = 0;
    bool inside = true;
    for (int z = 0; z < size.d && inside; ++z)
      for (int y = 0; y < size.h; ++y)
        for (int x = 0; x < size.w; ++x) {
          // lesion must sit strictly inside the head: tumor only where the brain is
          const double q = std::sqrt(lesion.level(z, y, x)) + wobble.at(lesion, z, y, x);
          if (q <= 1.0) {
            if (tissue[size.index(z, y, x)] < 0) inside = false;
            ++tumor;
          }
        }
    const double fraction = static_cast<double>(tumor) / static_cast<double>(size.size());
    if (inside && fraction >= options.min_tumor_fraction && fraction <= options.max_tumor_fraction) break;
  }

  SyntheticCase out;
  out.labels = LabelMap(size, options.spacing, 0);
  for (std::size_t i = 0; i < tissue.size(); ++i) out.labels.data[i] = static_cast<std::uint8_t>(label_for(tissue[i], num_classes));

  // shared anatomy-like texture, plus per-modality noise
  const Volume texture = smooth_noise(size, rng);
  for (int m = 0; m < num_modalities; ++m) {
    const auto& contrast = kContrast[m % 4];
    const double gain = rng.uniform(60.0, 140.0) * (1.0 + 0.1 * (m / 4));
    const Volume own = smooth_noise(size, rng);
    Volume v(size, options.spacing, 0.0f);
    for (std::size_t i = 0; i < tissue.size(); ++i) {
      if (tissue[i] < 0) continue;
      double value = contrast[tissue[i]] + 0.08 * texture.data[i] + 0.04 * own.data[i] + 0.05 * rng.normal();
      value = std::max(value, 0.05);
      v.data[i] = static_cast<float>(gain * value);
    }
    out.modalities.push_back(std::move(v));
  }
  return out;
}

}  // namespace msseg
