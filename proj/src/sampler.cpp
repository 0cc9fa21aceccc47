#include "msseg/sampler.hpp"

#include <cmath>

#include "msseg/error.hpp"

namespace msseg {

void SamplerConfig::validate() const {
  if (patch_size < 1 || scales < 1 || max_attempts < 1) {
    throw Error(ErrorCode::InvalidConfig, "sampler needs positive patch_size, scales and max_attempts");
  }
  if (patch_size % (1 << (scales - 1)) != 0) {
    throw Error(ErrorCode::InvalidConfig, "patch_size must be divisible by 2^(scales-1)");
  }
  if (!(min_tumor_fraction >= 0.0 && min_tumor_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "min_tumor_fraction must lie in [0, 1)");
  }
  if (!(noise_std >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise_std must be >= 0");
}

std::int64_t SamplerConfig::tumor_threshold() const {
  const double voxels = std::pow(static_cast<double>(patch_size), 3);
  return static_cast<std::int64_t>(std::ceil(min_tumor_fraction * voxels));
}

PreparedCase prepare_case(std::string id, const std::vector<Volume>& raw_modalities, const LabelMap& labels,
                          int num_classes, const GaussianKernel& label_kernel) {
  PreparedCase c;
  c.id = std::move(id);
  for (const Volume& v : raw_modalities) {
    if (!(v.shape == labels.shape)) {
      throw Error(ErrorCode::ShapeMismatch, c.id + ": modality " + v.shape.str() + " vs labels " + labels.shape.str());
    }
    c.modalities.push_back(normalize_volume(v, brain_mask(v)));
  }
  c.targets = smooth_labels(labels_to_onehot(labels, num_classes), label_kernel);
  c.tumor = Mask(labels.shape, labels.spacing, 0);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    int best = 0;
    for (int k = 1; k < num_classes; ++k) {
      if (c.targets.maps[k].data[i] > c.targets.maps[best].data[i]) best = k;
    }
    c.tumor.data[i] = best != 0;
  }
  return c;
}

std::vector<std::vector<Volume>> input_pyramid(const std::vector<Volume>& patch, int scales, const GaussianKernel& k) {
  if (patch.empty()) throw Error(ErrorCode::ShapeMismatch, "input pyramid of zero modalities");
  const Shape3 s = patch.front().shape;
  const int f = 1 << (scales - 1);
  if (s.d % f || s.h % f || s.w % f) {
    throw Error(ErrorCode::ShapeNotDivisible, s.str() + " not divisible by " + std::to_string(f));
  }
  std::vector<std::vector<Volume>> levels{patch};
  for (int level = 1; level < scales; ++level) {
    std::vector<Volume> next;
    for (const Volume& v : levels.back()) next.push_back(downsample2(v, k));
    levels.push_back(std::move(next));
  }
  return levels;
}

std::int64_t count_tumor_voxels(const Mask& tumor, Index3 origin, int patch_size) {
  std::int64_t count = 0;
  for (int z = 0; z < patch_size; ++z)
    for (int y = 0; y < patch_size; ++y) {
      const std::uint8_t* row = &tumor.at(origin.z + z, origin.y + y, origin.x);
      for (int x = 0; x < patch_size; ++x) count += row[x];
    }
  return count;
}

PatchSample sample_patch(const PreparedCase& c, const SamplerConfig& cfg, const GaussianKernel& k, Rng& rng) {
  cfg.validate();
  const Shape3 s = c.tumor.shape;
  const int p = cfg.patch_size;
  if (s.d < p || s.h < p || s.w < p) {
    throw Error(ErrorCode::VolumeTooSmall, c.id + ": " + s.str() + " smaller than patch " + std::to_string(p));
  }
  const std::int64_t needed = cfg.tumor_threshold();
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const Index3 origin{rng.uniform_int(0, s.d - p), rng.uniform_int(0, s.h - p), rng.uniform_int(0, s.w - p)};
    if (count_tumor_voxels(c.tumor, origin, p) < needed) continue;

    const Shape3 size{p, p, p};
    PatchSample out;
    out.origin = origin;
    std::vector<Volume> mods;
    for (const Volume& m : c.modalities) mods.push_back(crop(m, origin, size));
    out.inputs = input_pyramid(mods, cfg.scales, k);
    ProbMaps t;
    for (const Volume& m : c.targets.maps) t.maps.push_back(crop(m, origin, size));
    out.targets = target_pyramid(t, cfg.scales, k);
    return out;
  }
  throw Error(ErrorCode::NoValidPatch, c.id + ": no patch with " + std::to_string(needed) + " tumor voxels after " +
                                           std::to_string(cfg.max_attempts) + " attempts");
}

PatchSample augment_noise(PatchSample p, double noise_std, Rng& rng) {
  if (noise_std < 0.0) throw Error(ErrorCode::InvalidConfig, "noise_std must be >= 0");
  if (noise_std == 0.0) return p;
  std::normal_distribution<double> noise(0.0, noise_std);
  for (auto& level : p.inputs)
    for (Volume& v : level)
      for (float& x : v.data) x = static_cast<float>(x + noise(rng.engine()));
  return p;
}

}  // namespace msseg
