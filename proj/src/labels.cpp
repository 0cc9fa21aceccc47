#include "msseg/labels.hpp"

#include <array>
#include <numeric>
#include <string>

#include "msseg/error.hpp"

namespace msseg {

ProbMaps labels_to_onehot(const LabelMap& labels, int num_classes) {
  if (num_classes < 1) throw Error(ErrorCode::InvalidConfig, "class count must be positive");
  ProbMaps p;
  p.maps.assign(num_classes, Volume(labels.shape, labels.spacing, 0.0f));
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const int k = labels.data[i];
    if (k >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "label " + std::to_string(k) + " with " + std::to_string(num_classes) + " classes");
    }
    p.maps[k].data[i] = 1.0f;
  }
  return p;
}

ProbMaps smooth_labels(const ProbMaps& p, const GaussianKernel& k) {
  ProbMaps out;
  out.maps.reserve(p.maps.size());
  for (const Volume& m : p.maps) out.maps.push_back(gaussian_smooth(m, k));
  return out;
}

namespace {

void renormalize(ProbMaps& p) {
  const std::size_t n = p.shape().size();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const Volume& m : p.maps) sum += m.data[i];
    if (sum <= 0.0) continue;
    for (Volume& m : p.maps) m.data[i] = static_cast<float>(m.data[i] / sum);
  }
}

}  // namespace

std::vector<ProbMaps> target_pyramid(const ProbMaps& p, int scales, const GaussianKernel& k) {
  if (scales < 1) throw Error(ErrorCode::InvalidConfig, "scales must be >= 1");
  const Shape3 s = p.shape();
  const int f = 1 << (scales - 1);
  if (s.d % f != 0 || s.h % f != 0 || s.w % f != 0) {
    throw Error(ErrorCode::ShapeNotDivisible, s.str() + " not divisible by " + std::to_string(f));
  }
  std::vector<ProbMaps> levels{p};
  for (int level = 1; level < scales; ++level) {
    ProbMaps next;
    for (const Volume& m : levels.back().maps) next.maps.push_back(downsample2(m, k));
    renormalize(next);
    levels.push_back(std::move(next));
  }
  return levels;
}

LabelRemap::LabelRemap(std::vector<int> external_ids) : external_(std::move(external_ids)) {
  if (external_.empty() || external_.size() > 256) throw Error(ErrorCode::InvalidConfig, "label remap needs 1..256 classes");
  std::array<bool, 256> seen{};
  for (int id : external_) {
    if (id < 0 || id > 255 || seen[id]) throw Error(ErrorCode::InvalidConfig, "label remap ids must be distinct bytes");
    seen[id] = true;
  }
}

LabelRemap LabelRemap::identity(int num_classes) {
  std::vector<int> ids(num_classes);
  std::iota(ids.begin(), ids.end(), 0);
  return LabelRemap(ids);
}

LabelMap LabelRemap::to_internal(const LabelMap& external) const {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (std::size_t k = 0; k < external_.size(); ++k) lut[external_[k]] = static_cast<int>(k);
  LabelMap out(external.shape, external.spacing, 0);
  for (std::size_t i = 0; i < external.data.size(); ++i) {
    const int k = lut[external.data[i]];
    if (k < 0) throw Error(ErrorCode::LabelOutOfRange, "unmapped label id " + std::to_string(external.data[i]));
    out.data[i] = static_cast<std::uint8_t>(k);
  }
  return out;
}

LabelMap LabelRemap::to_external(const LabelMap& internal) const {
  LabelMap out(internal.shape, internal.spacing, 0);
  for (std::size_t i = 0; i < internal.data.size(); ++i) {
    const int k = internal.data[i];
    if (k >= classes()) throw Error(ErrorCode::LabelOutOfRange, "class index " + std::to_string(k));
    out.data[i] = static_cast<std::uint8_t>(external_[k]);
  }
  return out;
}

}  // namespace msseg
