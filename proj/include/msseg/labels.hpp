#pragma once

#include <cstdint>
#include <vector>

#include "msseg/volume.hpp"

namespace msseg {

// Per-class probability maps y^k; every voxel's class vector sums to one.
struct ProbMaps {
  std::vector<Volume> maps;

  int classes() const { return static_cast<int>(maps.size()); }
  Shape3 shape() const { return maps.empty() ? Shape3{} : maps.front().shape; }
};

ProbMaps labels_to_onehot(const LabelMap& labels, int num_classes);

// Independent Gaussian smoothing of every class map.
ProbMaps smooth_labels(const ProbMaps& p, const GaussianKernel& k);

// Level s has shape / 2^s, each level renormalized per voxel. Level 0 is `p`.
std::vector<ProbMaps> target_pyramid(const ProbMaps& p, int scales, const GaussianKernel& k);

// Translation between external label ids (BRATS: 0, 1, 2, 4) and contiguous class indices.
class LabelRemap {
 public:
  LabelRemap() : external_{0, 1, 2, 4} {}
  explicit LabelRemap(std::vector<int> external_ids);

  static LabelRemap identity(int num_classes);

  const std::vector<int>& external_ids() const { return external_; }
  int classes() const { return static_cast<int>(external_.size()); }

  // Throws LabelOutOfRange for ids without a class.
  LabelMap to_internal(const LabelMap& external) const;
  LabelMap to_external(const LabelMap& internal) const;

  bool operator==(const LabelRemap&) const = default;

 private:
  std::vector<int> external_;
};

}  // namespace msseg
