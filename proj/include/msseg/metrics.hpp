#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "msseg/volume.hpp"

namespace msseg {

enum class Region { ET, WT, TC };
inline constexpr std::array<Region, 3> kRegions{Region::ET, Region::WT, Region::TC};
const char* region_name(Region r);

struct RegionMask {
  Region region;
  Mask bits;
};

// Internal ids: ET = {3}, TC = {1, 3}, WT = {1, 2, 3}. Returned in ET, WT, TC order.
std::array<RegionMask, 3> region_masks(const LabelMap& lm);

// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice_score(const Mask& a, const Mask& b);

struct Rates {
  std::optional<double> sensitivity;  // empty when there are no true positives to find
  std::optional<double> specificity;  // empty when there are no true negatives to find
};
Rates sensitivity_specificity(const Mask& pred, const Mask& truth);

// Mask voxels with a 6-neighbour outside the mask or on the grid edge.
Mask boundary(const Mask& m);

// Squared distance (in spacing units) from every voxel to the nearest set voxel of
// `sites`; +inf everywhere when `sites` is empty. Exact separable transform.
std::vector<double> squared_distance_map(const Mask& sites, Spacing3 spacing);

// Squared distances from each boundary voxel of `a` to the nearest boundary voxel of `b`,
// in raster order of a's boundary.
std::vector<double> boundary_distances_sq(const Mask& a, const Mask& b, Spacing3 spacing);

// Linear interpolation between order statistics at position (n - 1) * q.
double percentile_inclusive(std::vector<double> values, double q);

// max of the two directed 95th percentiles of boundary distances. EmptyMask if either is empty.
double hd95(const Mask& a, const Mask& b, Spacing3 spacing);

struct RegionMetrics {
  double dice = 0.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> hd95;  // undefined when either mask is empty
};

struct MetricsReport {
  std::string case_id;
  std::array<RegionMetrics, 3> regions;  // ET, WT, TC

  const RegionMetrics& operator[](Region r) const { return regions[static_cast<int>(r)]; }
  // Flat object in Dice / Sensitivity / Specificity / Hausdorff95 x ET / WT / TC column order;
  // undefined values are null.
  nlohmann::ordered_json to_json() const;
};

// Labels in internal ids.
MetricsReport evaluate_case(const LabelMap& pred, const LabelMap& truth, Spacing3 spacing,
                            const std::string& case_id = "");

// Mean and median of each column across cases, skipping undefined values.
nlohmann::ordered_json aggregate_reports(std::span<const MetricsReport> reports);

}  // namespace msseg
