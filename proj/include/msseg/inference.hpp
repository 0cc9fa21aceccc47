#pragma once

#include <string>
#include <vector>

#include "msseg/labels.hpp"
#include "msseg/network.hpp"

namespace msseg {

struct SegmentationResult {
  std::string case_id;
  LabelMap labels;  // internal class ids
  ProbMaps probabilities;
};

struct InferenceOptions {
  int threads = 1;
};

// Per-voxel argmax; ties go to the lowest class index.
LabelMap argmax_labels(const ProbMaps& p);

// Scale-0 class probabilities of one already-normalized P^3 tile, Infer mode.
template <typename Real>
ProbMaps predict_tile(Network<Real>& net, const std::vector<Volume>& tile);

// Normalizes every modality, pads reflectively at the high end to a multiple of P,
// runs non-overlapping P^3 tiles, stitches and crops back to the input shape.
template <typename Real>
SegmentationResult segment_volume(const Network<Real>& net, const std::vector<Volume>& modalities,
                                  const std::string& case_id = "", const InferenceOptions& opt = {});

// Labels in the network's external convention (BRATS ids by default).
template <typename Real>
LabelMap export_labels(const Network<Real>& net, const SegmentationResult& r) {
  return net.label_remap.to_external(r.labels);
}

}  // namespace msseg
