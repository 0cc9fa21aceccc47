#pragma once

#include <cstdint>
#include <vector>

#include "msseg/volume.hpp"

namespace msseg {

struct PhantomOptions {
  // Bounds on the tumor voxel fraction of the whole grid.
  double min_tumor_fraction = 0.005;
  double max_tumor_fraction = 0.10;
  Spacing3 spacing{1.0, 1.0, 1.0};
};

// A generated case. Labels use the internal contiguous convention
// (0 background, 1 necrotic, 2 edema, 3 enhancing when K = 4).
struct SyntheticCase {
  std::vector<Volume> modalities;
  LabelMap labels;
};

// Ellipsoidal head with a nested lesion (edema around an enhancing rim around a
// necrotic centre). Each modality weights the tissues differently, roughly after
// T1 / T1ce / T2 / FLAIR contrast. Deterministic in `seed`.
// Supports 2 <= num_classes <= 4 and every axis >= 16.
SyntheticCase synth_case(std::uint64_t seed, Shape3 size, int num_modalities = 4, int num_classes = 4,
                         const PhantomOptions& options = {});

}  // namespace msseg
