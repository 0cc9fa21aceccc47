#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msseg/labels.hpp"
#include "msseg/volume.hpp"

namespace msseg {

// On disk a case is a directory holding <modality>.vol files and seg.vol (external label ids).
inline constexpr const char* kLabelFile = "seg.vol";

struct CaseData {
  std::string id;  // directory name
  std::vector<Volume> modalities;
  LabelMap labels;  // external ids; empty when the case has no seg.vol
};

// Sorted ids of the subdirectories of `root` that contain seg.vol.
std::vector<std::string> list_labeled_cases(const std::filesystem::path& root);

// Modalities in the given order; labels when present and `with_labels` is set.
CaseData load_case(const std::filesystem::path& dir, const std::vector<std::string>& modality_names,
                   bool with_labels = true);

// Writes `count` phantoms as case_000, case_001, ... plus manifest.json.
void write_synthetic_dataset(const std::filesystem::path& out, int count, Shape3 size, std::uint64_t seed);

}  // namespace msseg
