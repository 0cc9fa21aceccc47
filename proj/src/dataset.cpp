#include "msseg/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "msseg/error.hpp"
#include "msseg/network.hpp"
#include "msseg/phantom.hpp"
#include "msseg/rng.hpp"

namespace msseg {

namespace fs = std::filesystem;

std::vector<std::string> list_labeled_cases(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, "data directory " + root.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::is_regular_file(entry.path() / kLabelFile)) {
      ids.push_back(entry.path().filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

CaseData load_case(const fs::path& dir, const std::vector<std::string>& modality_names, bool with_labels) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingFile, "case directory " + dir.string());
  CaseData c;
  c.id = fs::absolute(dir).lexically_normal().filename().string();
  if (c.id.empty()) c.id = fs::absolute(dir).lexically_normal().parent_path().filename().string();
  for (const auto& name : modality_names) c.modalities.push_back(load_volume(dir / (name + ".vol")));
  for (const auto& m : c.modalities) {
    if (!(m.shape == c.modalities[0].shape)) {
      throw Error(ErrorCode::ShapeMismatch, dir.string() + ": modality shapes differ");
    }
  }
  if (with_labels && fs::exists(dir / kLabelFile)) {
    c.labels = load_label_map(dir / kLabelFile);
    if (!c.modalities.empty() && !(c.labels.shape == c.modalities[0].shape)) {
      throw Error(ErrorCode::ShapeMismatch, dir.string() + ": label map shape differs from modalities");
    }
  }
  return c;
}

void write_synthetic_dataset(const fs::path& out, int count, Shape3 size, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorCode::InvalidConfig, "case count must be >= 1");
  const auto names = default_modality_names(4);
  const LabelRemap remap;
  std::vector<SyntheticCase> cases;
  for (int i = 0; i < count; ++i) cases.push_back(synth_case(mix_seed(seed, "case/" + std::to_string(i)), size));

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out.string() + ": " + ec.message());
  const nlohmann::json shape = {size.d, size.h, size.w};
  nlohmann::json listed = nlohmann::json::array();
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%03d", i);
    const fs::path dir = out / id;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t m = 0; m < names.size(); ++m) {
      save_volume(cases[i].modalities[m], dir / (names[m] + ".vol"));
      files.push_back({{"path", std::string(id) + "/" + names[m] + ".vol"}, {"shape", shape}, {"dtype", "f32"}});
    }
    save_label_map(remap.to_external(cases[i].labels), dir / kLabelFile);
    files.push_back({{"path", std::string(id) + "/" + kLabelFile}, {"shape", shape}, {"dtype", "u8"}});
    listed.push_back({{"id", id}, {"files", files}});
  }
  const nlohmann::json manifest = {{"seed", seed},
                                   {"size", shape},
                                   {"modalities", names},
                                   {"label_ids", remap.external_ids()},
                                   {"cases", listed}};
  std::ofstream f(out / "manifest.json");
  f << manifest.dump(2) << '\n';
  if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + (out / "manifest.json").string());
}

}  // namespace msseg
