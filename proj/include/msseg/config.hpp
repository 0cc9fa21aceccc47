#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "msseg/trainer.hpp"

namespace msseg {

// Everything `msseg train` needs apart from paths.
struct RunConfig {
  std::string precision = "float";  // "float" or "double"
  TrainConfig train;

  void validate() const;
};

// Sections: "precision", "network", "sampler", "train". Unknown keys are rejected; errors
// name `context` (usually the file) and the offending key. sampler.patch_size and
// sampler.scales default to the network values.
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& context);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace msseg
