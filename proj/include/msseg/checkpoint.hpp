#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "msseg/network.hpp"

namespace msseg {

inline constexpr int kCheckpointVersion = 1;

// Optimizer and sampler state needed to continue training exactly.
template <typename Real>
struct TrainingState {
  std::int64_t iteration = 0;
  std::vector<Tensor<Real>> velocity;  // parallel to Network::parameters()
  std::string sampler_rng;
  std::string noise_rng;
};

nlohmann::json to_json(const NetworkConfig& cfg);
// Unknown keys are rejected; `context` prefixes error messages.
NetworkConfig network_config_from_json(const nlohmann::json& j, const std::string& context);

// One JSON manifest line (format, version, dtype, config, label remap, parameter
// names and shapes, batch-norm counts, optional training state), then the raw
// little-endian payload: parameters in manifest order, running mean and std of
// every batch norm, then the velocity tensors when training state is present.
template <typename Real>
void save_checkpoint(const Network<Real>& net, const std::filesystem::path& path,
                     const TrainingState<Real>* state = nullptr);

template <typename Real>
Network<Real> load_checkpoint(const std::filesystem::path& path, TrainingState<Real>* state = nullptr);

// "f32" or "f64", read from the manifest only.
std::string checkpoint_dtype(const std::filesystem::path& path);

}  // namespace msseg
