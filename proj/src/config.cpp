#include "msseg/config.hpp"

#include <fstream>

#include "json_reader.hpp"
#include "msseg/error.hpp"

namespace msseg {

void RunConfig::validate() const {
  if (precision != "float" && precision != "double") {
    throw Error(ErrorCode::InvalidConfig, "precision must be \"float\" or \"double\", got \"" + precision + "\"");
  }
  train.validate();
}

RunConfig run_config_from_json(const nlohmann::json& j, const std::string& context) {
  RunConfig cfg;
  detail::ObjectReader root(j, context + ":");
  root.get("precision", cfg.precision);
  if (const auto* n = root.child("network")) cfg.train.network = network_config_from_json(*n, context + ": network");

  SamplerConfig& s = cfg.train.sampler;
  s.patch_size = cfg.train.network.patch_size;
  s.scales = cfg.train.network.scales;
  if (const auto* node = root.child("sampler")) {
    detail::ObjectReader r(*node, context + ": sampler");
    r.get("patch_size", s.patch_size);
    r.get("min_tumor_fraction", s.min_tumor_fraction);
    r.get("noise_std", s.noise_std);
    r.get("scales", s.scales);
    r.get("max_attempts", s.max_attempts);
    r.finish();
  }

  TrainConfig& t = cfg.train;
  if (const auto* node = root.child("train")) {
    detail::ObjectReader r(*node, context + ": train");
    r.get("learning_rate", t.learning_rate);
    r.get("momentum", t.momentum);
    r.get("batch_size", t.batch_size);
    r.get("iterations", t.iterations);
    r.get("bn_calibration_samples", t.bn_calibration_samples);
    r.get("seed", t.seed);
    r.get("loss_weights", t.loss_weights);
    r.get("checkpoint_every", t.checkpoint_every);
    r.get("producers", t.producers);
    r.get("label_sigma", t.label_sigma);
    r.get("label_radius", t.label_radius);
    r.get("paper_exact_dice", t.loss.paper_exact_dice);
    r.get("dice_smoothing", t.loss.dice_smoothing);
    r.get("log_clamp", t.loss.log_clamp);
    r.finish();
  }
  root.finish();

  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, context + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::MissingFile, "config file " + path.string());
  std::ifstream in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.string());
}

nlohmann::json to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const SamplerConfig& s = t.sampler;
  return {{"precision", cfg.precision},
          {"network", to_json(t.network)},
          {"sampler",
           {{"patch_size", s.patch_size},
            {"min_tumor_fraction", s.min_tumor_fraction},
            {"noise_std", s.noise_std},
            {"scales", s.scales},
            {"max_attempts", s.max_attempts}}},
          {"train",
           {{"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"batch_size", t.batch_size},
            {"iterations", t.iterations},
            {"bn_calibration_samples", t.bn_calibration_samples},
            {"seed", t.seed},
            {"loss_weights", t.weights()},
            {"checkpoint_every", t.checkpoint_every},
            {"producers", t.producers},
            {"label_sigma", t.label_sigma},
            {"label_radius", t.label_radius},
            {"paper_exact_dice", t.loss.paper_exact_dice},
            {"dice_smoothing", t.loss.dice_smoothing},
            {"log_clamp", t.loss.log_clamp}}}};
}

}  // namespace msseg
