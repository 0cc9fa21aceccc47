#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msseg/checkpoint.hpp"
#include "msseg/loss.hpp"
#include "msseg/network.hpp"
#include "msseg/sampler.hpp"

namespace msseg {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 1;
  std::int64_t iterations = 1000;
  int bn_calibration_samples = 5000;
  std::uint64_t seed = 1;
  std::vector<double> loss_weights;  // one per scale; empty means all ones
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  int producers = 1;                  // >1 samples on threads; order is then not reproducible
  double label_sigma = 1.0;           // ground-truth smoothing
  int label_radius = 2;
  LossOptions loss;
  NetworkConfig network;
  SamplerConfig sampler;

  // Also checks that sampler and network agree on patch size and scale count.
  void validate() const;
  std::vector<double> weights() const;
  GaussianKernel label_kernel() const { return GaussianKernel(label_sigma, label_radius); }
};

struct TrainLogRecord {
  std::int64_t iteration = 0;
  double total = 0.0;
  std::vector<double> ce;
  std::vector<double> dce;
  double seconds = 0.0;
};

std::string to_json_line(const TrainLogRecord& r);

// v = momentum * v + grad; value -= lr * v. An empty velocity list is zero-filled first.
template <typename Real>
void sgd_step(std::span<Parameter<Real>* const> params, std::vector<Tensor<Real>>& velocity, Real lr, Real momentum);

template <typename Real>
struct TrainOptions {
  // Checkpoints and train_log.jsonl go here; empty disables all file output.
  std::filesystem::path out_dir;
  bool calibrate = true;
  std::function<void(const TrainLogRecord&)> on_record;
  // Called after backward, before the guard and update. Used for fault injection.
  std::function<void(std::int64_t iteration, Network<Real>& net)> after_backward;
};

template <typename Real>
struct TrainSnapshot {
  Network<Real> net;
  TrainingState<Real> state;
};

template <typename Real>
struct TrainResult {
  Network<Real> net;
  TrainingState<Real> state;
  std::vector<TrainLogRecord> log;
};

// Runs iterations state.iteration+1 .. cfg.iterations. Throws DivergedLoss when the loss or a
// gradient turns non-finite, after writing last_good.ckpt to out_dir (if set).
template <typename Real>
TrainResult<Real> train(std::span<const PreparedCase> cases, const TrainConfig& cfg, const TrainOptions<Real>& opt = {},
                        std::optional<TrainSnapshot<Real>> resume = std::nullopt);

// Resets running statistics, then runs `count` Calibrate-mode forward passes. Each sample is a
// per-scale input pyramid [scale][modality].
template <typename Real>
void calibrate_bn(Network<Real>& net, const std::function<std::vector<std::vector<Volume>>()>& sample_stream,
                  int count);

// Unaugmented patches from a dedicated stream of `seed`, as used after training.
std::function<std::vector<std::vector<Volume>>()> calibration_stream(std::span<const PreparedCase> cases,
                                                                      const TrainConfig& cfg);

}  // namespace msseg
