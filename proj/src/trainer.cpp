#include "msseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>
#include <variant>

#include "json.hpp"
#include "msseg/batch.hpp"
#include "msseg/error.hpp"

namespace msseg {

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("train.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("train.momentum must be in [0, 1)");
  if (batch_size < 1) bad("train.batch_size must be >= 1");
  if (iterations < 1) bad("train.iterations must be >= 1");
  if (bn_calibration_samples < 1) bad("train.bn_calibration_samples must be >= 1");
  if (checkpoint_every < 0) bad("train.checkpoint_every must be >= 0");
  if (producers < 1) bad("train.producers must be >= 1");
  if (!loss_weights.empty() && static_cast<int>(loss_weights.size()) != network.scales) {
    bad("train.loss_weights needs one weight per scale");
  }
  for (double w : loss_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) bad("train.loss_weights must be finite and >= 0");
  }
  network.validate();
  sampler.validate();
  if (sampler.patch_size != network.patch_size) bad("sampler.patch_size differs from network.patch_size");
  if (sampler.scales != network.scales) bad("sampler.scales differs from network.scales");
  (void)label_kernel();
}

std::vector<double> TrainConfig::weights() const {
  return loss_weights.empty() ? std::vector<double>(network.scales, 1.0) : loss_weights;
}

std::string to_json_line(const TrainLogRecord& r) {
  nlohmann::json j = {{"iteration", r.iteration}, {"total", r.total}, {"ce", r.ce}, {"dce", r.dce},
                      {"seconds", r.seconds}};
  return j.dump();
}

template <typename Real>
void sgd_step(std::span<Parameter<Real>* const> params, std::vector<Tensor<Real>>& velocity, Real lr, Real momentum) {
  if (velocity.empty()) {
    for (const auto* p : params) velocity.emplace_back(p->value.shape);
  }
  if (velocity.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "velocity/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Real>& p = *params[i];
    Tensor<Real>& v = velocity[i];
    if (!(v.shape == p.value.shape) || !(p.grad.shape == p.value.shape)) {
      throw Error(ErrorCode::ShapeMismatch, "sgd_step shapes for " + p.name);
    }
    for (std::size_t j = 0; j < v.data.size(); ++j) {
      v.data[j] = momentum * v.data[j] + p.grad.data[j];
      p.value.data[j] -= lr * v.data[j];
    }
  }
}

namespace {

PatchSample draw(std::span<const PreparedCase> cases, const TrainConfig& cfg, const GaussianKernel& k, Rng& sampler,
                 Rng& noise) {
  const auto& c = cases[static_cast<std::size_t>(sampler.uniform_int(0, static_cast<int>(cases.size()) - 1))];
  return augment_noise(sample_patch(c, cfg.sampler, k, sampler), cfg.sampler.noise_std, noise);
}

using QueueItem = std::variant<PatchSample, std::exception_ptr>;

// Sampling threads feeding a bounded queue. Each producer owns its own streams.
class ProducerPool {
 public:
  ProducerPool(std::span<const PreparedCase> cases, const TrainConfig& cfg, std::uint64_t epoch)
      : queue_(2 * static_cast<std::size_t>(cfg.producers)) {
    for (int i = 0; i < cfg.producers; ++i) {
      const std::string tag = "producer/" + std::to_string(epoch) + "/" + std::to_string(i);
      threads_.emplace_back([this, cases, &cfg, tag] {
        Rng sampler = Rng::substream(cfg.seed, "sampler/" + tag);
        Rng noise = Rng::substream(cfg.seed, "noise/" + tag);
        const GaussianKernel k = cfg.network.downsample_kernel();
        try {
          while (queue_.push(draw(cases, cfg, k, sampler, noise))) {
          }
        } catch (...) {
          queue_.push(std::current_exception());
        }
      });
    }
  }

  ~ProducerPool() {
    queue_.close();
    for (auto& t : threads_) t.join();
  }

  PatchSample next() {
    auto item = queue_.pop();
    if (!item) throw Error(ErrorCode::IoFailure, "patch queue closed");
    if (auto* e = std::get_if<std::exception_ptr>(&*item)) std::rethrow_exception(*e);
    return std::move(std::get<PatchSample>(*item));
  }

 private:
  BoundedQueue<QueueItem> queue_;
  std::vector<std::thread> threads_;
};

template <typename Real>
bool finite_grads(const Network<Real>& net) {
  for (const auto* p : net.parameters()) {
    for (Real v : p->grad.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

template <typename Real>
TrainResult<Real> train(std::span<const PreparedCase> cases, const TrainConfig& cfg, const TrainOptions<Real>& opt,
                        std::optional<TrainSnapshot<Real>> resume) {
  cfg.validate();
  if (cases.empty()) throw Error(ErrorCode::NoValidPatch, "no training cases");
  for (const auto& c : cases) {
    if (static_cast<int>(c.modalities.size()) != cfg.network.num_modalities) {
      throw Error(ErrorCode::ChannelMismatch, "case " + c.id + " has " + std::to_string(c.modalities.size()) +
                                                  " modalities, network expects " +
                                                  std::to_string(cfg.network.num_modalities));
    }
    if (c.targets.classes() != cfg.network.num_classes) {
      throw Error(ErrorCode::ChannelMismatch, "case " + c.id + " class count differs from network");
    }
  }

  TrainResult<Real> result;
  Rng sampler_rng = Rng::substream(cfg.seed, "sampler");
  Rng noise_rng = Rng::substream(cfg.seed, "noise");
  if (resume) {
    if (!(resume->net.config() == cfg.network)) {
      throw Error(ErrorCode::ConfigMismatch, "resumed network config differs from training config");
    }
    result.net = std::move(resume->net);
    result.state = std::move(resume->state);
    if (!result.state.sampler_rng.empty()) sampler_rng.restore(result.state.sampler_rng);
    if (!result.state.noise_rng.empty()) noise_rng.restore(result.state.noise_rng);
  } else {
    result.net = init_network<Real>(cfg.network, cfg.seed);
  }
  Network<Real>& net = result.net;
  TrainingState<Real>& state = result.state;
  auto params = net.parameters();
  if (state.velocity.empty()) {
    for (const auto* p : params) state.velocity.emplace_back(p->value.shape);
  }

  const GaussianKernel k = cfg.network.downsample_kernel();
  const std::vector<double> weights = cfg.weights();
  const int S = cfg.network.scales;
  const bool files = !opt.out_dir.empty();
  std::ofstream log_file;
  if (files) {
    std::filesystem::create_directories(opt.out_dir);
    log_file.open(opt.out_dir / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw Error(ErrorCode::IoFailure, "cannot write training log in " + opt.out_dir.string());
  }
  auto snapshot_state = [&] {
    state.sampler_rng = sampler_rng.state();
    state.noise_rng = noise_rng.state();
  };

  std::optional<ProducerPool> pool;
  if (cfg.producers > 1) pool.emplace(cases, cfg, static_cast<std::uint64_t>(state.iteration));

  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t it = state.iteration + 1; it <= cfg.iterations; ++it) {
    std::vector<std::vector<std::vector<Volume>>> inputs(S);  // [scale][batch][modality]
    std::vector<std::vector<std::vector<Volume>>> targets(S);
    for (int b = 0; b < cfg.batch_size; ++b) {
      PatchSample p = pool ? pool->next() : draw(cases, cfg, k, sampler_rng, noise_rng);
      for (int s = 0; s < S; ++s) {
        inputs[s].push_back(std::move(p.inputs[s]));
        targets[s].push_back(std::move(p.targets[s].maps));
      }
    }

    Graph<Real> g;
    std::vector<Var> pyramid;
    std::vector<Tensor<Real>> target_tensors;
    for (int s = 0; s < S; ++s) {
      pyramid.push_back(g.input(pack<Real>(std::span<const std::vector<Volume>>(inputs[s]))));
      target_tensors.push_back(pack<Real>(std::span<const std::vector<Volume>>(targets[s])));
    }
    const std::vector<Var> outputs = net.forward(g, pyramid, BnMode::Train);
    MultiscaleLoss loss = multiscale_loss<Real>(g, outputs, target_tensors, weights, cfg.loss);

    net.zero_grad();
    bool healthy = std::isfinite(loss.breakdown.total);
    if (healthy) {
      g.backward(loss.total);
      if (opt.after_backward) opt.after_backward(it, net);
      healthy = finite_grads(net);
    }
    if (!healthy) {
      if (files) {
        // Parameters are still those of the last completed step.
        state.iteration = it - 1;
        save_checkpoint(net, opt.out_dir / "last_good.ckpt", &state);
      }
      throw Error(ErrorCode::DivergedLoss, "non-finite loss or gradient at iteration " + std::to_string(it));
    }
    sgd_step<Real>(params, state.velocity, static_cast<Real>(cfg.learning_rate), static_cast<Real>(cfg.momentum));
    state.iteration = it;
    snapshot_state();

    TrainLogRecord rec;
    rec.iteration = it;
    rec.total = loss.breakdown.total;
    rec.ce = loss.breakdown.ce;
    rec.dce = loss.breakdown.dce;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (files) log_file << to_json_line(rec) << '\n' << std::flush;
    if (opt.on_record) opt.on_record(rec);
    result.log.push_back(std::move(rec));

    if (files && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.iterations) {
      save_checkpoint(net, opt.out_dir / ("checkpoint_" + std::to_string(it) + ".ckpt"), &state);
    }
  }
  pool.reset();

  if (opt.calibrate) calibrate_bn(net, calibration_stream(cases, cfg), cfg.bn_calibration_samples);
  if (files) save_checkpoint(net, opt.out_dir / "model.ckpt", &state);
  return result;
}

template <typename Real>
void calibrate_bn(Network<Real>& net, const std::function<std::vector<std::vector<Volume>>()>& sample_stream,
                  int count) {
  if (count < 1) throw Error(ErrorCode::InvalidConfig, "calibration needs at least one sample");
  for (auto* bn : net.batchnorms()) bn->reset_running();
  for (int i = 0; i < count; ++i) {
    const auto levels = sample_stream();
    Graph<Real> g(false);
    std::vector<Var> pyramid;
    for (const auto& level : levels) pyramid.push_back(g.input(pack<Real>(level)));
    net.forward(g, pyramid, BnMode::Calibrate);
  }
}

std::function<std::vector<std::vector<Volume>>()> calibration_stream(std::span<const PreparedCase> cases,
                                                                      const TrainConfig& cfg) {
  auto rng = std::make_shared<Rng>(Rng::substream(cfg.seed, "calibration"));
  const GaussianKernel k = cfg.network.downsample_kernel();
  return [cases, cfg, k, rng] {
    const auto& c = cases[static_cast<std::size_t>(rng->uniform_int(0, static_cast<int>(cases.size()) - 1))];
    return sample_patch(c, cfg.sampler, k, *rng).inputs;
  };
}

#define MSSEG_INSTANTIATE(Real)                                                                                     \
  template void sgd_step<Real>(std::span<Parameter<Real>* const>, std::vector<Tensor<Real>>&, Real, Real);         \
  template TrainResult<Real> train<Real>(std::span<const PreparedCase>, const TrainConfig&,                         \
                                         const TrainOptions<Real>&, std::optional<TrainSnapshot<Real>>);            \
  template void calibrate_bn<Real>(Network<Real>&, const std::function<std::vector<std::vector<Volume>>()>&, int);

MSSEG_INSTANTIATE(float)
MSSEG_INSTANTIATE(double)

}  // namespace msseg
