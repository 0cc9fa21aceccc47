#include <cmath>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "msseg/batch.hpp"
#include "msseg/error.hpp"
#include "msseg/phantom.hpp"
#include "msseg/trainer.hpp"

using namespace msseg;
using namespace testing;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.network.patch_size = 8;
  cfg.network.scales = 2;
  cfg.network.base_channels = 2;
  cfg.network.blocks_per_scale = 1;
  cfg.sampler.patch_size = 8;
  cfg.sampler.scales = 2;
  cfg.iterations = 6;
  cfg.bn_calibration_samples = 3;
  cfg.seed = 4;
  return cfg;
}

std::vector<PreparedCase> phantom_cases(int n, Shape3 s, const TrainConfig& cfg, std::uint64_t seed = 1) {
  std::vector<PreparedCase> out;
  for (int i = 0; i < n; ++i) {
    const auto sc = synth_case(seed + i, s);
    out.push_back(prepare_case("c" + std::to_string(i), sc.modalities, sc.labels, 4, cfg.label_kernel()));
  }
  return out;
}

double mean_total(const std::vector<TrainLogRecord>& log, std::size_t from, std::size_t count) {
  double t = 0.0;
  for (std::size_t i = from; i < from + count; ++i) t += log[i].total;
  return t / static_cast<double>(count);
}

}  // namespace

TEST_CASE("sgd with momentum") {
  Parameter<double> w{"w", Tensor<double>({1, 1, 1, 1, 1}), Tensor<double>({1, 1, 1, 1, 1})};
  Parameter<double>* params[] = {&w};
  std::vector<Tensor<double>> velocity;
  w.grad.data[0] = 1.0;
  sgd_step<double>(params, velocity, 0.1, 0.9);
  CHECK(w.value.data[0] == doctest::Approx(-0.1).epsilon(1e-15));
  sgd_step<double>(params, velocity, 0.1, 0.9);
  CHECK(w.value.data[0] == doctest::Approx(-0.29).epsilon(1e-15));
  CHECK(velocity[0].data[0] == doctest::Approx(1.9));

  Parameter<double> v{"v", Tensor<double>({1, 1, 1, 1, 2}), Tensor<double>({1, 1, 1, 1, 2})};
  v.value.data = {1.0, 2.0};
  v.grad.data = {0.5, -1.0};
  Parameter<double>* vp[] = {&v};
  std::vector<Tensor<double>> vel;
  sgd_step<double>(vp, vel, 0.2, 0.0);
  CHECK(v.value.data == std::vector<double>{0.9, 2.2});
  std::fill(v.grad.data.begin(), v.grad.data.end(), 0.0);
  std::fill(vel[0].data.begin(), vel[0].data.end(), 0.0);
  sgd_step<double>(vp, vel, 0.2, 0.9);
  CHECK(v.value.data == std::vector<double>{0.9, 2.2});

  std::vector<Tensor<double>> wrong{Tensor<double>({1, 1, 1, 1, 3})};
  CHECK_THROWS_AS(sgd_step<double>(vp, wrong, 0.1, 0.9), Error);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = tiny_config();
  cfg.validate();
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.sampler.patch_size = 16;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.loss_weights = {1.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("one iteration gives one log record; logs are reproducible") {
  TrainConfig cfg = tiny_config();
  const auto cases = phantom_cases(1, {16, 16, 16}, cfg);
  cfg.iterations = 1;
  TrainOptions<float> opt;
  opt.calibrate = false;
  CHECK(train<float>(cases, cfg, opt).log.size() == 1);

  cfg.iterations = 8;
  const auto a = train<float>(cases, cfg, opt);
  const auto b = train<float>(cases, cfg, opt);
  REQUIRE(a.log.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a.log[i].iteration == static_cast<std::int64_t>(i + 1));
    CHECK(a.log[i].total == b.log[i].total);
    CHECK(a.log[i].ce == b.log[i].ce);
    double sum = 0.0;
    for (int s = 0; s < 2; ++s) sum += a.log[i].ce[s] + a.log[i].dce[s];
    CHECK(a.log[i].total == doctest::Approx(sum).epsilon(1e-6));
  }
}

TEST_CASE("files, checkpoints and the training log") {
  TrainConfig cfg = tiny_config();
  cfg.checkpoint_every = 2;
  const auto cases = phantom_cases(1, {16, 16, 16}, cfg);
  TrainOptions<float> opt;
  opt.out_dir = temp_dir("train_files");
  const auto r = train<float>(cases, cfg, opt);
  for (const char* f : {"checkpoint_2.ckpt", "checkpoint_4.ckpt", "model.ckpt", "train_log.jsonl"}) {
    CHECK(std::filesystem::exists(opt.out_dir / f));
  }
  std::ifstream log(opt.out_dir / "train_log.jsonl");
  std::string line;
  std::int64_t last = 0;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["iteration"].get<std::int64_t>() > last);
    last = j["iteration"].get<std::int64_t>();
    CHECK(j.contains("seconds"));
    CHECK(j["ce"].size() == 2);
    ++lines;
  }
  CHECK(lines == 6);
  TrainingState<float> st;
  const auto model = load_checkpoint<float>(opt.out_dir / "model.ckpt", &st);
  CHECK(st.iteration == 6);
  for (const auto* bn : model.batchnorms()) CHECK(bn->sample_count == cfg.bn_calibration_samples);
}

TEST_CASE("non-finite gradient aborts with the last good checkpoint") {
  TrainConfig cfg = tiny_config();
  const auto cases = phantom_cases(1, {16, 16, 16}, cfg);
  TrainOptions<float> opt;
  opt.out_dir = temp_dir("diverge");
  opt.after_backward = [](std::int64_t it, Network<float>& net) {
    if (it == 3) net.parameters()[5]->grad.data[0] = std::nanf("");
  };
  try {
    train<float>(cases, cfg, opt);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DivergedLoss);
  }
  TrainingState<float> st;
  load_checkpoint<float>(opt.out_dir / "last_good.ckpt", &st);
  CHECK(st.iteration == 2);

  cfg.learning_rate = 1e30;
  TrainOptions<float> quiet;
  CHECK_THROWS_AS(train<float>(cases, cfg, quiet), Error);
}

TEST_CASE("no tumor anywhere propagates NoValidPatch") {
  TrainConfig cfg = tiny_config();
  auto cases = phantom_cases(1, {16, 16, 16}, cfg);
  std::fill(cases[0].tumor.data.begin(), cases[0].tumor.data.end(), 0);
  cfg.sampler.max_attempts = 10;
  try {
    train<float>(cases, cfg);
    FAIL("expected NoValidPatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoValidPatch);
  }
  cfg.producers = 2;
  CHECK_THROWS_AS(train<float>(cases, cfg), Error);
}

TEST_CASE("multi-producer sampling trains") {
  TrainConfig cfg = tiny_config();
  cfg.producers = 3;
  const auto cases = phantom_cases(2, {16, 16, 16}, cfg);
  const auto r = train<float>(cases, cfg);
  CHECK(r.log.size() == 6);
  for (const auto& rec : r.log) CHECK(std::isfinite(rec.total));
}

TEST_CASE("calibration") {
  TrainConfig cfg = tiny_config();
  const auto cases = phantom_cases(1, {16, 16, 16}, cfg);
  TrainOptions<double> opt;
  opt.calibrate = false;
  auto net = train<double>(cases, cfg, opt).net;

  auto stream = calibration_stream(cases, cfg);
  const auto sample = stream();
  calibrate_bn<double>(net, [&] { return sample; }, 1);
  for (const auto* bn : net.batchnorms()) CHECK(bn->sample_count == 1);
  const auto once = net.batchnorms()[0]->running_std;
  calibrate_bn<double>(net, [&] { return sample; }, 4);
  for (std::size_t c = 0; c < once.size(); ++c) {
    CHECK(net.batchnorms()[0]->running_std[c] == doctest::Approx(once[c]).epsilon(1e-12));
  }

  Graph<double> g(false);
  std::vector<Var> pyr;
  for (const auto& level : sample) pyr.push_back(g.input(pack<double>(level)));
  const auto infer = g.value(net.forward(g, pyr, BnMode::Infer)[0]).data;
  const auto trained = g.value(net.forward(g, pyr, BnMode::Train)[0]).data;
  double worst = 0.0;
  for (std::size_t i = 0; i < infer.size(); ++i) worst = std::max(worst, std::abs(infer[i] - trained[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("resume equals an uninterrupted run in double precision") {
  TrainConfig cfg = tiny_config();
  const auto cases = phantom_cases(2, {16, 16, 16}, cfg);
  TrainOptions<double> opt;
  opt.out_dir = temp_dir("resume");
  cfg.iterations = 3;
  train<double>(cases, cfg, opt);
  TrainingState<double> st;
  TrainSnapshot<double> snap{load_checkpoint<double>(opt.out_dir / "model.ckpt", &st), {}};
  snap.state = st;
  cfg.iterations = 6;
  const auto resumed = train<double>(cases, cfg, {}, snap);
  const auto straight = train<double>(cases, cfg);
  CHECK(resumed.log.size() == 3);
  CHECK(resumed.log.back().total == straight.log.back().total);
  const auto pa = resumed.net.parameters(), pb = straight.net.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.data == pb[i]->value.data);
  const auto ba = resumed.net.batchnorms(), bb = straight.net.batchnorms();
  for (std::size_t i = 0; i < ba.size(); ++i) CHECK(ba[i]->running_mean == bb[i]->running_mean);
}

TEST_CASE("every parameter gets a nonzero gradient within 50 iterations") {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 50;
  const auto cases = phantom_cases(1, {16, 16, 16}, cfg, 9);
  std::vector<double> seen;
  TrainOptions<float> opt;
  opt.calibrate = false;
  opt.after_backward = [&](std::int64_t, Network<float>& net) {
    const auto ps = net.parameters();
    seen.resize(ps.size(), 0.0);
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (float g : ps[i]->grad.data) seen[i] = std::max(seen[i], static_cast<double>(std::abs(g)));
  };
  const auto r = train<float>(cases, cfg, opt);
  const auto ps = const_cast<Network<float>&>(r.net).parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    INFO(ps[i]->name);
    CHECK(seen[i] > 0.0);
  }
}

TEST_CASE("200 iterations on one 32^3 phantom halve the loss") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    TrainConfig cfg;
    cfg.network.patch_size = cfg.sampler.patch_size = 16;
    cfg.network.base_channels = 8;
    cfg.iterations = 200;
    cfg.seed = seed;
    const auto cases = phantom_cases(1, {32, 32, 32}, cfg, 100 + seed);
    TrainOptions<float> opt;
    opt.calibrate = false;
    const auto r = train<float>(cases, cfg, opt);
    const double first = mean_total(r.log, 0, 10), last = mean_total(r.log, 190, 10);
    INFO("seed " << seed << " first " << first << " last " << last);
    CHECK(last < 0.5 * first);
  }
}
