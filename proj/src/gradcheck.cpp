#include "msseg/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "msseg/error.hpp"
#include "msseg/loss.hpp"

namespace msseg {

template <>
double gradcheck_tolerance<double>() {
  return 1e-6;
}
template <>
double gradcheck_tolerance<float>() {
  return 1e-3;
}
template <>
double gradcheck_step<double>() {
  return 1e-6;
}
template <>
double gradcheck_step<float>() {
  return 1e-2;
}

namespace {

template <typename Real>
Tensor<Real> random_tensor(Shape5 s, Rng& rng, double stddev = 1.0) {
  Tensor<Real> t(s);
  for (Real& v : t.data) v = static_cast<Real>(rng.normal(0.0, stddev));
  return t;
}

template <typename Real>
double evaluate(const GradCheckBuild<Real>& build, const std::vector<Tensor<Real>>& inputs, const Tensor<Real>& probe) {
  Graph<Real> g(false);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t));
  const Var out = build(g, vars);
  const Tensor<Real>& v = g.value(out);
  if (probe.empty()) return v.data[0];
  double acc = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) acc += static_cast<double>(probe.data[i]) * v.data[i];
  return acc;
}

}  // namespace

template <typename Real>
double gradient_error(const GradCheckBuild<Real>& build, std::vector<Tensor<Real>> inputs,
                      std::span<Parameter<Real>* const> params, Rng& rng, double corrupt_factor) {
  for (auto* p : params) p->zero_grad();

  Graph<Real> g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t, true));
  const Var out = build(g, vars);
  Tensor<Real> probe;
  Var loss = out;
  if (g.value(out).numel() != 1) {
    probe = random_tensor<Real>(g.value(out).shape, rng);
    loss = dot(g, out, probe);
  }
  g.backward(loss);

  std::vector<double> analytic;
  for (const Var v : vars) {
    const auto& gr = g.grad(v);
    for (std::size_t i = 0; i < gr.data.size(); ++i) analytic.push_back(gr.data[i] * corrupt_factor);
  }
  for (auto* p : params) {
    for (Real d : p->grad.data) analytic.push_back(d * corrupt_factor);
  }

  const double h = gradcheck_step<Real>();
  std::vector<double> numeric;
  for (auto& t : inputs) {
    for (Real& x : t.data) {
      const Real keep = x;
      x = static_cast<Real>(keep + h);
      const double up = evaluate(build, inputs, probe);
      x = static_cast<Real>(keep - h);
      const double down = evaluate(build, inputs, probe);
      x = keep;
      numeric.push_back((up - down) / (2.0 * h));
    }
  }
  for (auto* p : params) {
    for (Real& x : p->value.data) {
      const Real keep = x;
      x = static_cast<Real>(keep + h);
      const double up = evaluate(build, inputs, probe);
      x = static_cast<Real>(keep - h);
      const double down = evaluate(build, inputs, probe);
      x = keep;
      numeric.push_back((up - down) / (2.0 * h));
    }
  }

  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::fabs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
  }
  return scale > 0.0 ? diff / scale : diff;
}

std::vector<std::string> gradcheck_ops() {
  return {"conv3d", "conv1x1", "batchnorm", "elu", "add", "concat", "downsample_layer", "upsample_layer",
          "softmax_ce_dice", "micro_network"};
}

namespace {

template <typename Real>
double check_op(const std::string& op, Rng& rng, double corrupt) {
  const Shape5 small{1, 2, 4, 4, 4};
  std::vector<Parameter<Real>*> none;
  auto randomize = [&](Parameter<Real>& p) {
    for (Real& v : p.value.data) v = static_cast<Real>(rng.normal());
  };

  if (op == "conv3d" || op == "conv1x1") {
    const int size = op == "conv3d" ? 3 : 1;
    ConvKernel<Real> k("k", 2, 3, size, true);
    randomize(k.weight);
    randomize(*k.bias);
    std::vector<Parameter<Real>*> params{&k.weight, &*k.bias};
    GradCheckBuild<Real> build = [&](Graph<Real>& g, std::span<const Var> in) {
      return size == 3 ? conv3d(g, in[0], k) : conv1x1(g, in[0], k);
    };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng)}, params, rng, corrupt);
  }
  if (op == "batchnorm") {
    BatchNormState<Real> bn("bn", 2);
    randomize(bn.gamma);
    randomize(bn.shift);
    std::vector<Parameter<Real>*> params{&bn.gamma, &bn.shift};
    GradCheckBuild<Real> build = [&](Graph<Real>& g, std::span<const Var> in) {
      return batchnorm(g, in[0], bn, BnMode::Train);
    };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng)}, params, rng, corrupt);
  }
  if (op == "elu") {
    GradCheckBuild<Real> build = [](Graph<Real>& g, std::span<const Var> in) { return elu(g, in[0]); };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng)}, none, rng, corrupt);
  }
  if (op == "add") {
    GradCheckBuild<Real> build = [](Graph<Real>& g, std::span<const Var> in) { return add(g, in[0], in[1]); };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng), random_tensor<Real>(small, rng)}, none, rng,
                                corrupt);
  }
  if (op == "concat") {
    GradCheckBuild<Real> build = [](Graph<Real>& g, std::span<const Var> in) { return concat_channels(g, in); };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng), random_tensor<Real>({1, 3, 4, 4, 4}, rng)},
                                none, rng, corrupt);
  }
  if (op == "downsample_layer") {
    const GaussianKernel kernel(1.0, 2);
    GradCheckBuild<Real> build = [&](Graph<Real>& g, std::span<const Var> in) {
      return downsample_layer(g, in[0], kernel);
    };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng)}, none, rng, corrupt);
  }
  if (op == "upsample_layer") {
    GradCheckBuild<Real> build = [](Graph<Real>& g, std::span<const Var> in) { return upsample_layer(g, in[0]); };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng)}, none, rng, corrupt);
  }
  if (op == "softmax_ce_dice") {
    const Shape5 s{1, 4, 4, 4, 4};
    Tensor<Real> target(s);
    // random per-voxel distribution
    for (std::size_t i = 0; i < s.spatial().size(); ++i) {
      double total = 0.0;
      std::array<double, 4> w{};
      for (double& v : w) total += (v = rng.uniform(0.01, 1.0));
      for (int c = 0; c < 4; ++c) target.data[c * s.spatial().size() + i] = static_cast<Real>(w[c] / total);
    }
    GradCheckBuild<Real> build = [&](Graph<Real>& g, std::span<const Var> in) {
      const Var p = softmax_channels(g, in[0]);
      return add(g, cross_entropy(g, p, target), dice_loss(g, p, target));
    };
    return gradient_error<Real>(build, {random_tensor<Real>(s, rng)}, none, rng, corrupt);
  }
  if (op == "micro_network") {
    // 1x1 conv (2 -> 2, 6 params) + batch norm (4 params): ten parameters
    ConvKernel<Real> k("micro.conv", 2, 2, 1, true);
    BatchNormState<Real> bn("micro.bn", 2);
    randomize(k.weight);
    randomize(*k.bias);
    for (Real& v : bn.gamma.value.data) v = static_cast<Real>(rng.uniform(0.5, 1.5));
    randomize(bn.shift);
    std::vector<Parameter<Real>*> params{&k.weight, &*k.bias, &bn.gamma, &bn.shift};
    Tensor<Real> target(small);
    for (std::size_t i = 0; i < small.spatial().size(); ++i) {
      const int cls = rng.uniform_int(0, 1);
      target.data[cls * small.spatial().size() + i] = Real(1);
    }
    GradCheckBuild<Real> build = [&](Graph<Real>& g, std::span<const Var> in) {
      const Var h = elu(g, batchnorm(g, conv1x1(g, in[0], k), bn, BnMode::Train));
      const Var p = softmax_channels(g, h);
      return add(g, cross_entropy(g, p, target), dice_loss(g, p, target));
    };
    return gradient_error<Real>(build, {random_tensor<Real>(small, rng)}, params, rng, corrupt);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown gradcheck op '" + op + "'");
}

}  // namespace

template <typename Real>
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt) {
  const auto ops = gradcheck_ops();
  if (!opt.corrupt_op.empty() && std::find(ops.begin(), ops.end(), opt.corrupt_op) == ops.end()) {
    throw Error(ErrorCode::InvalidConfig, "unknown gradcheck op '" + opt.corrupt_op + "'");
  }
  std::vector<GradCheckResult> results;
  for (const auto& op : ops) {
    GradCheckResult r;
    r.op = op;
    r.tolerance = gradcheck_tolerance<Real>();
    r.seeds = opt.seeds;
    const double corrupt = op == opt.corrupt_op ? 1.01 : 1.0;
    for (int s = 0; s < opt.seeds; ++s) {
      Rng rng = Rng::substream(opt.seed + static_cast<std::uint64_t>(s), "gradcheck/" + op);
      r.max_rel_error = std::max(r.max_rel_error, check_op<Real>(op, rng, corrupt));
    }
    r.passed = r.max_rel_error < r.tolerance;
    results.push_back(r);
  }
  return results;
}

template double gradient_error<float>(const GradCheckBuild<float>&, std::vector<Tensor<float>>,
                                      std::span<Parameter<float>* const>, Rng&, double);
template double gradient_error<double>(const GradCheckBuild<double>&, std::vector<Tensor<double>>,
                                       std::span<Parameter<double>* const>, Rng&, double);
template std::vector<GradCheckResult> run_gradcheck_suite<float>(const GradCheckOptions&);
template std::vector<GradCheckResult> run_gradcheck_suite<double>(const GradCheckOptions&);

}  // namespace msseg
