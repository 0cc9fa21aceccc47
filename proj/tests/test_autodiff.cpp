#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "msseg/autodiff.hpp"
#include "msseg/batch.hpp"
#include "msseg/error.hpp"
#include "msseg/gradcheck.hpp"
#include "msseg/volume.hpp"

using namespace msseg;
using namespace testing;

namespace {

using T = Tensor<double>;

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("gradcheck suite passes in double precision") {
  const auto results = run_gradcheck_suite<double>({.seed = 11, .seeds = 5, .corrupt_op = ""});
  CHECK(results.size() == gradcheck_ops().size());
  for (const auto& r : results) {
    INFO(r.op << " max rel error " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("gradcheck suite passes in single precision") {
  for (const auto& r : run_gradcheck_suite<float>({.seed = 3, .seeds = 5, .corrupt_op = ""})) {
    INFO(r.op << " max rel error " << r.max_rel_error);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("a corrupted backward is detected") {
  for (const std::string op : {"conv3d", "batchnorm", "softmax_ce_dice"}) {
    const auto results = run_gradcheck_suite<double>({.seed = 1, .seeds = 1, .corrupt_op = op});
    for (const auto& r : results) CHECK(r.passed == (r.op != op));
  }
  CHECK_THROWS_AS(run_gradcheck_suite<double>({.corrupt_op = "nonsense"}), Error);
}

TEST_CASE("conv3d forward") {
  Rng rng(1);
  const T x = random_tensor<double>(rng, {1, 1, 4, 3, 5});

  ConvKernel<double> delta("d", 1, 1, 3, true);
  delta.weight.value.data[13] = 1.0;
  Graph<double> g;
  const Var out = conv3d(g, g.input(x), delta);
  CHECK(g.value(out).data == x.data);

  ConvKernel<double> ones("o", 2, 1, 3, false);
  std::fill(ones.weight.value.data.begin(), ones.weight.value.data.end(), 1.0);
  T c({1, 2, 3, 4, 2});
  std::fill(c.data.begin(), c.data.end(), 0.5);
  const Var oc = conv3d(g, g.input(c), ones);
  for (double v : g.value(oc).data) CHECK(v == doctest::Approx(27.0));  // 27 taps x 2 channels x 0.5

  ConvKernel<double> wrong("w", 3, 1, 3, false);
  CHECK(code_of([&] { conv3d(g, g.input(x), wrong); }) == ErrorCode::ChannelMismatch);
}

TEST_CASE("conv3d matches a direct reflective convolution") {
  Rng rng(2);
  const T x = random_tensor<double>(rng, {2, 2, 3, 4, 5});
  ConvKernel<double> k("k", 2, 3, 3, true);
  k.init_he(rng);
  for (double& b : k.bias->value.data) b = rng.normal();
  Graph<double> g;
  const T y = g.value(conv3d(g, g.input(x), k));
  const Shape3 s = x.shape.spatial();
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int z = 0; z < s.d; ++z)
        for (int yy = 0; yy < s.h; ++yy)
          for (int xx = 0; xx < s.w; ++xx) {
            double acc = k.bias->value.data[o];
            for (int i = 0; i < 2; ++i)
              for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                  for (int dx = -1; dx <= 1; ++dx) {
                    const double w = k.weight.value.at(o, i, dz + 1, dy + 1, dx + 1);
                    acc += w * x.at(n, i, reflect_index(z + dz, s.d), reflect_index(yy + dy, s.h),
                                    reflect_index(xx + dx, s.w));
                  }
            CHECK(y.at(n, o, z, yy, xx) == doctest::Approx(acc).epsilon(1e-12));
          }
}

TEST_CASE("conv1x1 forward") {
  Rng rng(3);
  const T x = random_tensor<double>(rng, {1, 2, 2, 2, 3});
  ConvKernel<double> id("i", 2, 2, 1, true);
  id.weight.value.data = {1, 0, 0, 1};
  ConvKernel<double> total("t", 2, 1, 1, false);
  total.weight.value.data = {1, 1};
  Graph<double> g;
  const Var in = g.input(x);
  CHECK(g.value(conv1x1(g, in, id)).data == x.data);
  const T s = g.value(conv1x1(g, in, total));
  for (std::size_t i = 0; i < 12; ++i) CHECK(s.data[i] == doctest::Approx(x.data[i] + x.data[12 + i]));
}

TEST_CASE("batchnorm modes") {
  Rng rng(4);
  const T x = random_tensor<double>(rng, {2, 3, 3, 3, 3}, 4.0);
  BatchNormState<double> bn("bn", 3);
  Graph<double> g;
  const T y = g.value(batchnorm(g, g.input(x), bn, BnMode::Train));
  for (int c = 0; c < 3; ++c) {
    double m = 0, ss = 0;
    for (int n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 27; ++i) m += y.data[y.channel_offset(n, c) + i];
    m /= 54;
    for (int n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 27; ++i) ss += std::pow(y.data[y.channel_offset(n, c) + i] - m, 2);
    CHECK(std::abs(m) < 1e-4);
    CHECK(std::abs(std::sqrt(ss / 54) - 1.0) < 1e-4);
  }
  CHECK(bn.sample_count == 0);

  T constant({1, 3, 2, 2, 2});
  std::fill(constant.data.begin(), constant.data.end(), 3.0);
  bn.shift.value.data = {0.5, -1.0, 2.0};
  const T yc = g.value(batchnorm(g, g.input(constant), bn, BnMode::Train));
  for (int c = 0; c < 3; ++c) CHECK(yc.data[yc.channel_offset(0, c)] == doctest::Approx(bn.shift.value.data[c]));

  // Calibrate: one batch copies its statistics; a repeated batch keeps them.
  bn.reset_running();
  batchnorm(g, g.input(x), bn, BnMode::Calibrate);
  const auto mean1 = bn.running_mean;
  const auto std1 = bn.running_std;
  CHECK(bn.sample_count == 1);
  batchnorm(g, g.input(x), bn, BnMode::Calibrate);
  CHECK(bn.sample_count == 2);
  for (int c = 0; c < 3; ++c) {
    CHECK(bn.running_mean[c] == doctest::Approx(mean1[c]).epsilon(1e-12));
    CHECK(bn.running_std[c] == doctest::Approx(std1[c]).epsilon(1e-12));
  }
  // Infer with those statistics reproduces the Train output.
  const T train = g.value(batchnorm(g, g.input(x), bn, BnMode::Train));
  const T infer = g.value(batchnorm(g, g.input(x), bn, BnMode::Infer));
  for (std::size_t i = 0; i < train.data.size(); ++i) CHECK(infer.data[i] == doctest::Approx(train.data[i]));

  // Two different batches average.
  const T x2 = random_tensor<double>(rng, {2, 3, 3, 3, 3});
  bn.reset_running();
  batchnorm(g, g.input(x), bn, BnMode::Calibrate);
  const auto m_a = bn.running_mean;
  bn.reset_running();
  batchnorm(g, g.input(x2), bn, BnMode::Calibrate);
  const auto m_b = bn.running_mean;
  batchnorm(g, g.input(x), bn, BnMode::Calibrate);
  for (int c = 0; c < 3; ++c) CHECK(bn.running_mean[c] == doctest::Approx((m_a[c] + m_b[c]) / 2));
}

TEST_CASE("elu, add, concat") {
  T x({1, 1, 1, 1, 3});
  x.data = {0.0, 1.0, -20.0};
  Graph<double> g;
  const Var xv = g.input(x);
  const T e = g.value(elu(g, xv));
  CHECK(e.data[0] == 0.0);
  CHECK(e.data[1] == 1.0);
  CHECK(e.data[2] == doctest::Approx(std::expm1(-20.0)).epsilon(1e-12));
  CHECK(e.data[2] > -1.0);

  const Var zero = g.input(T(x.shape));
  CHECK(g.value(add(g, xv, zero)).data == x.data);
  CHECK(code_of([&] { add(g, xv, g.input(T({1, 2, 1, 1, 3}))); }) == ErrorCode::ShapeMismatch);

  Rng rng(5);
  const T a = random_tensor<double>(rng, {2, 2, 1, 2, 2});
  const T b = random_tensor<double>(rng, {2, 3, 1, 2, 2});
  const Var one[] = {g.input(a)};
  CHECK(g.value(concat_channels<double>(g, one)).data == a.data);
  const Var both[] = {g.input(a), g.input(b)};
  const T ab = g.value(concat_channels<double>(g, both));
  CHECK(ab.shape.c == 5);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 2; ++c) CHECK(ab.at(n, c, 0, 1, 1) == a.at(n, c, 0, 1, 1));
    for (int c = 0; c < 3; ++c) CHECK(ab.at(n, 2 + c, 0, 0, 1) == b.at(n, c, 0, 0, 1));
  }
  const Var mismatched[] = {g.input(a), g.input(T({1, 3, 1, 2, 2}))};
  CHECK(code_of([&] { concat_channels<double>(g, mismatched); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("downsample and upsample layers") {
  Rng rng(6);
  const GaussianKernel k;
  const T x = random_tensor<double>(rng, {1, 2, 6, 4, 8});
  Graph<double> g;
  const Var xv = g.input(x, true);
  const Var d = downsample_layer(g, xv, k);
  const T dv = g.value(d);
  CHECK(dv.shape == Shape5{1, 2, 3, 2, 4});
  for (int c = 0; c < 2; ++c) {
    Volume v = unpack<double>(x, 0)[c];
    const Volume ref = downsample2(v, k);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(dv.data[dv.channel_offset(0, c) + i] == doctest::Approx(ref.data[i]).epsilon(1e-5));
    }
  }
  CHECK(code_of([&] { downsample_layer(g, g.input(T({1, 1, 3, 4, 4})), k); }) == ErrorCode::ShapeNotDivisible);

  // Adjoint test <A x, y> = <x, A^T y> with A^T from backward of dot(A x, y).
  for (int trial = 0; trial < 5; ++trial) {
    Graph<double> h;
    const T xs = random_tensor<double>(rng, {2, 3, 4, 6, 2});
    const T ys = random_tensor<double>(rng, {2, 3, 2, 3, 1});
    const Var in = h.input(xs, true);
    const Var loss = dot(h, downsample_layer(h, in, k), ys);
    h.backward(loss);
    double lhs = h.value(loss).data[0], rhs = 0.0;
    for (std::size_t i = 0; i < xs.data.size(); ++i) rhs += xs.data[i] * h.grad(in).data[i];
    CHECK(std::abs(lhs - rhs) < 1e-4);
  }

  T one({1, 1, 1, 1, 1});
  one.data[0] = 2.5;
  Graph<double> u;
  const Var ov = u.input(one, true);
  const Var up = upsample_layer(u, ov);
  CHECK(u.value(up).data == std::vector<double>(8, 2.5));
  u.backward(sum(u, up));
  CHECK(u.grad(ov).data[0] == 8.0);
}

TEST_CASE("softmax") {
  T x({1, 4, 1, 1, 2});
  x.data = {1, 1000, 1, 0, 1, 0, 1, 0};
  Graph<double> g;
  const T p = g.value(softmax_channels(g, g.input(x)));
  for (int c = 0; c < 4; ++c) CHECK(p.at(0, c, 0, 0, 0) == doctest::Approx(0.25));
  CHECK(p.at(0, 0, 0, 0, 1) == 1.0);
  CHECK(p.at(0, 1, 0, 0, 1) == 0.0);

  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const T r = random_tensor<double>(rng, {1, rng.uniform_int(2, 5), 2, 2, 2}, 30.0);
    Graph<double> h;
    const T q = h.value(softmax_channels(h, h.input(r)));
    for (std::size_t i = 0; i < 8; ++i) {
      double total = 0.0;
      for (int c = 0; c < r.shape.c; ++c) total += q.data[q.channel_offset(0, c) + i];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("backward semantics") {
  Rng rng(8);
  const T x = random_tensor<double>(rng, {1, 2, 2, 2, 2});
  Graph<double> g;
  const Var xv = g.input(x, true);
  g.backward(sum(g, xv));
  CHECK(g.grad(xv).data == std::vector<double>(16, 1.0));

  Graph<double> f;
  const Var fx = f.input(x, true);
  f.backward(sum(f, add(f, fx, fx)));
  CHECK(f.grad(fx).data == std::vector<double>(16, 2.0));

  // A second backward without reset doubles parameter and input gradients.
  ConvKernel<double> k("k", 2, 2, 3, true);
  k.init_he(rng);
  Graph<double> h;
  const Var hx = h.input(x, true);
  const T w = random_tensor<double>(rng, {1, 2, 2, 2, 2});
  const Var loss = dot(h, elu(h, conv3d(h, hx, k)), w);
  k.weight.zero_grad();
  k.bias->zero_grad();
  h.backward(loss);
  const T g1 = k.weight.grad;
  const T x1 = h.grad(hx);
  h.backward(loss);
  for (std::size_t i = 0; i < g1.data.size(); ++i) CHECK(k.weight.grad.data[i] == 2.0 * g1.data[i]);
  for (std::size_t i = 0; i < x1.data.size(); ++i) CHECK(h.grad(hx).data[i] == 2.0 * x1.data[i]);

  CHECK(code_of([&] { h.backward(hx); }) == ErrorCode::NotScalarLoss);
}

TEST_CASE("constant input stays constant through conv3d") {
  Rng rng(9);
  ConvKernel<double> k("k", 3, 2, 3, true);
  k.init_he(rng);
  T c({1, 3, 4, 5, 3});
  for (int ch = 0; ch < 3; ++ch)
    std::fill_n(c.data.begin() + c.channel_offset(0, ch), 60, static_cast<double>(ch) - 0.7);
  Graph<double> g;
  const T y = g.value(conv3d(g, g.input(c), k));
  for (int o = 0; o < 2; ++o)
    for (std::size_t i = 1; i < 60; ++i) CHECK(y.data[y.channel_offset(0, o) + i] == doctest::Approx(y.data[y.channel_offset(0, o)]));
}
