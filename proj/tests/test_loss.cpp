#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "msseg/error.hpp"
#include "msseg/loss.hpp"

using namespace msseg;
using namespace testing;

namespace {

using T = Tensor<double>;

T random_distribution(Rng& rng, Shape5 s) {
  T t(s);
  const std::size_t vox = s.spatial().size();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < vox; ++i) {
      double total = 0.0;
      for (int c = 0; c < s.c; ++c) total += t.data[t.channel_offset(n, c) + i] = rng.uniform(0.01, 1.0);
      for (int c = 0; c < s.c; ++c) t.data[t.channel_offset(n, c) + i] /= total;
    }
  return t;
}

T onehot(Rng& rng, Shape5 s) {
  T t(s);
  const std::size_t vox = s.spatial().size();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < vox; ++i) t.data[t.channel_offset(n, rng.uniform_int(0, s.c - 1)) + i] = 1.0;
  return t;
}

// Direct summations, written from the formulas.
double ce_oracle(const T& p, const T& y) {
  const double n = static_cast<double>(p.shape.n) * p.shape.spatial().size();
  double total = 0.0;
  for (int b = 0; b < p.shape.n; ++b)
    for (int k = 0; k < p.shape.c; ++k)
      for (std::size_t i = 0; i < p.shape.spatial().size(); ++i) {
        const double pv = std::max(p.data[p.channel_offset(b, k) + i], 1e-7);
        total -= y.data[y.channel_offset(b, k) + i] * std::log(pv) / n;
      }
  return total;
}

double dice_oracle(const T& p, const T& y) {
  double total = 0.0;
  for (int k = 1; k < p.shape.c; ++k) {
    double py = 0, pp = 0, yy = 0;
    for (int b = 0; b < p.shape.n; ++b)
      for (std::size_t i = 0; i < p.shape.spatial().size(); ++i) {
        const double a = p.data[p.channel_offset(b, k) + i], c = y.data[y.channel_offset(b, k) + i];
        py += a * c;
        pp += a * a;
        yy += c * c;
      }
    total += 1.0 - (2 * py + 1e-5) / (pp + yy + 1e-5);
  }
  return total;
}

double scalar(Graph<double>& g, Var v) { return g.value(v).data[0]; }

}  // namespace

TEST_CASE("cross entropy") {
  Rng rng(1);
  const T y = onehot(rng, {1, 4, 2, 2, 2});
  Graph<double> g;
  CHECK(scalar(g, cross_entropy(g, g.input(y), y)) == doctest::Approx(0.0).epsilon(1e-12));

  T uniform(y.shape);
  std::fill(uniform.data.begin(), uniform.data.end(), 0.25);
  CHECK(std::abs(scalar(g, cross_entropy(g, g.input(uniform), y)) - std::log(4.0)) < 1e-6);

  for (int trial = 0; trial < 10; ++trial) {
    const T p = random_distribution(rng, {2, 3, 2, 2, 2});
    const T t = random_distribution(rng, {2, 3, 2, 2, 2});
    const double ce = scalar(g, cross_entropy(g, g.input(p), t));
    CHECK(std::abs(ce - ce_oracle(p, t)) < 1e-6);
    CHECK(ce >= 0.0);
  }
  CHECK_THROWS_AS(cross_entropy(g, g.input(y), T({1, 3, 2, 2, 2})), Error);
}

TEST_CASE("dice loss") {
  Rng rng(2);
  Graph<double> g;
  T y({1, 3, 1, 2, 3});
  // Every class present.
  y.data = {1, 0, 0, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 0};
  CHECK(std::abs(scalar(g, dice_loss(g, g.input(y), y))) < 1e-9);

  T none(y.shape);
  for (std::size_t i = 0; i < 6; ++i) none.data[i] = 1.0;  // all background
  const double missing = scalar(g, dice_loss(g, g.input(none), y));
  CHECK(missing == doctest::Approx(2.0).epsilon(1e-4));

  // |P| = |Y| = 2, one shared voxel: term 1 - 2/4 on class 1.
  T p2({1, 2, 1, 1, 4}), y2({1, 2, 1, 1, 4});
  p2.data = {0, 0, 1, 1, 1, 1, 0, 0};
  y2.data = {1, 0, 0, 1, 0, 1, 1, 0};
  CHECK(scalar(g, dice_loss(g, g.input(p2), y2)) == doctest::Approx(0.5).epsilon(1e-5));

  for (int trial = 0; trial < 10; ++trial) {
    const T p = random_distribution(rng, {2, 4, 2, 3, 2});
    const T t = random_distribution(rng, {2, 4, 2, 3, 2});
    const double d = scalar(g, dice_loss(g, g.input(p), t));
    CHECK(std::abs(d - dice_oracle(p, t)) < 1e-9);
    CHECK(d >= 0.0);
    CHECK(d <= 3.0 + 1e-6);
  }

  // With the 1/n factor, a perfect prediction scores (1 - 1/n) per foreground class.
  LossOptions exact;
  exact.paper_exact_dice = true;
  const double n = 6.0;
  CHECK(scalar(g, dice_loss(g, g.input(y), y, exact)) == doctest::Approx(2 * (1 - 1 / n)));

  T single({1, 1, 1, 1, 2});
  CHECK_THROWS_AS(dice_loss(g, g.input(single), single), Error);
}

TEST_CASE("multiscale loss") {
  Rng rng(3);
  std::vector<T> ps, ys;
  for (int s = 0; s < 3; ++s) {
    ps.push_back(random_distribution(rng, {1, 4, 4 >> s, 4 >> s, 4 >> s}));
    ys.push_back(onehot(rng, {1, 4, 4 >> s, 4 >> s, 4 >> s}));
  }
  Graph<double> g;
  std::vector<Var> outs;
  for (const auto& p : ps) outs.push_back(g.input(p));
  const std::vector<double> w{1.0, 0.5, 0.25};
  const auto loss = multiscale_loss<double>(g, outs, ys, w);
  double expect = 0.0;
  for (int s = 0; s < 3; ++s) {
    CHECK(loss.breakdown.ce[s] == doctest::Approx(ce_oracle(ps[s], ys[s])));
    CHECK(loss.breakdown.dce[s] == doctest::Approx(dice_oracle(ps[s], ys[s])));
    expect += w[s] * (ce_oracle(ps[s], ys[s]) + dice_oracle(ps[s], ys[s]));
  }
  CHECK(std::abs(loss.breakdown.total - expect) < 1e-6);
  CHECK(scalar(g, loss.total) == doctest::Approx(loss.breakdown.total).epsilon(1e-12));

  const std::vector<double> one{1.0};
  const auto single = multiscale_loss<double>(g, std::span(outs).first(1), std::span(ys).first(1), one);
  CHECK(single.breakdown.total == doctest::Approx(single.breakdown.ce[0] + single.breakdown.dce[0]));

  const std::vector<double> two{1.0, 1.0};
  CHECK_THROWS_AS(multiscale_loss<double>(g, outs, ys, two), Error);
}

TEST_CASE("loss is invariant to a shared voxel permutation") {
  Rng rng(4);
  const T p = random_distribution(rng, {1, 3, 2, 2, 2});
  const T y = random_distribution(rng, {1, 3, 2, 2, 2});
  const std::vector<int> perm{5, 2, 7, 0, 1, 6, 3, 4};
  T pp(p.shape), yp(y.shape);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 8; ++i) {
      pp.data[c * 8 + i] = p.data[c * 8 + perm[i]];
      yp.data[c * 8 + i] = y.data[c * 8 + perm[i]];
    }
  Graph<double> g;
  CHECK(scalar(g, cross_entropy(g, g.input(p), y)) == doctest::Approx(scalar(g, cross_entropy(g, g.input(pp), yp))));
  CHECK(scalar(g, dice_loss(g, g.input(p), y)) == doctest::Approx(scalar(g, dice_loss(g, g.input(pp), yp))));
}
