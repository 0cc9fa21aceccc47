#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "msseg/error.hpp"
#include "msseg/inference.hpp"

using namespace msseg;
using namespace testing;

namespace {

Network<float> tiny_network(int patch, int scales = 2, int base = 2) {
  NetworkConfig cfg;
  cfg.patch_size = patch;
  cfg.scales = scales;
  cfg.base_channels = base;
  cfg.blocks_per_scale = 1;
  auto net = init_network<float>(cfg, 3);
  Rng rng(5);
  for (auto* bn : net.batchnorms()) {
    for (auto& m : bn->running_mean) m = static_cast<float>(rng.normal(0.0, 0.2));
    for (auto& s : bn->running_std) s = static_cast<float>(rng.uniform(0.5, 1.5));
  }
  return net;
}

std::vector<Volume> random_modalities(Rng& rng, Shape3 s) {
  std::vector<Volume> out;
  for (int m = 0; m < 4; ++m) out.push_back(random_volume(rng, s, 0.5, 5.0));
  return out;
}

}  // namespace

TEST_CASE("argmax tie rules") {
  ProbMaps p;
  p.maps = {Volume({1, 1, 2}), Volume({1, 1, 2}), Volume({1, 1, 2})};
  p.maps[1].data = {0.5f, 0.25f};
  p.maps[2].data = {0.5f, 0.25f};
  p.maps[0].data = {0.0f, 0.5f};
  CHECK(argmax_labels(p).data == std::vector<std::uint8_t>{1, 0});

  ProbMaps u;
  for (int k = 0; k < 4; ++k) u.maps.emplace_back(Shape3{2, 2, 2}, Spacing3{1, 1, 1}, 0.25f);
  for (auto l : argmax_labels(u).data) CHECK(l == 0);

  Rng rng(1);
  const LabelMap lm = random_labels(rng, {3, 4, 5}, 4);
  CHECK(argmax_labels(labels_to_onehot(lm, 4)).data == lm.data);
}

TEST_CASE("tiles are stitched exactly") {
  auto net = tiny_network(8);
  Rng rng(2);
  for (Shape3 s : {Shape3{16, 16, 16}, Shape3{11, 8, 19}, Shape3{1, 5, 3}}) {
    const auto mods = random_modalities(rng, s);
    const auto r = segment_volume(net, mods, "x");
    CHECK(r.labels.shape == s);
    CHECK(r.probabilities.shape() == s);
    CHECK(r.labels.data == argmax_labels(r.probabilities).data);
    for (auto l : r.labels.data) CHECK(l < 4);

    // Reference: normalize, pad, run each tile on its own.
    const Shape3 padded{(s.d + 7) / 8 * 8, (s.h + 7) / 8 * 8, (s.w + 7) / 8 * 8};
    std::vector<Volume> prepared;
    for (const auto& m : mods) prepared.push_back(pad_reflect(normalize_volume(m, brain_mask(m)), padded));
    auto local = net;
    for (int z = 0; z < padded.d; z += 8)
      for (int y = 0; y < padded.h; y += 8)
        for (int x = 0; x < padded.w; x += 8) {
          std::vector<Volume> tile;
          for (const auto& v : prepared) tile.push_back(crop(v, {z, y, x}, {8, 8, 8}));
          const ProbMaps p = predict_tile(local, tile);
          for (int k = 0; k < 4; ++k)
            for (int dz = 0; dz < 8 && z + dz < s.d; ++dz)
              for (int dy = 0; dy < 8 && y + dy < s.h; ++dy)
                for (int dx = 0; dx < 8 && x + dx < s.w; ++dx)
                  CHECK(r.probabilities.maps[k].at(z + dz, y + dy, x + dx) == p.maps[k].at(dz, dy, dx));
        }
  }
}

TEST_CASE("tiling arithmetic for 128 and 100 cubes with 64 patches") {
  auto net = tiny_network(64, 3, 1);
  Rng rng(3);
  const auto big = segment_volume(net, random_modalities(rng, {128, 128, 128}));
  CHECK(big.labels.shape == Shape3{128, 128, 128});
  const auto odd = segment_volume(net, random_modalities(rng, {100, 100, 100}));
  CHECK(odd.labels.shape == Shape3{100, 100, 100});
}

TEST_CASE("inference is deterministic across calls and thread counts") {
  auto net = tiny_network(8);
  Rng rng(4);
  const auto mods = random_modalities(rng, {17, 9, 16});
  const auto a = segment_volume(net, mods);
  const auto b = segment_volume(net, mods);
  const auto c = segment_volume(net, mods, "", {.threads = 3});
  for (int k = 0; k < 4; ++k) {
    CHECK(a.probabilities.maps[k].data == b.probabilities.maps[k].data);
    CHECK(a.probabilities.maps[k].data == c.probabilities.maps[k].data);
  }
  const LabelMap ext = export_labels(net, a);
  for (std::size_t i = 0; i < ext.data.size(); ++i) {
    CHECK(ext.data[i] == std::vector<std::uint8_t>{0, 1, 2, 4}[a.labels.data[i]]);
  }
}

TEST_CASE("inference input errors") {
  auto net = tiny_network(8);
  Rng rng(5);
  auto mods = random_modalities(rng, {8, 8, 8});
  mods.pop_back();
  CHECK_THROWS_AS(segment_volume(net, mods), Error);
  mods = random_modalities(rng, {8, 8, 8});
  mods[2] = random_volume(rng, {8, 8, 9});
  CHECK_THROWS_AS(segment_volume(net, mods), Error);
  mods = random_modalities(rng, {8, 8, 8});
  std::fill(mods[1].data.begin(), mods[1].data.end(), 2.0f);
  try {
    segment_volume(net, mods);
    FAIL("expected DegenerateVolume");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateVolume);
  }
}
