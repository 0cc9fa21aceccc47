#include "msseg/inference.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "msseg/batch.hpp"
#include "msseg/error.hpp"
#include "msseg/sampler.hpp"

namespace msseg {

LabelMap argmax_labels(const ProbMaps& p) {
  if (p.maps.empty()) throw Error(ErrorCode::ChannelMismatch, "argmax of zero classes");
  LabelMap out(p.shape(), p.maps[0].spacing);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    int best = 0;
    float best_v = p.maps[0].data[i];
    for (int k = 1; k < p.classes(); ++k) {
      if (p.maps[k].data[i] > best_v) {
        best_v = p.maps[k].data[i];
        best = k;
      }
    }
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

template <typename Real>
ProbMaps predict_tile(Network<Real>& net, const std::vector<Volume>& tile) {
  const NetworkConfig& cfg = net.config();
  const auto levels = input_pyramid(tile, cfg.scales, cfg.downsample_kernel());
  Graph<Real> g(false);
  std::vector<Var> pyramid;
  for (const auto& level : levels) pyramid.push_back(g.input(pack<Real>(level)));
  const auto outputs = net.forward(g, pyramid, BnMode::Infer);
  ProbMaps p;
  p.maps = unpack<Real>(g.value(outputs[0]), 0, tile[0].spacing);
  return p;
}

template <typename Real>
SegmentationResult segment_volume(const Network<Real>& net, const std::vector<Volume>& modalities,
                                  const std::string& case_id, const InferenceOptions& opt) {
  const NetworkConfig& cfg = net.config();
  if (static_cast<int>(modalities.size()) != cfg.num_modalities) {
    throw Error(ErrorCode::ShapeMismatch, "got " + std::to_string(modalities.size()) + " modalities, network expects " +
                                              std::to_string(cfg.num_modalities));
  }
  const Shape3 shape = modalities[0].shape;
  for (const auto& m : modalities) {
    if (!(m.shape == shape)) throw Error(ErrorCode::ShapeMismatch, "modality shapes " + m.shape.str() + " vs " + shape.str());
  }
  const int P = cfg.patch_size;
  auto round_up = [P](int n) { return (n + P - 1) / P * P; };
  const Shape3 padded{round_up(shape.d), round_up(shape.h), round_up(shape.w)};

  std::vector<Volume> inputs;
  for (const auto& m : modalities) inputs.push_back(pad_reflect(normalize_volume(m, brain_mask(m)), padded));

  std::vector<Index3> tiles;
  for (int z = 0; z < padded.d; z += P)
    for (int y = 0; y < padded.h; y += P)
      for (int x = 0; x < padded.w; x += P) tiles.push_back({z, y, x});

  ProbMaps full;
  for (int k = 0; k < cfg.num_classes; ++k) full.maps.emplace_back(padded, modalities[0].spacing);

  const Shape3 tile_shape{P, P, P};
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    Network<Real> local = net;
    try {
      for (std::size_t t = next++; t < tiles.size(); t = next++) {
        std::vector<Volume> tile;
        for (const auto& v : inputs) tile.push_back(crop(v, tiles[t], tile_shape));
        const ProbMaps p = predict_tile(local, tile);
        const Index3 o = tiles[t];
        for (int k = 0; k < cfg.num_classes; ++k)
          for (int z = 0; z < P; ++z)
            for (int y = 0; y < P; ++y)
              std::copy_n(&p.maps[k].at(z, y, 0), P, &full.maps[k].at(o.z + z, o.y + y, o.x));
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = tiles.size();
    }
  };
  const int threads = std::clamp(opt.threads, 1, static_cast<int>(tiles.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  SegmentationResult r;
  r.case_id = case_id;
  for (auto& m : full.maps) r.probabilities.maps.push_back(crop(m, {0, 0, 0}, shape));
  r.labels = argmax_labels(r.probabilities);
  return r;
}

template ProbMaps predict_tile<float>(Network<float>&, const std::vector<Volume>&);
template ProbMaps predict_tile<double>(Network<double>&, const std::vector<Volume>&);
template SegmentationResult segment_volume<float>(const Network<float>&, const std::vector<Volume>&, const std::string&,
                                                  const InferenceOptions&);
template SegmentationResult segment_volume<double>(const Network<double>&, const std::vector<Volume>&,
                                                   const std::string&, const InferenceOptions&);

}  // namespace msseg
