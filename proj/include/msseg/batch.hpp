#pragma once

#include <span>
#include <vector>

#include "msseg/error.hpp"
#include "msseg/labels.hpp"
#include "msseg/tensor.hpp"

namespace msseg {

// batch[b][c] -> (N, C, D, H, W); all volumes must share one shape.
template <typename Real>
Tensor<Real> pack(std::span<const std::vector<Volume>> batch) {
  if (batch.empty() || batch[0].empty()) throw Error(ErrorCode::ShapeMismatch, "cannot pack an empty batch");
  const Shape3 s = batch[0][0].shape;
  const int channels = static_cast<int>(batch[0].size());
  Tensor<Real> t({static_cast<int>(batch.size()), channels, s.d, s.h, s.w});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (static_cast<int>(batch[b].size()) != channels) throw Error(ErrorCode::ShapeMismatch, "ragged batch");
    for (int c = 0; c < channels; ++c) {
      const Volume& v = batch[b][c];
      if (!(v.shape == s)) throw Error(ErrorCode::ShapeMismatch, "batch volume " + v.shape.str() + " vs " + s.str());
      Real* dst = t.data.data() + t.channel_offset(static_cast<int>(b), c);
      for (std::size_t i = 0; i < v.data.size(); ++i) dst[i] = static_cast<Real>(v.data[i]);
    }
  }
  return t;
}

template <typename Real>
Tensor<Real> pack(const std::vector<Volume>& single) {
  return pack<Real>(std::span<const std::vector<Volume>>(&single, 1));
}

// Channels of batch item `b` as float volumes.
template <typename Real>
std::vector<Volume> unpack(const Tensor<Real>& t, int b, Spacing3 spacing = {1.0, 1.0, 1.0}) {
  std::vector<Volume> out;
  const Shape3 s = t.shape.spatial();
  for (int c = 0; c < t.shape.c; ++c) {
    Volume v(s, spacing);
    const Real* src = t.data.data() + t.channel_offset(b, c);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(src[i]);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace msseg
