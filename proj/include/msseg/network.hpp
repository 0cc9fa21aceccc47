#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msseg/autodiff.hpp"
#include "msseg/labels.hpp"

namespace msseg {

struct NetworkConfig {
  int scales = 3;
  int base_channels = 16;  // doubles at every coarser scale
  int blocks_per_scale = 2;
  int num_classes = 4;
  int num_modalities = 4;
  int patch_size = 64;
  // Gaussian used by every decimation (feature maps and input pyramid).
  double downsample_sigma = 1.0;
  int downsample_radius = 2;

  void validate() const;
  int width(int scale) const { return base_channels << scale; }
  int patch_at(int scale) const { return patch_size >> scale; }
  GaussianKernel downsample_kernel() const { return GaussianKernel(downsample_sigma, downsample_radius); }

  bool operator==(const NetworkConfig&) const = default;
};

// conv3d -> bn -> elu -> conv3d -> bn, plus the identity, then elu.
template <typename Real>
struct ResidualBlock {
  ConvKernel<Real> conv1;
  BatchNormState<Real> bn1;
  ConvKernel<Real> conv2;
  BatchNormState<Real> bn2;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int channels);

  Var forward(Graph<Real>& g, Var x, BnMode mode);
};

// Multiscale encoder/decoder with one softmax head per scale.
//
// Encoder scale 0: 3x3x3 stem (conv, bn, elu) then residual blocks.
// Encoder scale s > 0: downsample the previous scale, concatenate the input
// pyramid level s, fuse with a 1x1 convolution, then residual blocks.
// Decoder scale s < S-1: upsample the coarser decoder output, concatenate the
// encoder features of scale s, fuse with a 1x1 convolution and one residual
// block. The coarsest decoder output is the last encoder output.
// Head s: 1x1 convolution to K channels and a channel softmax.
//
// Convolutions feeding a batch norm carry no bias (it would be cancelled).
template <typename Real>
class Network {
 public:
  Network() = default;
  // Zero weights, identity batch norms. See init_network for a trainable start.
  explicit Network(const NetworkConfig& cfg);

  const NetworkConfig& config() const { return cfg_; }

  // `pyramid[s]` is (N, num_modalities, P/2^s, P/2^s, P/2^s). Returns the per-scale
  // class probabilities (N, K, P/2^s, ...), finest first.
  std::vector<Var> forward(Graph<Real>& g, std::span<const Var> pyramid, BnMode mode);

  // Stable order; names are unique.
  std::vector<Parameter<Real>*> parameters();
  std::vector<const Parameter<Real>*> parameters() const;
  std::vector<BatchNormState<Real>*> batchnorms();
  std::vector<const BatchNormState<Real>*> batchnorms() const;
  std::vector<ConvKernel<Real>*> kernels();

  std::size_t parameter_count() const;
  void zero_grad();

  LabelRemap label_remap;
  std::vector<std::string> modality_names;

 private:
  template <typename Self, typename ParamFn, typename BnFn>
  static void visit(Self& self, ParamFn&& on_param, BnFn&& on_bn);

  NetworkConfig cfg_;
  ConvKernel<Real> stem_;
  BatchNormState<Real> stem_bn_;
  std::vector<std::vector<ResidualBlock<Real>>> encoder_;  // [scale][block]
  std::vector<ConvKernel<Real>> down_fuse_;                // entry s-1 feeds scale s
  std::vector<ConvKernel<Real>> up_fuse_;                  // entry s for s < S-1
  std::vector<ResidualBlock<Real>> decoder_;               // entry s for s < S-1
  std::vector<ConvKernel<Real>> heads_;                    // entry s
};

// He-initialized network, deterministic in `seed`.
template <typename Real>
Network<Real> init_network(const NetworkConfig& cfg, std::uint64_t seed);

std::vector<std::string> default_modality_names(int num_modalities);

}  // namespace msseg
