#include "msseg/network.hpp"

#include "msseg/error.hpp"

namespace msseg {

void NetworkConfig::validate() const {
  if (scales < 1 || base_channels < 1 || blocks_per_scale < 1 || num_modalities < 1 || patch_size < 1) {
    throw Error(ErrorCode::InvalidConfig, "network counts must be >= 1");
  }
  if (num_classes < 2 || num_classes > 255) throw Error(ErrorCode::InvalidConfig, "num_classes must lie in [2, 255]");
  if (patch_size % (1 << (scales - 1)) != 0) {
    throw Error(ErrorCode::InvalidConfig, "patch_size " + std::to_string(patch_size) + " not divisible by 2^(scales-1)");
  }
  if (!(downsample_sigma > 0.0) || downsample_radius < 1) {
    throw Error(ErrorCode::InvalidConfig, "downsample kernel needs sigma > 0 and radius >= 1");
  }
}

std::vector<std::string> default_modality_names(int num_modalities) {
  if (num_modalities == 4) return {"t1", "t1ce", "t2", "flair"};
  std::vector<std::string> names;
  for (int m = 0; m < num_modalities; ++m) names.push_back("m" + std::to_string(m));
  return names;
}

template <typename Real>
ResidualBlock<Real>::ResidualBlock(const std::string& name, int channels)
    : conv1(name + ".conv1", channels, channels, 3, false),
      bn1(name + ".bn1", channels),
      conv2(name + ".conv2", channels, channels, 3, false),
      bn2(name + ".bn2", channels) {}

template <typename Real>
Var ResidualBlock<Real>::forward(Graph<Real>& g, Var x, BnMode mode) {
  Var h = elu(g, batchnorm(g, conv3d(g, x, conv1), bn1, mode));
  h = batchnorm(g, conv3d(g, h, conv2), bn2, mode);
  return elu(g, add(g, h, x));
}

template <typename Real>
Network<Real>::Network(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  label_remap = cfg.num_classes == 4 ? LabelRemap() : LabelRemap::identity(cfg.num_classes);
  modality_names = default_modality_names(cfg.num_modalities);

  const int s_count = cfg.scales;
  stem_ = ConvKernel<Real>("enc0.stem", cfg.num_modalities, cfg.width(0), 3, false);
  stem_bn_ = BatchNormState<Real>("enc0.stem_bn", cfg.width(0));
  encoder_.resize(s_count);
  for (int s = 0; s < s_count; ++s) {
    const std::string prefix = "enc" + std::to_string(s);
    if (s > 0) {
      down_fuse_.emplace_back(prefix + ".fuse", cfg.width(s - 1) + cfg.num_modalities, cfg.width(s), 1, true);
    }
    for (int b = 0; b < cfg.blocks_per_scale; ++b) {
      encoder_[s].emplace_back(prefix + ".block" + std::to_string(b), cfg.width(s));
    }
  }
  for (int s = 0; s + 1 < s_count; ++s) {
    const std::string prefix = "dec" + std::to_string(s);
    up_fuse_.emplace_back(prefix + ".fuse", cfg.width(s + 1) + cfg.width(s), cfg.width(s), 1, true);
    decoder_.emplace_back(prefix + ".block", cfg.width(s));
  }
  for (int s = 0; s < s_count; ++s) {
    heads_.emplace_back("head" + std::to_string(s), cfg.width(s), cfg.num_classes, 1, true);
  }
}

template <typename Real>
std::vector<Var> Network<Real>::forward(Graph<Real>& g, std::span<const Var> pyramid, BnMode mode) {
  const int s_count = cfg_.scales;
  if (static_cast<int>(pyramid.size()) != s_count) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(s_count) + " pyramid levels, got " +
                                              std::to_string(pyramid.size()));
  }
  const int batch = g.value(pyramid[0]).shape.n;
  for (int s = 0; s < s_count; ++s) {
    const Shape5 got = g.value(pyramid[s]).shape;
    const int p = cfg_.patch_at(s);
    const Shape5 want{batch, cfg_.num_modalities, p, p, p};
    if (!(got == want)) {
      throw Error(ErrorCode::ShapeMismatch, "pyramid level " + std::to_string(s) + " is " + got.str() + ", expected " +
                                                want.str());
    }
  }
  const GaussianKernel kernel = cfg_.downsample_kernel();

  std::vector<Var> enc(s_count);
  for (int s = 0; s < s_count; ++s) {
    Var h;
    if (s == 0) {
      h = elu(g, batchnorm(g, conv3d(g, pyramid[0], stem_), stem_bn_, mode));
    } else {
      const std::array<Var, 2> parts{downsample_layer(g, enc[s - 1], kernel), pyramid[s]};
      h = conv1x1(g, concat_channels<Real>(g, parts), down_fuse_[s - 1]);
    }
    for (auto& block : encoder_[s]) h = block.forward(g, h, mode);
    enc[s] = h;
  }

  std::vector<Var> dec(s_count);
  dec[s_count - 1] = enc[s_count - 1];
  for (int s = s_count - 2; s >= 0; --s) {
    const std::array<Var, 2> parts{upsample_layer(g, dec[s + 1]), enc[s]};
    Var h = conv1x1(g, concat_channels<Real>(g, parts), up_fuse_[s]);
    dec[s] = decoder_[s].forward(g, h, mode);
  }

  std::vector<Var> out(s_count);
  for (int s = 0; s < s_count; ++s) out[s] = softmax_channels(g, conv1x1(g, dec[s], heads_[s]));
  return out;
}

template <typename Real>
template <typename Self, typename ParamFn, typename BnFn>
void Network<Real>::visit(Self& self, ParamFn&& on_param, BnFn&& on_bn) {
  auto conv = [&](auto& k) {
    on_param(k.weight);
    if (k.bias) on_param(*k.bias);
  };
  auto bn = [&](auto& b) {
    on_param(b.gamma);
    on_param(b.shift);
    on_bn(b);
  };
  auto block = [&](auto& r) {
    conv(r.conv1);
    bn(r.bn1);
    conv(r.conv2);
    bn(r.bn2);
  };
  conv(self.stem_);
  bn(self.stem_bn_);
  for (std::size_t s = 0; s < self.encoder_.size(); ++s) {
    if (s > 0) conv(self.down_fuse_[s - 1]);
    for (auto& r : self.encoder_[s]) block(r);
  }
  for (std::size_t s = 0; s < self.up_fuse_.size(); ++s) {
    conv(self.up_fuse_[s]);
    block(self.decoder_[s]);
  }
  for (auto& h : self.heads_) conv(h);
}

template <typename Real>
std::vector<Parameter<Real>*> Network<Real>::parameters() {
  std::vector<Parameter<Real>*> out;
  visit(*this, [&](Parameter<Real>& p) { out.push_back(&p); }, [](BatchNormState<Real>&) {});
  return out;
}

template <typename Real>
std::vector<const Parameter<Real>*> Network<Real>::parameters() const {
  std::vector<const Parameter<Real>*> out;
  visit(*this, [&](const Parameter<Real>& p) { out.push_back(&p); }, [](const BatchNormState<Real>&) {});
  return out;
}

template <typename Real>
std::vector<BatchNormState<Real>*> Network<Real>::batchnorms() {
  std::vector<BatchNormState<Real>*> out;
  visit(*this, [](Parameter<Real>&) {}, [&](BatchNormState<Real>& b) { out.push_back(&b); });
  return out;
}

template <typename Real>
std::vector<const BatchNormState<Real>*> Network<Real>::batchnorms() const {
  std::vector<const BatchNormState<Real>*> out;
  visit(*this, [](const Parameter<Real>&) {}, [&](const BatchNormState<Real>& b) { out.push_back(&b); });
  return out;
}

template <typename Real>
std::vector<ConvKernel<Real>*> Network<Real>::kernels() {
  std::vector<ConvKernel<Real>*> out{&stem_};
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    if (s > 0) out.push_back(&down_fuse_[s - 1]);
    for (auto& r : encoder_[s]) {
      out.push_back(&r.conv1);
      out.push_back(&r.conv2);
    }
  }
  for (std::size_t s = 0; s < up_fuse_.size(); ++s) {
    out.push_back(&up_fuse_[s]);
    out.push_back(&decoder_[s].conv1);
    out.push_back(&decoder_[s].conv2);
  }
  for (auto& h : heads_) out.push_back(&h);
  return out;
}

template <typename Real>
std::size_t Network<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.numel();
  return n;
}

template <typename Real>
void Network<Real>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Real>
Network<Real> init_network(const NetworkConfig& cfg, std::uint64_t seed) {
  Network<Real> net(cfg);
  Rng rng = Rng::substream(seed, "init");
  for (auto* k : net.kernels()) k->init_he(rng);
  return net;
}

template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template class Network<float>;
template class Network<double>;
template Network<float> init_network<float>(const NetworkConfig&, std::uint64_t);
template Network<double> init_network<double>(const NetworkConfig&, std::uint64_t);

}  // namespace msseg
