#include "msseg/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "msseg/error.hpp"

namespace msseg {

namespace {

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatrixView = Eigen::Map<RowMatrix<Real>>;
template <typename Real>
using ConstMatrixView = Eigen::Map<const RowMatrix<Real>>;

template <typename Real>
void accumulate(Tensor<Real>& dst, const Tensor<Real>& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < src.data.size(); ++i) dst.data[i] += src.data[i];
}

constexpr Shape5 kScalar{1, 1, 1, 1, 1};

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

template <typename Real>
ConvKernel<Real>::ConvKernel(const std::string& name, int in_channels, int out_channels, int size, bool with_bias) {
  if (size != 1 && size != 3) throw Error(ErrorCode::InvalidConfig, "kernel size must be 1 or 3");
  weight.name = name + ".weight";
  weight.value = Tensor<Real>({out_channels, in_channels, size, size, size});
  if (with_bias) {
    bias = Parameter<Real>{name + ".bias", Tensor<Real>({1, out_channels, 1, 1, 1}), {}};
  }
}

template <typename Real>
void ConvKernel<Real>::init_he(Rng& rng) {
  const int k = size();
  const double fan_in = static_cast<double>(in_channels()) * k * k * k;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (Real& w : weight.value.data) w = static_cast<Real>(rng.normal(0.0, stddev));
  if (bias) std::fill(bias->value.data.begin(), bias->value.data.end(), Real(0));
}

template <typename Real>
BatchNormState<Real>::BatchNormState(const std::string& name, int channels)
    : gamma{name + ".gamma", Tensor<Real>({1, channels, 1, 1, 1}, Real(1)), {}},
      shift{name + ".shift", Tensor<Real>({1, channels, 1, 1, 1}, Real(0)), {}},
      running_mean(channels, Real(0)),
      running_std(channels, Real(1)) {}

template <typename Real>
void BatchNormState<Real>::reset_running() {
  std::fill(running_mean.begin(), running_mean.end(), Real(0));
  std::fill(running_std.begin(), running_std.end(), Real(1));
  sample_count = 0;
}

// ---------------------------------------------------------------------------
// Graph

template <typename Real>
Var Graph<Real>::input(Tensor<Real> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Real>
Var Graph<Real>::param(Parameter<Real>& p) {
  Node n;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Real>
Var Graph<Real>::record(Tensor<Real> value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (Var v : inputs) n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Real>
const Tensor<Real>& Graph<Real>::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.param ? n.param->value : n.value;
}

template <typename Real>
const Tensor<Real>& Graph<Real>::grad(Var v) const {
  return nodes_.at(v.id).leaf_grad;
}

template <typename Real>
void Graph<Real>::backward(Var loss) {
  if (value(loss).numel() != 1) {
    throw Error(ErrorCode::NotScalarLoss, "backward needs a scalar, got " + value(loss).shape.str());
  }
  if (!nodes_.at(loss.id).requires_grad) return;
  std::vector<Tensor<Real>> grads(loss.id + 1);
  grads[loss.id] = Tensor<Real>(value(loss).shape, Real(1));
  std::vector<Tensor<Real>*> refs;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (grads[i].empty() || !n.requires_grad) continue;
    if (n.backward) {
      refs.assign(n.inputs.size(), nullptr);
      for (std::size_t j = 0; j < n.inputs.size(); ++j) {
        const Var in = n.inputs[j];
        if (!nodes_[in.id].requires_grad) continue;
        if (grads[in.id].empty()) grads[in.id] = Tensor<Real>(value(in).shape);
        refs[j] = &grads[in.id];
      }
      n.backward(*this, value(Var{i}), grads[i], refs);
    } else if (n.param) {
      accumulate(n.param->grad, grads[i]);
    } else {
      accumulate(n.leaf_grad, grads[i]);
    }
    grads[i] = Tensor<Real>();
  }
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// For each axis and tap t in {0, 1, 2}: source index reflect(o + t - 1).
struct ReflectTable {
  std::array<std::array<std::vector<int>, 3>, 3> idx;

  explicit ReflectTable(Shape3 s) {
    for (int axis = 0; axis < 3; ++axis) {
      for (int t = 0; t < 3; ++t) {
        auto& v = idx[axis][t];
        v.resize(s[axis]);
        for (int o = 0; o < s[axis]; ++o) v[o] = reflect_index(o + t - 1, s[axis]);
      }
    }
  }
};

// Column matrix (cin * 27) x V of reflect-padded 3x3x3 neighbourhoods.
template <typename Real>
void im2col(const Real* x, int cin, Shape3 s, const ReflectTable& tab, Real* col) {
  const std::size_t v = s.size();
  for (int ci = 0; ci < cin; ++ci) {
    const Real* src = x + ci * v;
    for (int tz = 0; tz < 3; ++tz)
      for (int ty = 0; ty < 3; ++ty)
        for (int tx = 0; tx < 3; ++tx) {
          Real* row = col + static_cast<std::size_t>(((ci * 3 + tz) * 3 + ty) * 3 + tx) * v;
          const auto& iz = tab.idx[0][tz];
          const auto& iy = tab.idx[1][ty];
          const auto& ix = tab.idx[2][tx];
          for (int z = 0; z < s.d; ++z)
            for (int y = 0; y < s.h; ++y) {
              const Real* line = src + (static_cast<std::size_t>(iz[z]) * s.h + iy[y]) * s.w;
              Real* out = row + (static_cast<std::size_t>(z) * s.h + y) * s.w;
              for (int xx = 0; xx < s.w; ++xx) out[xx] = line[ix[xx]];
            }
        }
  }
}

// Adjoint of im2col: scatter-add the columns back onto the input grid.
template <typename Real>
void col2im(const Real* col, int cin, Shape3 s, const ReflectTable& tab, Real* dx) {
  const std::size_t v = s.size();
  for (int ci = 0; ci < cin; ++ci) {
    Real* dst = dx + ci * v;
    for (int tz = 0; tz < 3; ++tz)
      for (int ty = 0; ty < 3; ++ty)
        for (int tx = 0; tx < 3; ++tx) {
          const Real* row = col + static_cast<std::size_t>(((ci * 3 + tz) * 3 + ty) * 3 + tx) * v;
          const auto& iz = tab.idx[0][tz];
          const auto& iy = tab.idx[1][ty];
          const auto& ix = tab.idx[2][tx];
          for (int z = 0; z < s.d; ++z)
            for (int y = 0; y < s.h; ++y) {
              Real* line = dst + (static_cast<std::size_t>(iz[z]) * s.h + iy[y]) * s.w;
              const Real* in = row + (static_cast<std::size_t>(z) * s.h + y) * s.w;
              for (int xx = 0; xx < s.w; ++xx) line[ix[xx]] += in[xx];
            }
        }
  }
}

template <typename Real>
void check_conv_channels(const Tensor<Real>& x, const ConvKernel<Real>& k) {
  if (x.shape.c != k.in_channels()) {
    throw Error(ErrorCode::ChannelMismatch, k.weight.name + " expects " + std::to_string(k.in_channels()) +
                                                " channels, input " + x.shape.str());
  }
}

// Shared by the 3x3x3 and 1x1x1 paths. `to_cols` yields the (cin * k^3) x V
// operand for one batch item; `from_cols` scatter-adds a column gradient back.
template <typename Real>
struct ColumnOps {
  std::function<const Real*(const Real* x, std::vector<Real>& scratch)> to_cols;
  std::function<void(const Real* dcol, Real* dx)> from_cols;
};

template <typename Real>
Var conv_generic(Graph<Real>& g, Var xv, ConvKernel<Real>& k, ColumnOps<Real> ops) {
  const Tensor<Real>& x = g.value(xv);
  check_conv_channels(x, k);
  const int cout = k.out_channels();
  const int ksz = k.size();
  const int rows = k.in_channels() * ksz * ksz * ksz;
  const Shape3 sp = x.shape.spatial();
  const auto v = static_cast<Eigen::Index>(sp.size());

  Tensor<Real> out({x.shape.n, cout, sp.d, sp.h, sp.w});
  ConstMatrixView<Real> w(k.weight.value.data.data(), cout, rows);
  std::vector<Real> scratch;
  for (int b = 0; b < x.shape.n; ++b) {
    const Real* col = ops.to_cols(x.data.data() + x.channel_offset(b, 0), scratch);
    MatrixView<Real> ob(out.data.data() + out.channel_offset(b, 0), cout, v);
    ob.noalias() = w * ConstMatrixView<Real>(col, rows, v);
    if (k.bias) {
      for (int co = 0; co < cout; ++co) ob.row(co).array() += k.bias->value.data[co];
    }
  }

  const Var wv = g.param(k.weight);
  std::vector<Var> inputs{xv, wv};
  if (k.bias) inputs.push_back(g.param(*k.bias));
  return g.record(
      std::move(out), std::move(inputs),
      [xv, wv, cout, rows, v, ops](const Graph<Real>& gr, const Tensor<Real>&, const Tensor<Real>& gout,
                                   typename Graph<Real>::GradRefs gin) {
        const Tensor<Real>& x = gr.value(xv);
        ConstMatrixView<Real> w(gr.value(wv).data.data(), cout, rows);
        std::vector<Real> scratch;
        std::vector<Real> dcol;
        for (int b = 0; b < x.shape.n; ++b) {
          ConstMatrixView<Real> gb(gout.data.data() + gout.channel_offset(b, 0), cout, v);
          if (gin[1]) {
            const Real* col = ops.to_cols(x.data.data() + x.channel_offset(b, 0), scratch);
            MatrixView<Real> dw(gin[1]->data.data(), cout, rows);
            dw.noalias() += gb * ConstMatrixView<Real>(col, rows, v).transpose();
          }
          if (gin.size() > 2 && gin[2]) {
            for (int co = 0; co < cout; ++co) gin[2]->data[co] += gb.row(co).sum();
          }
          if (gin[0]) {
            dcol.resize(static_cast<std::size_t>(rows) * v);
            MatrixView<Real> dc(dcol.data(), rows, v);
            dc.noalias() = w.transpose() * gb;
            ops.from_cols(dcol.data(), gin[0]->data.data() + gin[0]->channel_offset(b, 0));
          }
        }
      });
}

template <typename Real>
Var unary(Graph<Real>& g, Var xv, Tensor<Real> out, typename Graph<Real>::BackwardFn fn) {
  return g.record(std::move(out), {xv}, std::move(fn));
}

}  // namespace

template <typename Real>
Var conv3d(Graph<Real>& g, Var x, ConvKernel<Real>& k) {
  if (k.size() != 3) throw Error(ErrorCode::ShapeMismatch, "conv3d needs a 3x3x3 kernel");
  const Tensor<Real>& xt = g.value(x);
  check_conv_channels(xt, k);
  const Shape3 sp = xt.shape.spatial();
  const int cin = k.in_channels();
  auto table = std::make_shared<ReflectTable>(sp);
  ColumnOps<Real> ops;
  ops.to_cols = [table, cin, sp](const Real* src, std::vector<Real>& scratch) -> const Real* {
    scratch.resize(static_cast<std::size_t>(cin) * 27 * sp.size());
    im2col(src, cin, sp, *table, scratch.data());
    return scratch.data();
  };
  ops.from_cols = [table, cin, sp](const Real* dcol, Real* dx) { col2im(dcol, cin, sp, *table, dx); };
  return conv_generic(g, x, k, std::move(ops));
}

template <typename Real>
Var conv1x1(Graph<Real>& g, Var x, ConvKernel<Real>& k) {
  if (k.size() != 1) throw Error(ErrorCode::ShapeMismatch, "conv1x1 needs a 1x1x1 kernel");
  const std::size_t n = static_cast<std::size_t>(k.in_channels()) * g.value(x).shape.spatial().size();
  ColumnOps<Real> ops;
  ops.to_cols = [](const Real* src, std::vector<Real>&) -> const Real* { return src; };
  ops.from_cols = [n](const Real* dcol, Real* dx) {
    for (std::size_t i = 0; i < n; ++i) dx[i] += dcol[i];
  };
  return conv_generic(g, x, k, std::move(ops));
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename Real>
Var batchnorm(Graph<Real>& g, Var xv, BatchNormState<Real>& s, BnMode mode) {
  const Tensor<Real>& x = g.value(xv);
  const int channels = x.shape.c;
  if (channels != s.channels()) {
    throw Error(ErrorCode::ChannelMismatch, s.gamma.name + " has " + std::to_string(s.channels()) +
                                                " channels, input " + x.shape.str());
  }
  const std::size_t vox = x.shape.spatial().size();
  const double count = static_cast<double>(x.shape.n) * static_cast<double>(vox);

  // per-channel statistics used for normalization
  std::vector<Real> mean(channels);
  std::vector<Real> stddev(channels);
  if (mode == BnMode::Infer) {
    mean = s.running_mean;
    stddev = s.running_std;
  } else {
    for (int c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (int b = 0; b < x.shape.n; ++b) {
        const Real* p = x.data.data() + x.channel_offset(b, c);
        for (std::size_t i = 0; i < vox; ++i) acc += p[i];
      }
      const double m = acc / count;
      double ss = 0.0;
      for (int b = 0; b < x.shape.n; ++b) {
        const Real* p = x.data.data() + x.channel_offset(b, c);
        for (std::size_t i = 0; i < vox; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      mean[c] = static_cast<Real>(m);
      stddev[c] = static_cast<Real>(std::sqrt(ss / count));
    }
    if (mode == BnMode::Calibrate) {
      // cumulative average over calibration batches
      const double seen = static_cast<double>(s.sample_count);
      for (int c = 0; c < channels; ++c) {
        s.running_mean[c] = static_cast<Real>((s.running_mean[c] * seen + mean[c]) / (seen + 1.0));
        s.running_std[c] = static_cast<Real>((s.running_std[c] * seen + stddev[c]) / (seen + 1.0));
      }
      ++s.sample_count;
    }
  }

  const Real eps = s.epsilon;
  Tensor<Real> out(x.shape);
  for (int c = 0; c < channels; ++c) {
    const Real inv = Real(1) / (stddev[c] + eps);
    const Real gam = s.gamma.value.data[c];
    const Real sh = s.shift.value.data[c];
    for (int b = 0; b < x.shape.n; ++b) {
      const Real* p = x.data.data() + x.channel_offset(b, c);
      Real* o = out.data.data() + out.channel_offset(b, c);
      for (std::size_t i = 0; i < vox; ++i) o[i] = (p[i] - mean[c]) * inv * gam + sh;
    }
  }

  const Var gv = g.param(s.gamma);
  const Var sv = g.param(s.shift);
  const bool batch_stats = mode != BnMode::Infer;
  return g.record(
      std::move(out), {xv, gv, sv},
      [xv, gv, mean, stddev, eps, vox, count, batch_stats](const Graph<Real>& gr, const Tensor<Real>&,
                                                           const Tensor<Real>& gout,
                                                           typename Graph<Real>::GradRefs gin) {
        const Tensor<Real>& x = gr.value(xv);
        const Tensor<Real>& gamma = gr.value(gv);
        for (int c = 0; c < x.shape.c; ++c) {
          const double denom = static_cast<double>(stddev[c]) + static_cast<double>(eps);
          double sum_g = 0.0;
          double sum_gx = 0.0;  // sum of g * xhat
          double sum_gc = 0.0;  // sum of g * (x - mean)
          for (int b = 0; b < x.shape.n; ++b) {
            const Real* p = x.data.data() + x.channel_offset(b, c);
            const Real* gp = gout.data.data() + gout.channel_offset(b, c);
            for (std::size_t i = 0; i < vox; ++i) {
              const double centred = static_cast<double>(p[i]) - mean[c];
              sum_g += gp[i];
              sum_gx += gp[i] * centred / denom;
              sum_gc += gp[i] * centred;
            }
          }
          if (gin[1]) gin[1]->data[c] += static_cast<Real>(sum_gx);
          if (gin[2]) gin[2]->data[c] += static_cast<Real>(sum_g);
          if (!gin[0]) continue;
          const double gam = gamma.data[c];
          for (int b = 0; b < x.shape.n; ++b) {
            const Real* p = x.data.data() + x.channel_offset(b, c);
            const Real* gp = gout.data.data() + gout.channel_offset(b, c);
            Real* dx = gin[0]->data.data() + gin[0]->channel_offset(b, c);
            for (std::size_t i = 0; i < vox; ++i) {
              double d = gam * gp[i] / denom;
              if (batch_stats) {
                const double centred = static_cast<double>(p[i]) - mean[c];
                d -= gam * sum_g / (count * denom);
                // d std / d x_i = centred / (count * std); zero when the channel is constant
                if (stddev[c] > 0) d -= gam * centred * sum_gc / (count * stddev[c] * denom * denom);
              }
              dx[i] += static_cast<Real>(d);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename Real>
Var elu(Graph<Real>& g, Var xv) {
  const Tensor<Real>& x = g.value(xv);
  Tensor<Real> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const Real v = x.data[i];
    out.data[i] = v >= Real(0) ? v : std::expm1(v);
  }
  return unary<Real>(g, xv, std::move(out),
                     [xv](const Graph<Real>& gr, const Tensor<Real>& y, const Tensor<Real>& gout,
                          typename Graph<Real>::GradRefs gin) {
                       const Tensor<Real>& x = gr.value(xv);
                       for (std::size_t i = 0; i < y.data.size(); ++i) {
                         const Real d = x.data[i] >= Real(0) ? Real(1) : y.data[i] + Real(1);
                         gin[0]->data[i] += gout.data[i] * d;
                       }
                     });
}

template <typename Real>
Var add(Graph<Real>& g, Var xv, Var yv) {
  const Tensor<Real>& x = g.value(xv);
  const Tensor<Real>& y = g.value(yv);
  if (!(x.shape == y.shape)) throw Error(ErrorCode::ShapeMismatch, "add " + x.shape.str() + " + " + y.shape.str());
  Tensor<Real> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] + y.data[i];
  return g.record(std::move(out), {xv, yv},
                  [](const Graph<Real>&, const Tensor<Real>&, const Tensor<Real>& gout,
                     typename Graph<Real>::GradRefs gin) {
                    for (Tensor<Real>* d : gin) {
                      if (!d) continue;
                      for (std::size_t i = 0; i < gout.data.size(); ++i) d->data[i] += gout.data[i];
                    }
                  });
}

template <typename Real>
Var scale(Graph<Real>& g, Var xv, Real factor) {
  const Tensor<Real>& x = g.value(xv);
  Tensor<Real> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = factor * x.data[i];
  return unary<Real>(g, xv, std::move(out),
                     [factor](const Graph<Real>&, const Tensor<Real>&, const Tensor<Real>& gout,
                              typename Graph<Real>::GradRefs gin) {
                       for (std::size_t i = 0; i < gout.data.size(); ++i) gin[0]->data[i] += factor * gout.data[i];
                     });
}

template <typename Real>
Var concat_channels(Graph<Real>& g, std::span<const Var> xs) {
  if (xs.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of zero tensors");
  const Shape5 first = g.value(xs[0]).shape;
  int channels = 0;
  for (Var v : xs) {
    const Shape5 s = g.value(v).shape;
    if (s.n != first.n || !(s.spatial() == first.spatial())) {
      throw Error(ErrorCode::ShapeMismatch, "concat " + first.str() + " with " + s.str());
    }
    channels += s.c;
  }
  Tensor<Real> out({first.n, channels, first.d, first.h, first.w});
  const std::size_t vox = first.spatial().size();
  std::vector<int> offsets;
  int at = 0;
  for (Var v : xs) {
    const Tensor<Real>& t = g.value(v);
    offsets.push_back(at);
    for (int b = 0; b < first.n; ++b) {
      std::copy_n(t.data.data() + t.channel_offset(b, 0), t.shape.c * vox,
                  out.data.data() + out.channel_offset(b, at));
    }
    at += t.shape.c;
  }
  return g.record(std::move(out), std::vector<Var>(xs.begin(), xs.end()),
                  [offsets, vox](const Graph<Real>&, const Tensor<Real>&, const Tensor<Real>& gout,
                                 typename Graph<Real>::GradRefs gin) {
                    for (std::size_t j = 0; j < gin.size(); ++j) {
                      Tensor<Real>* d = gin[j];
                      if (!d) continue;
                      for (int b = 0; b < gout.shape.n; ++b) {
                        const Real* src = gout.data.data() + gout.channel_offset(b, offsets[j]);
                        Real* dst = d->data.data() + d->channel_offset(b, 0);
                        for (std::size_t i = 0; i < d->shape.c * vox; ++i) dst[i] += src[i];
                      }
                    }
                  });
}

template <typename Real>
Var downsample_layer(Graph<Real>& g, Var xv, const GaussianKernel& k) {
  const Tensor<Real>& x = g.value(xv);
  const Shape3 in = x.shape.spatial();
  if (in.d % 2 || in.h % 2 || in.w % 2) {
    throw Error(ErrorCode::ShapeNotDivisible, "downsample_layer needs even spatial dims, got " + in.str());
  }
  const Shape3 half = half_shape(in);
  Tensor<Real> out({x.shape.n, x.shape.c, half.d, half.h, half.w});
  std::vector<Real> smoothed(in.size());
  for (int b = 0; b < x.shape.n; ++b)
    for (int c = 0; c < x.shape.c; ++c) {
      smooth3d<Real>(std::span<const Real>(x.data.data() + x.channel_offset(b, c), in.size()), smoothed, in, k);
      const auto dec = decimate2<Real>(smoothed, in);
      std::copy(dec.begin(), dec.end(), out.data.data() + out.channel_offset(b, c));
    }
  return unary<Real>(g, xv, std::move(out),
                     [k, in, half](const Graph<Real>&, const Tensor<Real>&, const Tensor<Real>& gout,
                                   typename Graph<Real>::GradRefs gin) {
                       std::vector<Real> stuffed(in.size());
                       std::vector<Real> back(in.size());
                       for (int b = 0; b < gout.shape.n; ++b)
                         for (int c = 0; c < gout.shape.c; ++c) {
                           std::fill(stuffed.begin(), stuffed.end(), Real(0));
                           const Real* gp = gout.data.data() + gout.channel_offset(b, c);
                           for (int z = 0; z < half.d; ++z)
                             for (int y = 0; y < half.h; ++y)
                               for (int x = 0; x < half.w; ++x)
                                 stuffed[in.index(2 * z, 2 * y, 2 * x)] = gp[half.index(z, y, x)];
                           smooth3d_adjoint<Real>(stuffed, back, in, k);
                           Real* dx = gin[0]->data.data() + gin[0]->channel_offset(b, c);
                           for (std::size_t i = 0; i < in.size(); ++i) dx[i] += back[i];
                         }
                     });
}

template <typename Real>
Var upsample_layer(Graph<Real>& g, Var xv) {
  const Tensor<Real>& x = g.value(xv);
  const Shape3 in = x.shape.spatial();
  const Shape3 up{in.d * 2, in.h * 2, in.w * 2};
  Tensor<Real> out({x.shape.n, x.shape.c, up.d, up.h, up.w});
  for (int b = 0; b < x.shape.n; ++b)
    for (int c = 0; c < x.shape.c; ++c)
      for (int z = 0; z < up.d; ++z)
        for (int y = 0; y < up.h; ++y)
          for (int xx = 0; xx < up.w; ++xx) out.at(b, c, z, y, xx) = x.at(b, c, z / 2, y / 2, xx / 2);
  return unary<Real>(g, xv, std::move(out),
                     [up](const Graph<Real>&, const Tensor<Real>&, const Tensor<Real>& gout,
                          typename Graph<Real>::GradRefs gin) {
                       Tensor<Real>& dx = *gin[0];
                       for (int b = 0; b < gout.shape.n; ++b)
                         for (int c = 0; c < gout.shape.c; ++c)
                           for (int z = 0; z < up.d; ++z)
                             for (int y = 0; y < up.h; ++y)
                               for (int xx = 0; xx < up.w; ++xx)
                                 dx.at(b, c, z / 2, y / 2, xx / 2) += gout.at(b, c, z, y, xx);
                     });
}

template <typename Real>
Var softmax_channels(Graph<Real>& g, Var xv) {
  const Tensor<Real>& x = g.value(xv);
  if (x.shape.c < 2) throw Error(ErrorCode::ChannelMismatch, "softmax needs at least two channels");
  const std::size_t vox = x.shape.spatial().size();
  const int channels = x.shape.c;
  Tensor<Real> out(x.shape);
  for (int b = 0; b < x.shape.n; ++b) {
    const Real* p = x.data.data() + x.channel_offset(b, 0);
    Real* o = out.data.data() + out.channel_offset(b, 0);
    for (std::size_t i = 0; i < vox; ++i) {
      Real top = p[i];
      for (int c = 1; c < channels; ++c) top = std::max(top, p[c * vox + i]);
      Real norm = 0;
      for (int c = 0; c < channels; ++c) {
        o[c * vox + i] = std::exp(p[c * vox + i] - top);
        norm += o[c * vox + i];
      }
      for (int c = 0; c < channels; ++c) o[c * vox + i] /= norm;
    }
  }
  return unary<Real>(g, xv, std::move(out),
                     [vox, channels](const Graph<Real>&, const Tensor<Real>& y, const Tensor<Real>& gout,
                                     typename Graph<Real>::GradRefs gin) {
                       for (int b = 0; b < y.shape.n; ++b) {
                         const Real* p = y.data.data() + y.channel_offset(b, 0);
                         const Real* gp = gout.data.data() + gout.channel_offset(b, 0);
                         Real* dx = gin[0]->data.data() + gin[0]->channel_offset(b, 0);
                         for (std::size_t i = 0; i < vox; ++i) {
                           Real inner = 0;
                           for (int c = 0; c < channels; ++c) inner += gp[c * vox + i] * p[c * vox + i];
                           for (int c = 0; c < channels; ++c) dx[c * vox + i] += p[c * vox + i] * (gp[c * vox + i] - inner);
                         }
                       }
                     });
}

template <typename Real>
Var sum(Graph<Real>& g, Var xv) {
  const Tensor<Real>& x = g.value(xv);
  Real total = 0;
  for (Real v : x.data) total += v;
  return unary<Real>(g, xv, Tensor<Real>(kScalar, total),
                     [](const Graph<Real>&, const Tensor<Real>&, const Tensor<Real>& gout,
                        typename Graph<Real>::GradRefs gin) {
                       for (Real& d : gin[0]->data) d += gout.data[0];
                     });
}

template <typename Real>
Var dot(Graph<Real>& g, Var xv, const Tensor<Real>& weights) {
  const Tensor<Real>& x = g.value(xv);
  if (!(x.shape == weights.shape)) throw Error(ErrorCode::ShapeMismatch, "dot " + x.shape.str() + " . " + weights.shape.str());
  Real total = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) total += weights.data[i] * x.data[i];
  return unary<Real>(g, xv, Tensor<Real>(kScalar, total),
                     [weights](const Graph<Real>&, const Tensor<Real>&, const Tensor<Real>& gout,
                               typename Graph<Real>::GradRefs gin) {
                       for (std::size_t i = 0; i < weights.data.size(); ++i) gin[0]->data[i] += gout.data[0] * weights.data[i];
                     });
}

#define MSSEG_INSTANTIATE_AUTODIFF(Real)                                                    \
  template struct ConvKernel<Real>;                                                         \
  template struct BatchNormState<Real>;                                                     \
  template class Graph<Real>;                                                               \
  template Var conv3d<Real>(Graph<Real>&, Var, ConvKernel<Real>&);                          \
  template Var conv1x1<Real>(Graph<Real>&, Var, ConvKernel<Real>&);                         \
  template Var batchnorm<Real>(Graph<Real>&, Var, BatchNormState<Real>&, BnMode);           \
  template Var elu<Real>(Graph<Real>&, Var);                                                \
  template Var add<Real>(Graph<Real>&, Var, Var);                                           \
  template Var scale<Real>(Graph<Real>&, Var, Real);                                        \
  template Var concat_channels<Real>(Graph<Real>&, std::span<const Var>);                   \
  template Var downsample_layer<Real>(Graph<Real>&, Var, const GaussianKernel&);            \
  template Var upsample_layer<Real>(Graph<Real>&, Var);                                     \
  template Var softmax_channels<Real>(Graph<Real>&, Var);                                   \
  template Var sum<Real>(Graph<Real>&, Var);                                                \
  template Var dot<Real>(Graph<Real>&, Var, const Tensor<Real>&);

MSSEG_INSTANTIATE_AUTODIFF(float)
MSSEG_INSTANTIATE_AUTODIFF(double)

}  // namespace msseg
