#include "msseg/loss.hpp"

#include <algorithm>
#include <cmath>

#include "msseg/error.hpp"

namespace msseg {

namespace {

template <typename Real>
void check_same(const Tensor<Real>& p, const Tensor<Real>& y, const char* what) {
  if (!(p.shape == y.shape)) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " " + p.shape.str() + " vs " + y.shape.str());
}

constexpr Shape5 kScalar{1, 1, 1, 1, 1};

}  // namespace

template <typename Real>
Var cross_entropy(Graph<Real>& g, Var pv, const Tensor<Real>& y, const LossOptions& opt) {
  const Tensor<Real>& p = g.value(pv);
  check_same(p, y, "cross_entropy");
  const double n = static_cast<double>(p.shape.n) * static_cast<double>(p.shape.spatial().size());
  const double clamp = opt.log_clamp;
  double total = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    if (y.data[i] != Real(0)) total -= y.data[i] * std::log(std::max(static_cast<double>(p.data[i]), clamp));
  }
  total /= n;
  return g.record(Tensor<Real>(kScalar, static_cast<Real>(total)), {pv},
                  [pv, y, n, clamp](const Graph<Real>& gr, const Tensor<Real>&, const Tensor<Real>& gout,
                                    typename Graph<Real>::GradRefs gin) {
                    const Tensor<Real>& p = gr.value(pv);
                    const double up = gout.data[0];
                    for (std::size_t i = 0; i < p.data.size(); ++i) {
                      if (p.data[i] > clamp) gin[0]->data[i] -= static_cast<Real>(up * y.data[i] / (n * p.data[i]));
                    }
                  });
}

template <typename Real>
Var dice_loss(Graph<Real>& g, Var pv, const Tensor<Real>& y, const LossOptions& opt) {
  const Tensor<Real>& p = g.value(pv);
  check_same(p, y, "dice_loss");
  const int classes = p.shape.c;
  if (classes < 2) throw Error(ErrorCode::ChannelMismatch, "dice loss needs at least two classes");
  const std::size_t vox = p.shape.spatial().size();
  const double n = static_cast<double>(p.shape.n) * static_cast<double>(vox);
  const double eps = opt.dice_smoothing;
  const double factor = opt.paper_exact_dice ? 1.0 / n : 1.0;

  std::vector<double> numer(classes, 0.0);
  std::vector<double> denom(classes, 0.0);
  for (int k = 1; k < classes; ++k) {
    double inter = 0.0;
    double pp = 0.0;
    double yy = 0.0;
    for (int b = 0; b < p.shape.n; ++b) {
      const Real* pk = p.data.data() + p.channel_offset(b, k);
      const Real* yk = y.data.data() + y.channel_offset(b, k);
      for (std::size_t i = 0; i < vox; ++i) {
        inter += static_cast<double>(pk[i]) * yk[i];
        pp += static_cast<double>(pk[i]) * pk[i];
        yy += static_cast<double>(yk[i]) * yk[i];
      }
    }
    numer[k] = 2.0 * inter + eps;
    denom[k] = pp + yy + eps;
  }
  double total = 0.0;
  for (int k = 1; k < classes; ++k) total += 1.0 - factor * numer[k] / denom[k];

  return g.record(Tensor<Real>(kScalar, static_cast<Real>(total)), {pv},
                  [pv, y, numer, denom, factor, vox](const Graph<Real>& gr, const Tensor<Real>&,
                                                     const Tensor<Real>& gout, typename Graph<Real>::GradRefs gin) {
                    const Tensor<Real>& p = gr.value(pv);
                    const double up = gout.data[0];
                    for (int k = 1; k < p.shape.c; ++k) {
                      const double dd = denom[k] * denom[k];
                      for (int b = 0; b < p.shape.n; ++b) {
                        const Real* pk = p.data.data() + p.channel_offset(b, k);
                        const Real* yk = y.data.data() + y.channel_offset(b, k);
                        Real* dk = gin[0]->data.data() + gin[0]->channel_offset(b, k);
                        for (std::size_t i = 0; i < vox; ++i) {
                          const double d = -factor * (2.0 * yk[i] * denom[k] - numer[k] * 2.0 * pk[i]) / dd;
                          dk[i] += static_cast<Real>(up * d);
                        }
                      }
                    }
                  });
}

template <typename Real>
MultiscaleLoss multiscale_loss(Graph<Real>& g, std::span<const Var> outputs, std::span<const Tensor<Real>> targets,
                               std::span<const double> weights, const LossOptions& opt) {
  if (outputs.size() != targets.size() || outputs.size() != weights.size() || outputs.empty()) {
    throw Error(ErrorCode::LengthMismatch, "outputs, targets and weights must have equal nonzero length");
  }
  MultiscaleLoss out;
  out.breakdown.weights.assign(weights.begin(), weights.end());
  Var total{};
  for (std::size_t s = 0; s < outputs.size(); ++s) {
    const Var ce = cross_entropy(g, outputs[s], targets[s], opt);
    const Var dce = dice_loss(g, outputs[s], targets[s], opt);
    out.breakdown.ce.push_back(g.value(ce).data[0]);
    out.breakdown.dce.push_back(g.value(dce).data[0]);
    const Var term = scale(g, add(g, ce, dce), static_cast<Real>(weights[s]));
    total = s == 0 ? term : add(g, total, term);
  }
  out.total = total;
  out.breakdown.total = g.value(total).data[0];
  return out;
}

#define MSSEG_INSTANTIATE_LOSS(Real)                                                                       \
  template Var cross_entropy<Real>(Graph<Real>&, Var, const Tensor<Real>&, const LossOptions&);            \
  template Var dice_loss<Real>(Graph<Real>&, Var, const Tensor<Real>&, const LossOptions&);                \
  template MultiscaleLoss multiscale_loss<Real>(Graph<Real>&, std::span<const Var>,                        \
                                                std::span<const Tensor<Real>>, std::span<const double>, \
                                                const LossOptions&);

MSSEG_INSTANTIATE_LOSS(float)
MSSEG_INSTANTIATE_LOSS(double)

}  // namespace msseg
