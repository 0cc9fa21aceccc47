#pragma once

#include <span>
#include <vector>

#include "msseg/autodiff.hpp"

namespace msseg {

struct LossOptions {
  // Keep the 1/n factor inside the Dice term (perfect prediction then
  // scores 1 - 1/n per class instead of 0).
  bool paper_exact_dice = false;
  double dice_smoothing = 1e-5;
  double log_clamp = 1e-7;
};

// sum_k -(1/n) sum_i y_i^k log(max(p_i^k, clamp)), n = voxels over the whole batch.
template <typename Real>
Var cross_entropy(Graph<Real>& g, Var p, const Tensor<Real>& y, const LossOptions& opt = {});

// sum over k >= 1 of 1 - (2 sum p y + e) / (sum p^2 + sum y^2 + e), statistics pooled over the batch.
template <typename Real>
Var dice_loss(Graph<Real>& g, Var p, const Tensor<Real>& y, const LossOptions& opt = {});

struct LossBreakdown {
  std::vector<double> ce;
  std::vector<double> dce;
  std::vector<double> weights;
  double total = 0.0;
};

struct MultiscaleLoss {
  Var total;
  LossBreakdown breakdown;
};

// total = sum_s weights[s] * (ce_s + dce_s)
template <typename Real>
MultiscaleLoss multiscale_loss(Graph<Real>& g, std::span<const Var> outputs, std::span<const Tensor<Real>> targets,
                               std::span<const double> weights, const LossOptions& opt = {});

}  // namespace msseg
