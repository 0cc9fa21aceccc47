#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msseg/autodiff.hpp"

namespace msseg {

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int seeds = 0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  int seeds = 5;
  // Name of an op whose analytic gradient is deliberately perturbed; exercises failure detection.
  std::string corrupt_op;
};

// Builds a differentiable expression from leaf vars; may use parameters captured by reference.
template <typename Real>
using GradCheckBuild = std::function<Var(Graph<Real>& g, std::span<const Var> inputs)>;

// Compares backward() against central differences of the scalar
//   L = sum_i w_i * out_i  (w fixed random, or L = out for scalar outputs)
// over every entry of `inputs` and `params`. Returns
//   max_i |analytic_i - numeric_i| / max(max |analytic|, max |numeric|).
template <typename Real>
double gradient_error(const GradCheckBuild<Real>& build, std::vector<Tensor<Real>> inputs,
                      std::span<Parameter<Real>* const> params, Rng& rng, double corrupt_factor = 1.0);

template <typename Real>
double gradcheck_tolerance();

template <typename Real>
double gradcheck_step();

std::vector<std::string> gradcheck_ops();

// Runs every op check for `opt.seeds` seeds. Cheap: tensors are (1, 2, 4, 4, 4).
template <typename Real>
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt = {});

}  // namespace msseg
