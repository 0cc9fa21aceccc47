#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msseg/filter.hpp"
#include "msseg/rng.hpp"
#include "msseg/tensor.hpp"

namespace msseg {

// A learnable tensor and its accumulated gradient. `grad` is empty until the
// first backward pass reaches it.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;

  void zero_grad() { grad = Tensor<Real>(value.shape); }
};

// Weights (Cout, Cin, k, k, k) with k = 3 or 1, optional per-output-channel bias.
template <typename Real>
struct ConvKernel {
  Parameter<Real> weight;
  std::optional<Parameter<Real>> bias;

  ConvKernel() = default;
  ConvKernel(const std::string& name, int in_channels, int out_channels, int size, bool with_bias);

  int in_channels() const { return weight.value.shape.c; }
  int out_channels() const { return weight.value.shape.n; }
  int size() const { return weight.value.shape.d; }

  // Zero-mean normal weights with variance 2 / fan_in; zero bias.
  void init_he(Rng& rng);
};

enum class BnMode { Train, Calibrate, Infer };

// out = (x - mean) / (std + epsilon) * gamma + shift, per channel.
template <typename Real>
struct BatchNormState {
  Parameter<Real> gamma;
  Parameter<Real> shift;
  std::vector<Real> running_mean;
  std::vector<Real> running_std;
  Real epsilon = Real(1e-5);
  std::int64_t sample_count = 0;

  BatchNormState() = default;
  BatchNormState(const std::string& name, int channels);

  int channels() const { return static_cast<int>(running_mean.size()); }
  // Running statistics back to (0, 1) and count to 0.
  void reset_running();
};

struct Var {
  std::size_t id = 0;
};

// Tape of tensor operations in creation (topological) order.
template <typename Real>
class Graph {
 public:
  using GradRefs = std::span<Tensor<Real>* const>;
  // Must accumulate (+=) into every non-null grad_in entry; entries alias when an
  // input is used twice by the same node.
  using BackwardFn = std::function<void(const Graph& g, const Tensor<Real>& out, const Tensor<Real>& grad_out,
                                        GradRefs grad_in)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var input(Tensor<Real> value, bool requires_grad = false);
  // Leaf bound to a parameter; backward accumulates into p.grad.
  Var param(Parameter<Real>& p);
  Var record(Tensor<Real> value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor<Real>& value(Var v) const;
  // Accumulated gradient of an input leaf (empty if none reached it).
  const Tensor<Real>& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar node. Leaf gradients accumulate across calls.
  void backward(Var loss);

 private:
  struct Node {
    Tensor<Real> value;
    Parameter<Real>* param = nullptr;
    Tensor<Real> leaf_grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

template <typename Real>
Var conv3d(Graph<Real>& g, Var x, ConvKernel<Real>& k);
template <typename Real>
Var conv1x1(Graph<Real>& g, Var x, ConvKernel<Real>& k);
template <typename Real>
Var batchnorm(Graph<Real>& g, Var x, BatchNormState<Real>& s, BnMode mode);
template <typename Real>
Var elu(Graph<Real>& g, Var x);
template <typename Real>
Var add(Graph<Real>& g, Var x, Var y);
template <typename Real>
Var scale(Graph<Real>& g, Var x, Real factor);
template <typename Real>
Var concat_channels(Graph<Real>& g, std::span<const Var> xs);
template <typename Real>
Var downsample_layer(Graph<Real>& g, Var x, const GaussianKernel& k);
template <typename Real>
Var upsample_layer(Graph<Real>& g, Var x);
template <typename Real>
Var softmax_channels(Graph<Real>& g, Var x);
template <typename Real>
Var sum(Graph<Real>& g, Var x);
// sum_i weights_i * x_i against a constant tensor of the same shape.
template <typename Real>
Var dot(Graph<Real>& g, Var x, const Tensor<Real>& weights);

}  // namespace msseg
