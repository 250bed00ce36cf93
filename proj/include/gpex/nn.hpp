#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gpex/autodiff.hpp"
#include "gpex/numkit.hpp"

namespace gpex {

struct LayerSpec {
  enum class Kind { dense, conv };
  Kind kind = Kind::dense;
  std::size_t in = 0;   // dense: input features, conv: input channels
  std::size_t out = 0;  // dense: outputs, conv: output channels
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  Activation act;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act);
  static LayerSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                        std::size_t stride, std::size_t pad, Activation act);

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Layer {
  LayerSpec spec;
  Param weight;  // dense {out, in}; conv {out, in, k, k}
  Param bias;    // {out}
};

/// Glorot-uniform weights, zero biases.
Layer make_layer(const LayerSpec& spec, Rng& rng, const std::string& name);
std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                            std::span<const std::size_t> in_shape);
Tensor forward_layer(const Layer& layer, const Tensor& x);
NodeId forward_layer(Tape& t, Layer& layer, NodeId x);

/// Feed-forward network g(.) whose outputs are the L heads.
struct Predictor {
  std::vector<std::size_t> input_shape;
  std::vector<Layer> layers;

  std::size_t heads() const;
  /// Width of the second-last layer; 0 for single-layer predictors.
  std::size_t wide_width() const;
  std::vector<Param*> parameters();
};

Predictor make_predictor(std::vector<std::size_t> input_shape, const std::vector<LayerSpec>& specs,
                         Rng& rng);
Vector forward_predictor(const Predictor& p, const Tensor& x);
NodeId forward_predictor(Tape& t, Predictor& p, NodeId x);

/// L kernel mappings f_ℓ sharing a backbone. Each branch produces a vector `a`
/// (after spatial mean pooling when the branch is convolutional), which is
/// L2-normalized and passed through a leaky ReLU.
struct KernelMapper {
  std::vector<std::size_t> input_shape;
  std::vector<Layer> backbone;
  std::vector<std::vector<Layer>> branches;
  double leaky_slope = 0.01;
  std::size_t kernel_dim = 0;

  std::size_t heads() const { return branches.size(); }
  /// True when branches end in {C,H,W} maps that are mean-pooled.
  bool spatial() const;
  std::vector<Param*> parameters();
};

/// `branch` is instantiated once per head with independent initial weights.
KernelMapper make_mapper(std::vector<std::size_t> input_shape,
                         const std::vector<LayerSpec>& backbone,
                         const std::vector<LayerSpec>& branch, std::size_t heads,
                         double leaky_slope, Rng& rng);

/// Intermediate values of one head's mapping.
struct MapperTrace {
  Tensor z;  // branch output before pooling
  Vector a;  // pooled vector
  Vector b;  // a / ||a||
  Vector f;  // leakyReLU(b)
};

Vector normalize_and_rectify(std::span<const double> a, double leaky_slope);
MapperTrace trace_mapper(const KernelMapper& km, const Tensor& x, std::size_t head);
Vector forward_mapper(const KernelMapper& km, const Tensor& x, std::size_t head);
std::vector<Vector> forward_mapper_all(const KernelMapper& km, const Tensor& x);
std::vector<NodeId> forward_mapper_all(Tape& t, KernelMapper& km, NodeId x);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

AdamState make_adam_state(std::span<Param* const> params);
/// Bias-corrected Adam, no AMSGrad.
void adam_step(std::span<Param* const> params, AdamState& state, const AdamConfig& cfg);
void zero_grads(std::span<Param* const> params);

}  // namespace gpex
