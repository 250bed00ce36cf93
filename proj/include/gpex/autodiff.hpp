#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gpex {

/// Shaped array of doubles. Rank 1 for vectors, {C, H, W} for images,
/// {out, in} for dense weights and {out, in, kh, kw} for conv kernels.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double operator[](std::size_t i) const { return data[i]; }
  double& operator[](std::size_t i) { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::size_t shape_size(std::span<const std::size_t> shape);
std::string shape_string(std::span<const std::size_t> shape);

/// Trainable tensor with its accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

using NodeId = std::size_t;

class Tape;
using BackwardFn = std::function<void(Tape&, NodeId)>;

/// Append-only record of a straight-line computation. Parameters referenced by
/// the tape must outlive it.
class Tape {
 public:
  NodeId constant(Tensor value);
  NodeId param(Param& p);
  /// Records a derived node. `backward` reads grad(self) and adds into the
  /// gradients of `parents`.
  NodeId push(Tensor value, std::vector<NodeId> parents, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  Tensor& grad(NodeId id) { return nodes_[id].grad; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_[id].parents; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Adjoints of parameter leaves are added
  /// into Param::grad.
  void backward(NodeId loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> parents;
    BackwardFn backward;
    Param* param = nullptr;
  };
  std::vector<Node> nodes_;
};

struct Activation {
  enum class Kind { identity, relu, leaky_relu, tanh, sigmoid };
  Kind kind = Kind::identity;
  double alpha = 0.01;  // leaky slope

  static Activation identity() { return {}; }
  static Activation relu() { return {Kind::relu, 0.0}; }
  static Activation leaky(double alpha) { return {Kind::leaky_relu, alpha}; }
  static Activation tanh() { return {Kind::tanh, 0.0}; }
  static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }

  friend bool operator==(const Activation&, const Activation&) = default;
};

std::string to_string(Activation::Kind kind);
Activation::Kind activation_kind_from_string(const std::string& name);

// Plain forward kernels. The tape ops below call these, so inference and
// training forwards agree bit for bit.
namespace kernels {

/// weight {out, in} times flattened x plus bias.
Tensor dense(const Tensor& weight, const Tensor& bias, const Tensor& x);
/// x {C, H, W}, kernels {O, C, kh, kw}; zero padding `pad` on each side.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t pad);
std::vector<std::size_t> conv2d_output_shape(std::span<const std::size_t> in_shape,
                                             std::span<const std::size_t> kernel_shape,
                                             std::size_t stride, std::size_t pad);
Tensor activate(const Tensor& x, const Activation& act);
/// {C, H, W} -> {C}, mean over spatial cells.
Tensor mean_pool(const Tensor& x);

}  // namespace kernels

namespace ops {

NodeId dense(Tape& t, NodeId x, NodeId weight, NodeId bias);
NodeId conv2d(Tape& t, NodeId x, NodeId kernels, NodeId bias, std::size_t stride,
              std::size_t pad);
NodeId activate(Tape& t, NodeId x, const Activation& act);
NodeId mean_pool(Tape& t, NodeId x);
/// x / ||x||₂; throws DegenerateInputError when ||x|| < 1e-12.
NodeId l2_normalize(Tape& t, NodeId x);

NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId div(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId a, double c);
NodeId add_scalar(Tape& t, NodeId a, double c);
NodeId square(Tape& t, NodeId a);
NodeId log(Tape& t, NodeId a);
/// max(a, floor) elementwise; zero gradient where the floor is active.
NodeId floor_at(Tape& t, NodeId a, double floor);
NodeId sum(Tape& t, NodeId a);
NodeId sum_nodes(Tape& t, std::span<const NodeId> scalars);
NodeId dot(Tape& t, NodeId a, NodeId b);
NodeId element(Tape& t, NodeId a, std::size_t i);
/// -log softmax(logits)[label]
NodeId softmax_cross_entropy(Tape& t, NodeId logits, std::size_t label);

}  // namespace ops

}  // namespace gpex
