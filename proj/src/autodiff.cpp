#include "gpex/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "gpex/errors.hpp"

namespace gpex {

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_size(shape)) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t shape_size(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? "," : "") + std::to_string(shape[i]);
  }
  return s + "]";
}

void Param::zero_grad() {
  grad.shape = value.shape;
  grad.data.assign(value.data.size(), 0.0);
}

NodeId Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, nullptr});
  return nodes_.size() - 1;
}

NodeId Tape::param(Param& p) {
  nodes_.push_back(Node{p.value, {}, {}, nullptr, &p});
  return nodes_.size() - 1;
}

NodeId Tape::push(Tensor value, std::vector<NodeId> parents, BackwardFn backward) {
  for (NodeId p : parents) {
    if (p >= nodes_.size()) {
      throw ContractError("tape: parent node does not exist");
    }
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(backward), nullptr});
  return nodes_.size() - 1;
}

void Tape::backward(NodeId loss) {
  if (loss >= nodes_.size()) {
    throw ContractError("backward: unknown loss node");
  }
  if (nodes_[loss].value.size() != 1) {
    throw ContractError("backward: loss node has " + std::to_string(nodes_[loss].value.size()) +
                        " elements, expected a scalar");
  }
  for (NodeId i = 0; i <= loss; ++i) {
    nodes_[i].grad.shape = nodes_[i].value.shape;
    nodes_[i].grad.data.assign(nodes_[i].value.size(), 0.0);
  }
  nodes_[loss].grad.data[0] = 1.0;
  for (NodeId i = loss + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.param != nullptr) {
      Param& p = *node.param;
      if (p.grad.data.size() != p.value.data.size()) {
        p.zero_grad();
      }
      for (std::size_t k = 0; k < node.grad.size(); ++k) {
        p.grad.data[k] += node.grad.data[k];
      }
    }
    if (node.backward) {
      node.backward(*this, i);
    }
  }
}

std::string to_string(Activation::Kind kind) {
  switch (kind) {
    case Activation::Kind::identity:
      return "identity";
    case Activation::Kind::relu:
      return "relu";
    case Activation::Kind::leaky_relu:
      return "leaky_relu";
    case Activation::Kind::tanh:
      return "tanh";
    case Activation::Kind::sigmoid:
      return "sigmoid";
  }
  return "identity";
}

Activation::Kind activation_kind_from_string(const std::string& name) {
  if (name == "identity") return Activation::Kind::identity;
  if (name == "relu") return Activation::Kind::relu;
  if (name == "leaky_relu") return Activation::Kind::leaky_relu;
  if (name == "tanh") return Activation::Kind::tanh;
  if (name == "sigmoid") return Activation::Kind::sigmoid;
  throw ParameterError("unknown activation '" + name + "'");
}

namespace kernels {

Tensor dense(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  if (weight.rank() != 2) {
    throw ShapeError("dense: weight must be rank 2, got " + shape_string(weight.shape));
  }
  const std::size_t out = weight.shape[0];
  const std::size_t in = weight.shape[1];
  if (x.size() != in || bias.size() != out) {
    throw ShapeError("dense: weight " + shape_string(weight.shape) + " input " +
                     shape_string(x.shape) + " bias " + shape_string(bias.shape));
  }
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = weight.data.data() + o * in;
    double s = bias.data[o];
    for (std::size_t i = 0; i < in; ++i) {
      s += w[i] * x.data[i];
    }
    y.data[o] = s;
  }
  return y;
}

std::vector<std::size_t> conv2d_output_shape(std::span<const std::size_t> in_shape,
                                             std::span<const std::size_t> kernel_shape,
                                             std::size_t stride, std::size_t pad) {
  if (in_shape.size() != 3 || kernel_shape.size() != 4) {
    throw ShapeError("conv2d: input " + shape_string(in_shape) + " kernels " +
                     shape_string(kernel_shape));
  }
  if (in_shape[0] != kernel_shape[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(in_shape[0]) +
                     " channels, kernels expect " + std::to_string(kernel_shape[1]));
  }
  if (stride == 0) {
    throw ParameterError("conv2d: stride must be positive");
  }
  const std::size_t h = in_shape[1] + 2 * pad;
  const std::size_t w = in_shape[2] + 2 * pad;
  if (h < kernel_shape[2] || w < kernel_shape[3]) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  return {kernel_shape[0], (h - kernel_shape[2]) / stride + 1,
          (w - kernel_shape[3]) / stride + 1};
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  const auto out_shape = conv2d_output_shape(x.shape, k.shape, stride, pad);
  const std::size_t oc = out_shape[0], oh = out_shape[1], ow = out_shape[2];
  const std::size_t ic = x.shape[0], ih = x.shape[1], iw = x.shape[2];
  const std::size_t kh = k.shape[2], kw = k.shape[3];
  if (bias.size() != oc) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()));
  }
  Tensor y(out_shape);
  for (std::size_t o = 0; o < oc; ++o) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        double s = bias.data[o];
        for (std::size_t ch = 0; ch < ic; ++ch) {
          for (std::size_t i = 0; i < kh; ++i) {
            const std::ptrdiff_t yy =
                static_cast<std::ptrdiff_t>(r * stride + i) - static_cast<std::ptrdiff_t>(pad);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(ih)) continue;
            for (std::size_t j = 0; j < kw; ++j) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(c * stride + j) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(iw)) continue;
              s += k.data[((o * ic + ch) * kh + i) * kw + j] *
                   x.data[(ch * ih + static_cast<std::size_t>(yy)) * iw +
                          static_cast<std::size_t>(xx)];
            }
          }
        }
        y.data[(o * oh + r) * ow + c] = s;
      }
    }
  }
  return y;
}

Tensor activate(const Tensor& x, const Activation& act) {
  Tensor y = x;
  switch (act.kind) {
    case Activation::Kind::identity:
      break;
    case Activation::Kind::relu:
      for (double& v : y.data) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::Kind::leaky_relu:
      for (double& v : y.data) v = v > 0.0 ? v : act.alpha * v;
      break;
    case Activation::Kind::tanh:
      for (double& v : y.data) v = std::tanh(v);
      break;
    case Activation::Kind::sigmoid:
      for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
      break;
  }
  return y;
}

Tensor mean_pool(const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("mean_pool: expected {C,H,W}, got " + shape_string(x.shape));
  }
  const std::size_t c = x.shape[0];
  const std::size_t cells = x.shape[1] * x.shape[2];
  Tensor y({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t k = 0; k < cells; ++k) {
      s += x.data[ch * cells + k];
    }
    y.data[ch] = s / static_cast<double>(cells);
  }
  return y;
}

}  // namespace kernels

namespace ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape) + " and " +
                     shape_string(b.shape));
  }
}

template <typename F>
NodeId unary(Tape& t, NodeId a, Tensor value, F local_derivative) {
  return t.push(std::move(value), {a}, [a, local_derivative](Tape& tp, NodeId self) {
    const Tensor& x = tp.value(a);
    const Tensor& y = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] * local_derivative(x.data[i], y.data[i]);
    }
  });
}

}  // namespace

NodeId dense(Tape& t, NodeId x, NodeId weight, NodeId bias) {
  Tensor y = kernels::dense(t.value(weight), t.value(bias), t.value(x));
  return t.push(std::move(y), {x, weight, bias}, [x, weight, bias](Tape& tp, NodeId self) {
    const Tensor& w = tp.value(weight);
    const Tensor& xv = tp.value(x);
    const Tensor& g = tp.grad(self);
    const std::size_t out = w.shape[0];
    const std::size_t in = w.shape[1];
    Tensor& gw = tp.grad(weight);
    Tensor& gx = tp.grad(x);
    Tensor& gb = tp.grad(bias);
    for (std::size_t o = 0; o < out; ++o) {
      const double go = g.data[o];
      if (go == 0.0) continue;
      gb.data[o] += go;
      double* gwr = gw.data.data() + o * in;
      const double* wr = w.data.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        gwr[i] += go * xv.data[i];
        gx.data[i] += go * wr[i];
      }
    }
  });
}

NodeId conv2d(Tape& t, NodeId x, NodeId kernels, NodeId bias, std::size_t stride,
              std::size_t pad) {
  Tensor y = kernels::conv2d(t.value(x), t.value(kernels), t.value(bias), stride, pad);
  return t.push(std::move(y), {x, kernels, bias},
                [x, kernels, bias, stride, pad](Tape& tp, NodeId self) {
                  const Tensor& xv = tp.value(x);
                  const Tensor& k = tp.value(kernels);
                  const Tensor& g = tp.grad(self);
                  Tensor& gx = tp.grad(x);
                  Tensor& gk = tp.grad(kernels);
                  Tensor& gb = tp.grad(bias);
                  const std::size_t oc = g.shape[0], oh = g.shape[1], ow = g.shape[2];
                  const std::size_t ic = xv.shape[0], ih = xv.shape[1], iw = xv.shape[2];
                  const std::size_t kh = k.shape[2], kw = k.shape[3];
                  for (std::size_t o = 0; o < oc; ++o) {
                    for (std::size_t r = 0; r < oh; ++r) {
                      for (std::size_t c = 0; c < ow; ++c) {
                        const double go = g.data[(o * oh + r) * ow + c];
                        if (go == 0.0) continue;
                        gb.data[o] += go;
                        for (std::size_t ch = 0; ch < ic; ++ch) {
                          for (std::size_t i = 0; i < kh; ++i) {
                            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * stride + i) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(ih)) continue;
                            for (std::size_t j = 0; j < kw; ++j) {
                              const std::ptrdiff_t xx =
                                  static_cast<std::ptrdiff_t>(c * stride + j) -
                                  static_cast<std::ptrdiff_t>(pad);
                              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(iw)) continue;
                              const std::size_t ki = ((o * ic + ch) * kh + i) * kw + j;
                              const std::size_t xi = (ch * ih + static_cast<std::size_t>(yy)) * iw +
                                                     static_cast<std::size_t>(xx);
                              gk.data[ki] += go * xv.data[xi];
                              gx.data[xi] += go * k.data[ki];
                            }
                          }
                        }
                      }
                    }
                  }
                });
}

NodeId activate(Tape& t, NodeId x, const Activation& act) {
  Tensor y = kernels::activate(t.value(x), act);
  switch (act.kind) {
    case Activation::Kind::identity:
      return unary(t, x, std::move(y), [](double, double) { return 1.0; });
    case Activation::Kind::relu:
      return unary(t, x, std::move(y), [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
    case Activation::Kind::leaky_relu: {
      const double alpha = act.alpha;
      return unary(t, x, std::move(y),
                   [alpha](double in, double) { return in > 0.0 ? 1.0 : alpha; });
    }
    case Activation::Kind::tanh:
      return unary(t, x, std::move(y), [](double, double out) { return 1.0 - out * out; });
    case Activation::Kind::sigmoid:
      return unary(t, x, std::move(y), [](double, double out) { return out * (1.0 - out); });
  }
  throw ParameterError("activate: unknown activation");
}

NodeId mean_pool(Tape& t, NodeId x) {
  Tensor y = kernels::mean_pool(t.value(x));
  return t.push(std::move(y), {x}, [x](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(x);
    const std::size_t cells = gx.shape[1] * gx.shape[2];
    const double inv = 1.0 / static_cast<double>(cells);
    for (std::size_t ch = 0; ch < g.size(); ++ch) {
      const double gc = g.data[ch] * inv;
      for (std::size_t k = 0; k < cells; ++k) {
        gx.data[ch * cells + k] += gc;
      }
    }
  });
}

NodeId l2_normalize(Tape& t, NodeId x) {
  const Tensor& a = t.value(x);
  double n2 = 0.0;
  for (double v : a.data) n2 += v * v;
  const double n = std::sqrt(n2);
  if (!(n >= 1e-12)) {
    throw DegenerateInputError("l2_normalize: vector norm " + std::to_string(n) +
                               " is below 1e-12");
  }
  Tensor b = a;
  for (double& v : b.data) v /= n;
  return t.push(std::move(b), {x}, [x, n](Tape& tp, NodeId self) {
    // d b / d a = (I - b bᵀ) / ||a||
    const Tensor& b = tp.value(self);
    const Tensor& g = tp.grad(self);
    double bg = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) bg += b.data[i] * g.data[i];
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx.data[i] += (g.data[i] - b.data[i] * bg) / n;
    }
  });
}

NodeId add(Tape& t, NodeId a, NodeId b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Tensor y = t.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += t.value(b).data[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      tp.grad(a).data[i] += g.data[i];
      tp.grad(b).data[i] += g.data[i];
    }
  });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Tensor y = t.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] -= t.value(b).data[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      tp.grad(a).data[i] += g.data[i];
      tp.grad(b).data[i] -= g.data[i];
    }
  });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Tensor y = t.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= t.value(b).data[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      tp.grad(a).data[i] += g.data[i] * bv.data[i];
      tp.grad(b).data[i] += g.data[i] * av.data[i];
    }
  });
}

NodeId div(Tape& t, NodeId a, NodeId b) {
  require_same_shape(t.value(a), t.value(b), "div");
  Tensor y = t.value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] /= t.value(b).data[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& bv = tp.value(b);
    const Tensor& yv = tp.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      tp.grad(a).data[i] += g.data[i] / bv.data[i];
      tp.grad(b).data[i] -= g.data[i] * yv.data[i] / bv.data[i];
    }
  });
}

NodeId scale(Tape& t, NodeId a, double c) {
  Tensor y = t.value(a);
  for (double& v : y.data) v *= c;
  return unary(t, a, std::move(y), [c](double, double) { return c; });
}

NodeId add_scalar(Tape& t, NodeId a, double c) {
  Tensor y = t.value(a);
  for (double& v : y.data) v += c;
  return unary(t, a, std::move(y), [](double, double) { return 1.0; });
}

NodeId square(Tape& t, NodeId a) {
  Tensor y = t.value(a);
  for (double& v : y.data) v *= v;
  return unary(t, a, std::move(y), [](double in, double) { return 2.0 * in; });
}

NodeId log(Tape& t, NodeId a) {
  Tensor y = t.value(a);
  for (double& v : y.data) {
    if (!(v > 0.0)) {
      throw NumericalError("log: non-positive argument " + std::to_string(v));
    }
    v = std::log(v);
  }
  return unary(t, a, std::move(y), [](double in, double) { return 1.0 / in; });
}

NodeId floor_at(Tape& t, NodeId a, double floor) {
  Tensor y = t.value(a);
  for (double& v : y.data) v = std::max(v, floor);
  return unary(t, a, std::move(y), [floor](double in, double) { return in > floor ? 1.0 : 0.0; });
}

NodeId sum(Tape& t, NodeId a) {
  double s = 0.0;
  for (double v : t.value(a).data) s += v;
  return t.push(Tensor::scalar(s), {a}, [a](Tape& tp, NodeId self) {
    const double g = tp.grad(self).data[0];
    for (double& v : tp.grad(a).data) v += g;
  });
}

NodeId sum_nodes(Tape& t, std::span<const NodeId> scalars) {
  double s = 0.0;
  for (NodeId id : scalars) {
    if (t.value(id).size() != 1) {
      throw ShapeError("sum_nodes: expected scalar nodes");
    }
    s += t.value(id).data[0];
  }
  std::vector<NodeId> parents(scalars.begin(), scalars.end());
  return t.push(Tensor::scalar(s), parents, [](Tape& tp, NodeId self) {
    const double g = tp.grad(self).data[0];
    for (NodeId p : tp.parents(self)) tp.grad(p).data[0] += g;
  });
}

NodeId dot(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.size() != bv.size()) {
    throw ShapeError("dot: sizes " + std::to_string(av.size()) + " and " +
                     std::to_string(bv.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av.data[i] * bv.data[i];
  return t.push(Tensor::scalar(s), {a, b}, [a, b](Tape& tp, NodeId self) {
    const double g = tp.grad(self).data[0];
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    for (std::size_t i = 0; i < av.size(); ++i) {
      tp.grad(a).data[i] += g * bv.data[i];
      tp.grad(b).data[i] += g * av.data[i];
    }
  });
}

NodeId element(Tape& t, NodeId a, std::size_t i) {
  if (i >= t.value(a).size()) {
    throw ShapeError("element: index " + std::to_string(i) + " out of range");
  }
  return t.push(Tensor::scalar(t.value(a).data[i]), {a}, [a, i](Tape& tp, NodeId self) {
    tp.grad(a).data[i] += tp.grad(self).data[0];
  });
}

NodeId softmax_cross_entropy(Tape& t, NodeId logits, std::size_t label) {
  const Tensor& z = t.value(logits);
  if (label >= z.size()) {
    throw ParameterError("softmax_cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(z.size()) + " classes");
  }
  const double zmax = *std::max_element(z.data.begin(), z.data.end());
  double denom = 0.0;
  for (double v : z.data) denom += std::exp(v - zmax);
  const double lse = zmax + std::log(denom);
  return t.push(Tensor::scalar(lse - z.data[label]), {logits},
                [logits, label, lse](Tape& tp, NodeId self) {
                  const double g = tp.grad(self).data[0];
                  const Tensor& zv = tp.value(logits);
                  Tensor& gz = tp.grad(logits);
                  for (std::size_t i = 0; i < zv.size(); ++i) {
                    const double p = std::exp(zv.data[i] - lse);
                    gz.data[i] += g * (p - (i == label ? 1.0 : 0.0));
                  }
                });
}

}  // namespace ops

}  // namespace gpex
