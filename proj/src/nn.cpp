#include "gpex/nn.hpp"

#include <algorithm>
#include <cmath>

#include "gpex/errors.hpp"

namespace gpex {

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act) {
  LayerSpec s;
  s.kind = Kind::dense;
  s.in = in;
  s.out = out;
  s.act = act;
  return s;
}

LayerSpec LayerSpec::conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::size_t stride, std::size_t pad, Activation act) {
  LayerSpec s;
  s.kind = Kind::conv;
  s.in = in_ch;
  s.out = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.act = act;
  return s;
}

Layer make_layer(const LayerSpec& spec, Rng& rng, const std::string& name) {
  if (spec.in == 0 || spec.out == 0) {
    throw ParameterError("layer " + name + ": zero width");
  }
  if (spec.act.kind == Activation::Kind::leaky_relu &&
      !(spec.act.alpha > 0.0 && spec.act.alpha < 1.0)) {
    throw ParameterError("layer " + name + ": leaky slope must lie in (0,1)");
  }
  Layer layer;
  layer.spec = spec;
  double fan_in = static_cast<double>(spec.in);
  double fan_out = static_cast<double>(spec.out);
  std::vector<std::size_t> wshape{spec.out, spec.in};
  if (spec.kind == LayerSpec::Kind::conv) {
    if (spec.kernel == 0 || spec.stride == 0) {
      throw ParameterError("layer " + name + ": kernel and stride must be positive");
    }
    const double area = static_cast<double>(spec.kernel * spec.kernel);
    fan_in *= area;
    fan_out *= area;
    wshape = {spec.out, spec.in, spec.kernel, spec.kernel};
  }
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  layer.weight.name = name + ".weight";
  layer.weight.value = Tensor(wshape);
  for (double& w : layer.weight.value.data) {
    w = dist(rng);
  }
  layer.bias.name = name + ".bias";
  layer.bias.value = Tensor({spec.out});
  layer.weight.zero_grad();
  layer.bias.zero_grad();
  return layer;
}

std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                            std::span<const std::size_t> in_shape) {
  if (spec.kind == LayerSpec::Kind::dense) {
    if (shape_size(in_shape) != spec.in) {
      throw ShapeError("dense layer expects " + std::to_string(spec.in) + " inputs, got " +
                       shape_string(in_shape));
    }
    return {spec.out};
  }
  const std::vector<std::size_t> kshape{spec.out, spec.in, spec.kernel, spec.kernel};
  return kernels::conv2d_output_shape(in_shape, kshape, spec.stride, spec.pad);
}

Tensor forward_layer(const Layer& layer, const Tensor& x) {
  Tensor y = layer.spec.kind == LayerSpec::Kind::dense
                 ? kernels::dense(layer.weight.value, layer.bias.value, x)
                 : kernels::conv2d(x, layer.weight.value, layer.bias.value, layer.spec.stride,
                                   layer.spec.pad);
  return kernels::activate(y, layer.spec.act);
}

NodeId forward_layer(Tape& t, Layer& layer, NodeId x) {
  const NodeId w = t.param(layer.weight);
  const NodeId b = t.param(layer.bias);
  const NodeId y = layer.spec.kind == LayerSpec::Kind::dense
                       ? ops::dense(t, x, w, b)
                       : ops::conv2d(t, x, w, b, layer.spec.stride, layer.spec.pad);
  if (layer.spec.act.kind == Activation::Kind::identity) {
    return y;
  }
  return ops::activate(t, y, layer.spec.act);
}

namespace {

std::vector<std::size_t> check_chain(std::vector<std::size_t> shape,
                                     const std::vector<LayerSpec>& specs) {
  for (const auto& s : specs) {
    shape = layer_output_shape(s, shape);
  }
  return shape;
}

void require_input(std::span<const std::size_t> expected, const Tensor& x, const char* who) {
  if (x.size() != shape_size(expected) ||
      (expected.size() > 1 && !std::equal(expected.begin(), expected.end(), x.shape.begin(),
                                          x.shape.end()))) {
    throw ShapeError(std::string(who) + ": input " + shape_string(x.shape) + ", expected " +
                     shape_string(expected));
  }
}

void collect(std::vector<Layer>& layers, std::vector<Param*>& out) {
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

}  // namespace

std::size_t Predictor::heads() const { return layers.empty() ? 0 : layers.back().spec.out; }

std::size_t Predictor::wide_width() const {
  return layers.size() < 2 ? 0 : layers[layers.size() - 2].spec.out;
}

std::vector<Param*> Predictor::parameters() {
  std::vector<Param*> out;
  collect(layers, out);
  return out;
}

Predictor make_predictor(std::vector<std::size_t> input_shape, const std::vector<LayerSpec>& specs,
                         Rng& rng) {
  if (specs.empty()) {
    throw ParameterError("predictor needs at least one layer");
  }
  const auto out_shape = check_chain(input_shape, specs);
  if (out_shape.size() != 1) {
    throw ShapeError("predictor must end in a vector of heads, got " + shape_string(out_shape));
  }
  Predictor p;
  p.input_shape = std::move(input_shape);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    p.layers.push_back(make_layer(specs[i], rng, "predictor." + std::to_string(i)));
  }
  return p;
}

Vector forward_predictor(const Predictor& p, const Tensor& x) {
  require_input(p.input_shape, x, "forward_predictor");
  Tensor h = x;
  for (const auto& layer : p.layers) {
    h = forward_layer(layer, h);
  }
  return h.data;
}

NodeId forward_predictor(Tape& t, Predictor& p, NodeId x) {
  require_input(p.input_shape, t.value(x), "forward_predictor");
  NodeId h = x;
  for (auto& layer : p.layers) {
    h = forward_layer(t, layer, h);
  }
  return h;
}

bool KernelMapper::spatial() const {
  return !branches.empty() && !branches.front().empty() &&
         branches.front().back().spec.kind == LayerSpec::Kind::conv;
}

std::vector<Param*> KernelMapper::parameters() {
  std::vector<Param*> out;
  collect(backbone, out);
  for (auto& b : branches) {
    collect(b, out);
  }
  return out;
}

KernelMapper make_mapper(std::vector<std::size_t> input_shape,
                         const std::vector<LayerSpec>& backbone,
                         const std::vector<LayerSpec>& branch, std::size_t heads,
                         double leaky_slope, Rng& rng) {
  if (heads == 0) {
    throw ParameterError("mapper needs at least one head");
  }
  if (branch.empty()) {
    throw ParameterError("mapper branch needs at least one layer");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw ParameterError("leaky slope must lie in (0,1)");
  }
  const auto mid = check_chain(input_shape, backbone);
  const auto out = check_chain(mid, branch);
  if (out.size() != 1 && out.size() != 3) {
    throw ShapeError("mapper branch output must be a vector or {C,H,W} map, got " +
                     shape_string(out));
  }
  KernelMapper km;
  km.input_shape = std::move(input_shape);
  km.leaky_slope = leaky_slope;
  km.kernel_dim = out[0];
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    km.backbone.push_back(make_layer(backbone[i], rng, "mapper.backbone." + std::to_string(i)));
  }
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < branch.size(); ++i) {
      layers.push_back(make_layer(
          branch[i], rng, "mapper.branch" + std::to_string(h) + "." + std::to_string(i)));
    }
    km.branches.push_back(std::move(layers));
  }
  return km;
}

Vector normalize_and_rectify(std::span<const double> a, double leaky_slope) {
  const double n = norm2(a);
  if (!(n >= 1e-12)) {
    throw DegenerateInputError("kernel mapping: pooled vector has norm " + std::to_string(n));
  }
  Vector f(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double b = a[i] / n;
    f[i] = b > 0.0 ? b : leaky_slope * b;
  }
  return f;
}

namespace {

Tensor run(const std::vector<Layer>& layers, Tensor h) {
  for (const auto& layer : layers) {
    h = forward_layer(layer, h);
  }
  return h;
}

void check_head(const KernelMapper& km, std::size_t head) {
  if (head >= km.heads()) {
    throw ParameterError("head " + std::to_string(head) + " out of range for " +
                         std::to_string(km.heads()) + " heads");
  }
}

MapperTrace finish(const KernelMapper& km, Tensor z) {
  MapperTrace tr;
  tr.a = z.rank() == 3 ? kernels::mean_pool(z).data : z.data;
  tr.z = std::move(z);
  const double n = norm2(tr.a);
  if (!(n >= 1e-12)) {
    throw DegenerateInputError("kernel mapping: pooled vector has norm " + std::to_string(n));
  }
  tr.b.resize(tr.a.size());
  tr.f.resize(tr.a.size());
  for (std::size_t i = 0; i < tr.a.size(); ++i) {
    tr.b[i] = tr.a[i] / n;
    tr.f[i] = tr.b[i] > 0.0 ? tr.b[i] : km.leaky_slope * tr.b[i];
  }
  return tr;
}

}  // namespace

MapperTrace trace_mapper(const KernelMapper& km, const Tensor& x, std::size_t head) {
  check_head(km, head);
  require_input(km.input_shape, x, "forward_mapper");
  return finish(km, run(km.branches[head], run(km.backbone, x)));
}

Vector forward_mapper(const KernelMapper& km, const Tensor& x, std::size_t head) {
  return trace_mapper(km, x, head).f;
}

std::vector<Vector> forward_mapper_all(const KernelMapper& km, const Tensor& x) {
  require_input(km.input_shape, x, "forward_mapper");
  const Tensor shared = run(km.backbone, x);
  std::vector<Vector> out;
  out.reserve(km.heads());
  for (const auto& branch : km.branches) {
    out.push_back(finish(km, run(branch, shared)).f);
  }
  return out;
}

std::vector<NodeId> forward_mapper_all(Tape& t, KernelMapper& km, NodeId x) {
  require_input(km.input_shape, t.value(x), "forward_mapper");
  NodeId shared = x;
  for (auto& layer : km.backbone) {
    shared = forward_layer(t, layer, shared);
  }
  std::vector<NodeId> out;
  out.reserve(km.heads());
  for (auto& branch : km.branches) {
    NodeId h = shared;
    for (auto& layer : branch) {
      h = forward_layer(t, layer, h);
    }
    if (t.value(h).rank() == 3) {
      h = ops::mean_pool(t, h);
    }
    h = ops::l2_normalize(t, h);
    out.push_back(ops::activate(t, h, Activation::leaky(km.leaky_slope)));
  }
  return out;
}

AdamState make_adam_state(std::span<Param* const> params) {
  AdamState s;
  for (const Param* p : params) {
    s.m.emplace_back(p->value.shape);
    s.v.emplace_back(p->value.shape);
  }
  return s;
}

void adam_step(std::span<Param* const> params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameter list");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    if (p.grad.size() != p.value.size() || state.m[k].size() != p.value.size()) {
      throw ShapeError("adam_step: shape mismatch for " + p.name);
    }
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) {
    p->zero_grad();
  }
}

}  // namespace gpex
