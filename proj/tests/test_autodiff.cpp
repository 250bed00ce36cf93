#include <doctest.h>

#include <cmath>

#include "gpex/errors.hpp"
#include "gpex/nn.hpp"
#include "oracles.hpp"

using namespace gpex;

namespace {

Layer fixed_dense(std::vector<std::vector<double>> w, std::vector<double> b, Activation act) {
  const std::size_t out = w.size(), in = w.front().size();
  Layer l{LayerSpec::dense(in, out, act), {}, {}};
  l.weight.name = "w";
  l.weight.value = Tensor({out, in});
  for (std::size_t r = 0; r < out; ++r)
    for (std::size_t c = 0; c < in; ++c) l.weight.value.data[r * in + c] = w[r][c];
  l.bias.name = "b";
  l.bias.value = Tensor({out}, std::move(b));
  return l;
}

KernelMapper passthrough_mapper(double slope) {
  KernelMapper km;
  km.input_shape = {2};
  km.leaky_slope = slope;
  km.kernel_dim = 2;
  km.branches.push_back({fixed_dense({{1, 0}, {0, 1}}, {0, 0}, Activation::identity())});
  return km;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1,
                     double hi = 1) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("forward_predictor: trivial networks") {
  Predictor p;
  p.input_shape = {2};
  p.layers.push_back(fixed_dense({{1, 2}, {3, 4}}, {0.5, -1}, Activation::identity()));
  CHECK(forward_predictor(p, Tensor::vector({1, 1})) == Vector{3.5, 6});
  CHECK(forward_predictor(p, Tensor::vector({0, 0})) == Vector{0.5, -1});

  p.layers.front().spec.act = Activation::relu();
  CHECK(forward_predictor(p, Tensor::vector({-1, 0})) == Vector{0, 0});
  CHECK_THROWS_AS(forward_predictor(p, Tensor::vector({1, 2, 3})), ShapeError);
}

TEST_CASE("forward_predictor agrees with a straight-line evaluation") {
  std::mt19937_64 rng(11);
  Rng init(5);
  const std::vector<LayerSpec> specs{LayerSpec::conv(1, 3, 3, 1, 1, Activation::relu()),
                                     LayerSpec::conv(3, 2, 3, 2, 0, Activation::tanh()),
                                     LayerSpec::dense(2 * 2 * 2, 5, Activation::sigmoid()),
                                     LayerSpec::dense(5, 3, Activation::identity())};
  Predictor p = make_predictor({1, 6, 6}, specs, init);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({1, 6, 6}, rng);
    Tensor h = x;
    for (const auto& l : p.layers) h = oracle::naive_layer(l, h);
    const Vector got = forward_predictor(p, x);
    REQUIRE(got.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(h.data[i]).epsilon(1e-12));
    Tape t;
    const NodeId out = forward_predictor(t, p, t.constant(x));
    CHECK(t.value(out).data == got);
  }
}

TEST_CASE("forward_mapper: normalize then leaky rectify") {
  const KernelMapper km = passthrough_mapper(0.1);
  const Vector f = forward_mapper(km, Tensor::vector({3, 4}), 0);
  CHECK(f[0] == doctest::Approx(0.6));
  CHECK(f[1] == doctest::Approx(0.8));

  const KernelMapper km2 = passthrough_mapper(0.5);
  const Vector g = forward_mapper(km2, Tensor::vector({0, -2}), 0);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(-0.5));

  CHECK_THROWS_AS(forward_mapper(km, Tensor::vector({0, 0}), 0), DegenerateInputError);
  CHECK_THROWS_AS(forward_mapper(km, Tensor::vector({1, 0}), 1), ParameterError);
}

TEST_CASE("forward_mapper agrees with a straight-line evaluation") {
  std::mt19937_64 rng(2);
  Rng init(9);
  SUBCASE("dense") {
    KernelMapper km = make_mapper({4}, {LayerSpec::dense(4, 6, Activation::tanh())},
                                  {LayerSpec::dense(6, 5, Activation::identity())}, 3, 0.01, init);
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor({4}, rng);
      for (std::size_t h = 0; h < 3; ++h) {
        const Vector want = oracle::naive_mapper(km, x, h);
        const Vector got = forward_mapper(km, x, h);
        for (std::size_t d = 0; d < 5; ++d) CHECK(got[d] == doctest::Approx(want[d]).epsilon(1e-12));
      }
    }
  }
  SUBCASE("conv") {
    KernelMapper km = make_mapper({2, 5, 5}, {LayerSpec::conv(2, 3, 3, 1, 1, Activation::tanh())},
                                  {LayerSpec::conv(3, 4, 3, 1, 1, Activation::identity())}, 2,
                                  0.05, init);
    CHECK(km.spatial());
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor({2, 5, 5}, rng);
      const auto all = forward_mapper_all(km, x);
      Tape t;
      const auto nodes = forward_mapper_all(t, km, t.constant(x));
      for (std::size_t h = 0; h < 2; ++h) {
        const Vector want = oracle::naive_mapper(km, x, h);
        for (std::size_t d = 0; d < 4; ++d)
          CHECK(all[h][d] == doctest::Approx(want[d]).epsilon(1e-12));
        CHECK(t.value(nodes[h]).data == all[h]);
      }
    }
  }
}

TEST_CASE("backward: hand-derivable graphs") {
  Param a{"a", Tensor::vector({2, -3}), {}};
  Param b{"b", Tensor::vector({5, 7}), {}};
  std::vector<Param*> ps{&a, &b};

  zero_grads(ps);
  {
    Tape t;
    // Σ 3a + b
    const NodeId y = ops::sum(t, ops::add(t, ops::scale(t, t.param(a), 3.0), t.param(b)));
    t.backward(y);
  }
  CHECK(a.grad.data == std::vector<double>{3, 3});
  CHECK(b.grad.data == std::vector<double>{1, 1});

  zero_grads(ps);
  {
    Tape t;
    // a·a + a·b
    const NodeId pa = t.param(a);
    const NodeId y = ops::add(t, ops::dot(t, pa, pa), ops::dot(t, pa, t.param(b)));
    CHECK(t.value(y).data[0] == doctest::Approx(13 + 10 - 21));
    t.backward(y);
  }
  CHECK(a.grad.data == std::vector<double>{2 * 2 + 5, 2 * -3 + 7});
  CHECK(b.grad.data == std::vector<double>{2, -3});

  Tape t;
  const NodeId v = t.param(a);
  CHECK_THROWS_AS(t.backward(v), ContractError);
}

TEST_CASE("tape ops match central differences") {
  std::mt19937_64 rng(21);
  Param a{"a", random_tensor({4}, rng, 0.5, 1.5), {}};
  Param b{"b", random_tensor({4}, rng, 0.5, 1.5), {}};
  const Tensor wt = random_tensor({4}, rng);
  const auto weigh = [&](Tape& t, NodeId x) { return ops::dot(t, x, t.constant(wt)); };
  const std::vector<Param*> ab{&a, &b};

  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return weigh(t, ops::sub(t, t.param(a), t.param(b)));
        }) < 1e-6);
  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return weigh(t, ops::mul(t, t.param(a), t.param(b)));
        }) < 1e-6);
  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return weigh(t, ops::div(t, t.param(a), t.param(b)));
        }) < 1e-6);
  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return weigh(t, ops::log(t, ops::add_scalar(t, ops::square(t, t.param(a)), 0.3)));
        }) < 1e-6);
  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return weigh(t, ops::l2_normalize(t, ops::sub(t, t.param(a), t.param(b))));
        }) < 1e-6);
  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return ops::element(t, ops::mul(t, t.param(a), t.param(b)), 2);
        }) < 1e-6);
  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return ops::softmax_cross_entropy(t, ops::mul(t, t.param(a), t.param(b)), 1);
        }) < 1e-6);
  CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
          return weigh(t, ops::floor_at(t, ops::sub(t, t.param(a), t.param(b)), 0.05));
        }) < 1e-6);

  for (const Activation act : {Activation::identity(), Activation::relu(), Activation::leaky(0.2),
                               Activation::tanh(), Activation::sigmoid()}) {
    CAPTURE(to_string(act.kind));
    CHECK(oracle::worst_grad_error(ab, [&](Tape& t) {
            return weigh(t, ops::activate(t, ops::sub(t, t.param(a), t.param(b)), act));
          }) < 1e-6);
  }
}

TEST_CASE("layer gradients match central differences") {
  std::mt19937_64 rng(4);
  Rng init(6);
  SUBCASE("dense") {
    Layer l = make_layer(LayerSpec::dense(5, 3, Activation::tanh()), init, "l");
    const Tensor x = random_tensor({5}, rng);
    const Tensor wt = random_tensor({3}, rng);
    CHECK(oracle::worst_grad_error({&l.weight, &l.bias}, [&](Tape& t) {
            return ops::dot(t, forward_layer(t, l, t.constant(x)), t.constant(wt));
          }) < 1e-6);
  }
  SUBCASE("conv with stride and padding, then mean pool") {
    Layer l = make_layer(LayerSpec::conv(2, 3, 3, 2, 1, Activation::sigmoid()), init, "c");
    const Tensor x = random_tensor({2, 5, 4}, rng);
    const Tensor wt = random_tensor({3}, rng);
    CHECK(oracle::worst_grad_error({&l.weight, &l.bias}, [&](Tape& t) {
            return ops::dot(t, ops::mean_pool(t, forward_layer(t, l, t.constant(x))),
                            t.constant(wt));
          }) < 1e-6);
  }
  SUBCASE("whole mapper") {
    KernelMapper km = make_mapper({1, 4, 4}, {LayerSpec::conv(1, 2, 3, 1, 1, Activation::tanh())},
                                  {LayerSpec::conv(2, 3, 3, 1, 1, Activation::identity())}, 2,
                                  0.1, init);
    const Tensor x = random_tensor({1, 4, 4}, rng);
    const Tensor wt = random_tensor({3}, rng);
    CHECK(oracle::worst_grad_error(km.parameters(), [&](Tape& t) {
            const auto f = forward_mapper_all(t, km, t.constant(x));
            return ops::add(t, ops::dot(t, f[0], t.constant(wt)), ops::dot(t, f[0], f[1]));
          }) < 1e-5);
  }
}

TEST_CASE("adam") {
  Param p{"p", Tensor::scalar(1.0), {}};
  std::vector<Param*> ps{&p};
  AdamState s = make_adam_state(ps);
  AdamConfig cfg;
  cfg.lr = 0.1;

  SUBCASE("zero gradient leaves the parameter alone") {
    zero_grads(ps);
    adam_step(ps, s, cfg);
    CHECK(p.value.data[0] == 1.0);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    zero_grads(ps);
    p.grad.data[0] = -42.0;
    adam_step(ps, s, cfg);
    CHECK(p.value.data[0] == doctest::Approx(1.1));
  }
  SUBCASE("three steps by hand") {
    const double g[] = {0.5, -0.2, 0.1};
    const double want[] = {0.900000002, 0.8654394181165108, 0.8275002408356956};
    for (int k = 0; k < 3; ++k) {
      zero_grads(ps);
      p.grad.data[0] = g[k];
      adam_step(ps, s, cfg);
      CHECK(p.value.data[0] == doctest::Approx(want[k]).epsilon(1e-12));
    }
    CHECK(s.step == 3);
  }
  SUBCASE("mismatched state") {
    Param q{"q", Tensor::vector({1, 2}), {}};
    std::vector<Param*> qs{&p, &q};
    zero_grads(qs);
    CHECK_THROWS_AS(adam_step(qs, s, cfg), ShapeError);
  }
}
