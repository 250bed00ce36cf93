#include <doctest.h>

#include <cmath>

#include "gpex/distill.hpp"
#include "gpex/errors.hpp"
#include "oracles.hpp"

using namespace gpex;

namespace {

Dataset random_dataset(std::size_t n, std::size_t features, std::size_t classes,
                       std::mt19937_64& rng) {
  Dataset ds;
  ds.name = "random";
  ds.instance_shape = {features};
  ds.classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    ds.instances.push_back(Tensor({features}, oracle::random_vector(features, rng)));
    ds.labels.push_back(i % classes);
  }
  return ds;
}

struct Setup {
  std::mt19937_64 rng{99};
  Rng init{3};
  Dataset train = random_dataset(60, 3, 2, rng);
  Dataset inducing = train.subset(std::vector<std::size_t>{0, 3, 6, 9, 12, 15, 18, 21, 24, 27});
  Predictor p = make_predictor({3},
                               {LayerSpec::dense(3, 8, Activation::tanh()),
                                LayerSpec::dense(8, 2, Activation::identity())},
                               init);
  KernelMapper km = make_mapper({3}, {LayerSpec::dense(3, 6, Activation::tanh())},
                                {LayerSpec::dense(6, 4, Activation::identity())}, 2, 0.1, init);
  GpHyper hp{.sigma_gp2 = 0.05, .kernel_dim = 4, .heads = 2, .inducing = 10};
  DistillConfig dc = [] {
    DistillConfig c;
    c.max_iter = 12;
    c.train_batch = 8;
    c.inducing_batch = 4;
    c.refresh_batch = 4;
    c.lr = 1e-3;
    c.seed = 5;
    return c;
  }();
};

std::vector<Tensor> values_of(const std::vector<Param*>& ps) {
  std::vector<Tensor> out;
  for (const Param* p : ps) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("gp_loss worked examples") {
  GpHyper hp;
  CHECK(gp_loss(GpPosterior{{1}, {1}}, Vector{0}, hp) == doctest::Approx(1.0));

  hp.sigma_g2 = 0.5;
  const double e = std::exp(1.0);
  const double want = (4 + 0.5) / e + 1 + (0 + 0.5) / 0.5 + std::log(0.5);
  CHECK(gp_loss(GpPosterior{{2, 0}, {e, 0.5}}, Vector{0, 0}, hp) == doctest::Approx(want));

  hp.sigma_g2 = 0.0;
  CHECK(gp_loss(GpPosterior{{1}, {0}}, Vector{0}, hp) ==
        doctest::Approx(1.0 / 1e-6 + std::log(1e-6)));
  CHECK(gp_loss(GpPosterior{{1}, {0}}, Vector{0}, hp, 0.5) ==
        doctest::Approx(2.0 + std::log(0.5)));

  CHECK_THROWS_AS(gp_loss(GpPosterior{{1}, {1}}, Vector{0, 1}, hp), ShapeError);
  CHECK_THROWS_AS(gp_loss(GpPosterior{{NAN}, {1}}, Vector{0}, hp), NumericalError);
}

TEST_CASE("gp_loss on a tape equals the plain value") {
  GpHyper hp;
  hp.sigma_g2 = 0.3;
  const GpPosterior post{{0.4, -1.2, 2.0}, {0.7, 1e-9, 2.5}};
  const Vector g{1.0, -1.0, 0.5};
  Tape t;
  std::vector<NodeId> nodes;
  for (std::size_t h = 0; h < 3; ++h)
    nodes.push_back(t.constant(Tensor::vector({post.mean[h], post.cov[h]})));
  const NodeId l = gp_loss(t, nodes, g, hp);
  CHECK(t.value(l).data[0] == doctest::Approx(gp_loss(post, g, hp)).epsilon(1e-14));
}

TEST_CASE("ann_elbo_loss worked examples") {
  GpHyper hp;
  CHECK(ann_elbo_loss(GpPosterior{{0, 0}, {1, 1}}, Vector{0, 0}, 0, hp) ==
        doctest::Approx(std::log(2.0)));
  CHECK(ann_elbo_loss(GpPosterior{{1, 0}, {0.5, 1}}, Vector{0, 0}, 1, hp) ==
        doctest::Approx(1.0 + std::log(2.0)));
  // large logits stay finite
  CHECK(ann_elbo_loss(GpPosterior{{1000, 0}, {1, 1}}, Vector{1000, 0}, 0, hp) ==
        doctest::Approx(0.0));
  CHECK_THROWS_AS(ann_elbo_loss(GpPosterior{{0, 0}, {1, 1}}, Vector{0, 0}, 2, hp), ParameterError);
}

TEST_CASE("ann_elbo_loss gradients reach the predictor") {
  Setup s;
  const GpPosterior post{{0.3, -0.4}, {0.2, 0.8}};
  const Tensor x = s.train.instances[4];
  const auto params = s.p.parameters();
  const auto build = [&](Tape& t) {
    const NodeId g = forward_predictor(t, s.p, t.constant(x));
    return ann_elbo_loss(t, post, g, 1, s.hp);
  };
  {
    Tape t;
    const NodeId l = build(t);
    const Vector g = forward_predictor(s.p, x);
    CHECK(t.value(l).data[0] == doctest::Approx(ann_elbo_loss(post, g, 1, s.hp)).epsilon(1e-13));
  }
  CHECK(oracle::worst_grad_error(params, build) < 1e-5);
}

TEST_CASE("mixing") {
  const Tensor a = Tensor::vector({1, 2});
  const Tensor b = Tensor::vector({5, -2});
  CHECK(mix(a, b, 1.0) == a);
  CHECK(mix(a, b, 0.0) == b);
  CHECK(mix(a, b, 2.0) == Tensor::vector({-3, 6}));

  Rng r1(42), r2(42);
  for (int k = 0; k < 100; ++k) {
    const Mixed m1 = mix_instances(a, b, r1);
    const Mixed m2 = mix_instances(a, b, r2);
    CHECK(m1.lambda == m2.lambda);
    CHECK(m1.x == m2.x);
    CHECK(m1.lambda >= -1.0);
    CHECK(m1.lambda < 2.0);
    CHECK(m1.x == mix(a, b, m1.lambda));
  }
  CHECK_THROWS_AS(mix_instances(a, Tensor::vector({1}), r1), ShapeError);
}

TEST_CASE("optim_kern_mappings descends on a fixed batch") {
  Setup s;
  const InducingStore store = init_gp_params(s.inducing, s.p, s.km, s.hp);
  const std::vector<Tensor> xs(s.train.instances.begin() + 30, s.train.instances.begin() + 46);
  const std::vector<std::size_t> idx{1, 4};
  const std::vector<Tensor> xt{s.inducing.instances[1], s.inducing.instances[4]};
  AdamState opt = make_adam_state(s.km.parameters());
  AdamConfig adam;
  adam.lr = 1e-3;
  double prev = kern_mapping_loss(xs, idx, xt, store, s.km, s.p, s.hp, kDefaultEpsCov, false);
  for (int k = 0; k < 5; ++k) {
    const double before =
        optim_kern_mappings(xs, idx, xt, store, s.km, s.p, s.hp, opt, adam);
    CHECK(before == doctest::Approx(prev).epsilon(1e-12));
    const double after =
        kern_mapping_loss(xs, idx, xt, store, s.km, s.p, s.hp, kDefaultEpsCov, false);
    CHECK(after < before);
    prev = after;
  }
}

TEST_CASE("kern_mapping_loss gradients include the substituted inducing rows") {
  Setup s;
  const InducingStore store = init_gp_params(s.inducing, s.p, s.km, s.hp);
  const std::vector<Tensor> xs(s.train.instances.begin() + 30, s.train.instances.begin() + 34);
  const auto params = s.km.parameters();

  zero_grads(params);
  kern_mapping_loss(xs, {}, {}, store, s.km, s.p, s.hp, kDefaultEpsCov, true);
  const std::vector<Tensor> query_only = [&] {
    std::vector<Tensor> g;
    for (const Param* p : params) g.push_back(p->grad);
    return g;
  }();

  const std::vector<std::size_t> idx{0, 2, 5};
  const std::vector<Tensor> xt{s.inducing.instances[0], s.inducing.instances[2],
                               s.inducing.instances[5]};
  zero_grads(params);
  const double with_rows =
      kern_mapping_loss(xs, idx, xt, store, s.km, s.p, s.hp, kDefaultEpsCov, true);
  const double without_rows =
      kern_mapping_loss(xs, {}, {}, store, s.km, s.p, s.hp, kDefaultEpsCov, false);
  // same mapper, so substituting rows leaves the value alone
  CHECK(with_rows == doctest::Approx(without_rows).epsilon(1e-10));
  double diff = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->grad.size(); ++i)
      diff = std::max(diff, std::abs(params[k]->grad.data[i] - query_only[k].data[i]));
  CHECK(diff > 1e-6);

  CHECK_THROWS_AS(kern_mapping_loss({}, {}, {}, store, s.km, s.p, s.hp, kDefaultEpsCov, false),
                  ParameterError);
}

TEST_CASE("explain_ann with zero iterations returns the initial store") {
  Setup s;
  s.dc.max_iter = 0;
  const InducingStore want = init_gp_params(s.inducing, s.p, s.km, s.hp);
  std::vector<std::size_t> flushed;
  DistillHooks hooks;
  hooks.checkpoint = [&](std::size_t it, const KernelMapper&, const InducingStore&,
                         const TrainTrace&, const Rng&) { flushed.push_back(it); };
  const DistillResult r = explain_ann(s.train, s.inducing, s.p, s.km, s.hp, s.dc, hooks);
  for (std::size_t h = 0; h < 2; ++h) {
    CHECK(r.store.U[h] == want.U[h]);
    CHECK(r.store.V[h] == want.V[h]);
    CHECK(r.store.gram[h].gram == want.gram[h].gram);
  }
  CHECK(r.trace.loss.empty());
  CHECK(flushed == std::vector<std::size_t>{0});
}

TEST_CASE("explain_ann is deterministic and leaves the predictor alone") {
  Setup s1, s2;
  const auto pred_before = values_of(s1.p.parameters());
  const DistillResult a = explain_ann(s1.train, s1.inducing, s1.p, s1.km, s1.hp, s1.dc);
  const DistillResult b = explain_ann(s2.train, s2.inducing, s2.p, s2.km, s2.hp, s2.dc);
  CHECK(a.trace.loss == b.trace.loss);
  CHECK(a.trace.loss.size() == 12);
  for (std::size_t h = 0; h < 2; ++h) CHECK(a.store.U[h] == b.store.U[h]);
  CHECK(values_of(s1.km.parameters()) == values_of(s2.km.parameters()));
  CHECK(values_of(s1.p.parameters()) == pred_before);
  a.store.check();

  Setup s3;
  s3.dc.seed = 6;
  const DistillResult c = explain_ann(s3.train, s3.inducing, s3.p, s3.km, s3.hp, s3.dc);
  CHECK(c.trace.loss != a.trace.loss);
}

TEST_CASE("explain_ann hooks: checkpoints and probes") {
  Setup s;
  s.dc.max_iter = 7;
  s.dc.checkpoint_every = 3;
  s.dc.probe_every = 2;
  std::vector<std::size_t> flushed;
  DistillHooks hooks;
  hooks.probe = &s.train;
  hooks.checkpoint = [&](std::size_t it, const KernelMapper&, const InducingStore&,
                         const TrainTrace& tr, const Rng&) {
    CHECK(tr.loss.size() == it);
    flushed.push_back(it);
  };
  const DistillResult r = explain_ann(s.train, s.inducing, s.p, s.km, s.hp, s.dc, hooks);
  CHECK(flushed == std::vector<std::size_t>{3, 6, 7});
  REQUIRE(r.trace.probes.size() == 4);
  CHECK(r.trace.probes[0].iter == 2);
  CHECK(r.trace.probes[3].iter == 7);
  for (const auto& pr : r.trace.probes) {
    REQUIRE(pr.r.size() == 2);
    for (const auto& v : pr.r) CHECK(v.has_value());
  }

  const std::string csv = r.trace.to_csv(2);
  CHECK(csv.rfind("iter,loss,r_head_0,r_head_1\n", 0) == 0);
  std::size_t lines = 0, blank = 0;
  for (std::size_t pos = 0; (pos = csv.find('\n', pos)) != std::string::npos; ++pos) ++lines;
  CHECK(lines == 8);
  for (std::size_t pos = 0; (pos = csv.find(",,\n", pos)) != std::string::npos; ++pos) ++blank;
  CHECK(blank == 3);
}

TEST_CASE("explain_ann with final_refresh matches the final mapper") {
  Setup s;
  s.dc.final_refresh = true;
  const DistillResult r = explain_ann(s.train, s.inducing, s.p, s.km, s.hp, s.dc);
  const InducingStore fresh = init_gp_params(s.inducing, s.p, s.km, s.hp);
  for (std::size_t h = 0; h < 2; ++h) CHECK(r.store.U[h] == fresh.U[h]);
}

TEST_CASE("DistillConfig validation") {
  Setup s;
  DistillConfig c = s.dc;
  c.train_batch = 0;
  CHECK_THROWS_AS(explain_ann(s.train, s.inducing, s.p, s.km, s.hp, c), ParameterError);
  c = s.dc;
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = s.dc;
  c.mix_low = 2;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = s.dc;
  c.lr_decay = 1.5;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("a single small step descends on a frozen batch in nearly every trial") {
  std::mt19937_64 rng(2718);
  int descended = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng init(rng());
    const Dataset inducing = random_dataset(12, 3, 2, rng);
    Predictor p = make_predictor({3},
                                 {LayerSpec::dense(3, 6, Activation::tanh()),
                                  LayerSpec::dense(6, 2, Activation::identity())},
                                 init);
    KernelMapper km = make_mapper({3}, {LayerSpec::dense(3, 6, Activation::tanh())},
                                  {LayerSpec::dense(6, 3, Activation::identity())}, 2, 0.1, init);
    const GpHyper hp{.sigma_gp2 = 0.05, .kernel_dim = 3, .heads = 2, .inducing = 12};
    const InducingStore store = init_gp_params(inducing, p, km, hp);
    std::vector<Tensor> xs;
    for (int q = 0; q < 8; ++q) xs.push_back(Tensor({3}, oracle::random_vector(3, rng)));
    const std::vector<std::size_t> idx{1, 5, 9};
    const std::vector<Tensor> xt{inducing.instances[1], inducing.instances[5],
                                 inducing.instances[9]};
    AdamState opt = make_adam_state(km.parameters());
    AdamConfig adam;
    adam.lr = 1e-5;
    const double before = optim_kern_mappings(xs, idx, xt, store, km, p, hp, opt, adam);
    const double after = kern_mapping_loss(xs, idx, xt, store, km, p, hp, kDefaultEpsCov, false);
    descended += after < before;
  }
  CHECK(descended >= 95);
}

TEST_CASE("linear predictor on blobs distills to a faithful GP") {
  const Dataset train = gen_synthetic(SyntheticKind::blobs, 256, 1);
  const Dataset test = gen_synthetic(SyntheticKind::blobs, 128, 2);
  Rng init(7);
  Predictor p = make_predictor({2}, {LayerSpec::dense(2, 2, Activation::identity())}, init);
  KernelMapper km = make_mapper({2}, {LayerSpec::dense(2, 32, Activation::tanh())},
                                {LayerSpec::dense(32, 8, Activation::identity())}, 2, 0.01, init);
  const GpHyper hp{.kernel_dim = 8, .heads = 2, .inducing = 256};
  DistillConfig dc;
  dc.max_iter = 2000;
  dc.lr = 1e-3;
  dc.seed = 3;
  const DistillResult r = explain_ann(train, train, p, km, hp, dc);
  const HeadCorrelations c = probe_correlations(p, r.store, km, hp, test);
  for (const auto& v : c) {
    REQUIRE(v.has_value());
    CHECK(*v >= 0.95);
  }
}
