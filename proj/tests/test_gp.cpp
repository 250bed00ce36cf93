#include <doctest.h>

#include <cmath>

#include "gpex/errors.hpp"
#include "gpex/gp.hpp"
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

struct Fixture {
  std::mt19937_64 rng{123};
  Rng init{77};
  Dataset inducing = random_dataset(30, 3, 2, rng);
  Predictor p = make_predictor({3},
                               {LayerSpec::dense(3, 8, Activation::tanh()),
                                LayerSpec::dense(8, 2, Activation::identity())},
                               init);
  KernelMapper km = make_mapper({3}, {LayerSpec::dense(3, 6, Activation::tanh())},
                                {LayerSpec::dense(6, 4, Activation::identity())}, 2, 0.1, init);
  GpHyper hp{.sigma_gp2 = 0.05, .kernel_dim = 4, .heads = 2, .inducing = 30};
};

Matrix rows_of(const std::vector<Vector>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

}  // namespace

TEST_CASE("HeadPosterior: one inducing point") {
  const Matrix u{{1}};
  const HeadPosterior hp(u, Vector{1}, gram_init(u), 1.0);
  const auto [mean, cov] = hp.evaluate(Vector{1});
  CHECK(mean == doctest::Approx(0.5));
  CHECK(cov == doctest::Approx(0.5));
  const auto [m0, c0] = hp.evaluate(Vector{0});
  CHECK(m0 == 0.0);
  CHECK(c0 == 0.0);
}

TEST_CASE("HeadPosterior matches the explicit M-space posterior") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix u = oracle::random_matrix(30, 4, rng);
    const Vector v = oracle::random_vector(30, rng, -3, 3);
    const double s = 0.01 + 0.1 * trial;
    const HeadPosterior post(u, v, gram_init(u), s);
    for (int q = 0; q < 5; ++q) {
      const Vector x = oracle::random_vector(4, rng);
      const auto [mean, cov] = post.evaluate(x);
      const auto want = oracle::dense_posterior(u, v, x, s);
      CHECK(mean == doctest::Approx(want.mean).epsilon(1e-9));
      CHECK(std::abs(cov - want.cov) < 1e-9 * (1 + std::abs(want.cov)));
    }
  }
}

TEST_CASE("HeadPosterior: near-noiseless interpolation") {
  // three orthogonal rows in five dimensions
  const Matrix u{{1, 0, 0, 0, 0}, {0, 0.6, 0.8, 0, 0}, {0, 0, 0, 0, 1}};
  const Vector v{2, -1, 0.5};
  const HeadPosterior post(u, v, gram_init(u), 1e-10);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto [mean, cov] = post.evaluate(u.row(i));
    CHECK(mean == doctest::Approx(v[i]).epsilon(1e-8));
    CHECK(cov < 1e-8);
  }
}

TEST_CASE("HeadPosterior: variance never grows with more inducing points") {
  std::mt19937_64 rng(41);
  const Matrix all = oracle::random_matrix(12, 3, rng);
  const Vector v = oracle::random_vector(12, rng);
  const Vector x = oracle::random_vector(3, rng);
  double prev = dot(x, x);
  for (std::size_t m = 1; m <= 12; ++m) {
    Matrix u(m, 3);
    for (std::size_t i = 0; i < m; ++i) std::copy(all.row(i).begin(), all.row(i).end(), u.row(i).begin());
    const HeadPosterior post(u, Vector(v.begin(), v.begin() + m), gram_init(u), 0.1);
    const double cov = post.evaluate(x).second;
    CHECK(cov <= prev + 1e-12);
    CHECK(cov >= 0.0);
    prev = cov;
  }
}

TEST_CASE("settle_cov") {
  CHECK(settle_cov(0.25) == 0.25);
  CHECK(settle_cov(-1e-12) == 0.0);
  CHECK_THROWS_AS(settle_cov(-1e-6), NumericalError);
  CHECK_THROWS_AS(settle_cov(NAN), NumericalError);
}

TEST_CASE("init_gp_params stores predictor outputs and mapper rows") {
  Fixture fx;
  const InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);
  store.check();
  REQUIRE(store.heads() == 2);
  REQUIRE(store.size() == 30);
  for (std::size_t i = 0; i < 30; ++i) {
    Tensor h = fx.inducing.instances[i];
    for (const auto& l : fx.p.layers) h = oracle::naive_layer(l, h);
    CHECK(store.index_map[i] == i);
    CHECK(store.row_of(i) == i);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(store.V[l][i] == doctest::Approx(h.data[l]).epsilon(1e-12));
      const Vector f = oracle::naive_mapper(fx.km, fx.inducing.instances[i], l);
      for (std::size_t d = 0; d < 4; ++d)
        CHECK(store.U[l](i, d) == doctest::Approx(f[d]).epsilon(1e-12));
    }
  }
  for (std::size_t l = 0; l < 2; ++l) {
    const Matrix g = oracle::naive_gram(store.U[l]);
    for (std::size_t k = 0; k < 16; ++k)
      CHECK(store.gram[l].gram.data()[k] == doctest::Approx(g.data()[k]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(store.row_of(30), LookupError);
}

TEST_CASE("init_gp_params with a constant predictor") {
  Fixture fx;
  for (auto& l : fx.p.layers) {
    std::fill(l.weight.value.data.begin(), l.weight.value.data.end(), 0.0);
  }
  fx.p.layers.back().bias.value.data = {1.5, -2.0};
  const InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);
  for (double v : store.V[0]) CHECK(v == 1.5);
  for (double v : store.V[1]) CHECK(v == -2.0);
}

TEST_CASE("init_gp_params argument checks") {
  Fixture fx;
  GpHyper wrong = fx.hp;
  wrong.heads = 3;
  CHECK_THROWS_AS(init_gp_params(fx.inducing, fx.p, fx.km, wrong), ParameterError);
  wrong = fx.hp;
  wrong.kernel_dim = 5;
  CHECK_THROWS_AS(init_gp_params(fx.inducing, fx.p, fx.km, wrong), ParameterError);
  Dataset empty = fx.inducing;
  empty.instances.clear();
  empty.labels.clear();
  CHECK_THROWS_AS(init_gp_params(empty, fx.p, fx.km, fx.hp), ParameterError);
}

TEST_CASE("forward_gp agrees with the explicit posterior on mapped rows") {
  Fixture fx;
  const InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);
  std::vector<Tensor> queries;
  for (int q = 0; q < 6; ++q) queries.push_back(Tensor({3}, oracle::random_vector(3, fx.rng)));
  const auto posts = forward_gp(queries, store, fx.km, fx.hp);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t l = 0; l < 2; ++l) {
      std::vector<Vector> rows;
      Vector v;
      for (std::size_t i = 0; i < 30; ++i) {
        rows.push_back(oracle::naive_mapper(fx.km, fx.inducing.instances[i], l));
        Tensor h = fx.inducing.instances[i];
        for (const auto& layer : fx.p.layers) h = oracle::naive_layer(layer, h);
        v.push_back(h.data[l]);
      }
      const auto want = oracle::dense_posterior(rows_of(rows), v,
                                                oracle::naive_mapper(fx.km, queries[q], l), 0.05);
      CHECK(posts[q].mean[l] == doctest::Approx(want.mean).epsilon(1e-9));
      CHECK(std::abs(posts[q].cov[l] - want.cov) < 1e-9);
    }
    const GpPosterior single = forward_gp(queries[q], store, fx.km, fx.hp);
    CHECK(single.mean == posts[q].mean);
  }
}

TEST_CASE("forward_gp rejects a mismatched mapper") {
  Fixture fx;
  const InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);
  Rng init(1);
  const KernelMapper other = make_mapper({3}, {}, {LayerSpec::dense(3, 4, Activation::identity())},
                                         3, 0.1, init);
  CHECK_THROWS_AS(forward_gp(fx.inducing.instances[0], store, other, fx.hp), StateError);
}

TEST_CASE("inducing store index bookkeeping") {
  Fixture fx;
  InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);
  store.index_map[3] = 100;
  CHECK_THROWS_AS(store.check(), StateError);
  store.reindex();
  CHECK(store.row_of(100) == 3);
  CHECK_THROWS_AS(store.row_of(3), LookupError);
  store.index_map[4] = 100;
  CHECK_THROWS_AS(store.reindex(), StateError);
}

TEST_CASE("update_inducing_rows") {
  Fixture fx;
  InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);

  SUBCASE("re-mapping with an unchanged mapper is idempotent") {
    const InducingStore before = store;
    const std::vector<std::size_t> idx{0, 5, 29};
    const std::vector<Tensor> xs{fx.inducing.instances[0], fx.inducing.instances[5],
                                 fx.inducing.instances[29]};
    update_inducing_rows(store, fx.km, idx, xs);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(store.U[l] == before.U[l]);
      for (std::size_t k = 0; k < 16; ++k)
        CHECK(std::abs(store.gram[l].gram.data()[k] - before.gram[l].gram.data()[k]) < 1e-13);
    }
  }

  SUBCASE("fifty updates track a full rebuild") {
    std::uniform_int_distribution<std::size_t> pick(0, 29);
    for (int k = 0; k < 50; ++k) {
      for (Param* prm : fx.km.parameters())
        for (double& w : prm->value.data) w += 0.01 * (pick(fx.rng) / 29.0 - 0.5);
      const std::size_t i = pick(fx.rng);
      const std::vector<std::size_t> idx{i};
      const std::vector<Tensor> xs{fx.inducing.instances[i]};
      update_inducing_rows(store, fx.km, idx, xs);
    }
    // bring every row up to date, then compare with a from-scratch rebuild
    std::vector<std::size_t> idx(30);
    for (std::size_t i = 0; i < 30; ++i) idx[i] = i;
    update_inducing_rows(store, fx.km, idx, fx.inducing.instances);
    InducingStore fresh = store;
    rebuild_inducing_rows(fresh, fx.km, fx.inducing);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(store.U[l] == fresh.U[l]);
      for (std::size_t k = 0; k < 16; ++k)
        CHECK(std::abs(store.gram[l].gram.data()[k] - fresh.gram[l].gram.data()[k]) < 1e-11);
    }
    store.check();
  }

  const std::vector<std::size_t> bad{99};
  const std::vector<Tensor> one{fx.inducing.instances[0]};
  CHECK_THROWS_AS(update_inducing_rows(store, fx.km, bad, one), LookupError);
}

TEST_CASE("forward_gp_training values match forward_gp when rows are unchanged") {
  Fixture fx;
  const InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);
  const std::vector<Tensor> xs{Tensor({3}, oracle::random_vector(3, fx.rng)),
                               fx.inducing.instances[7]};
  const std::vector<std::size_t> idx{2, 7, 11};
  const std::vector<Tensor> xt{fx.inducing.instances[2], fx.inducing.instances[7],
                               fx.inducing.instances[11]};
  Tape t;
  const auto nodes = forward_gp_training(t, fx.km, store, fx.hp, xs, idx, xt);
  const auto want = forward_gp(xs, store, fx.km, fx.hp);
  for (std::size_t q = 0; q < 2; ++q)
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(t.value(nodes[q][l]).data[0] == doctest::Approx(want[q].mean[l]).epsilon(1e-10));
      CHECK(std::abs(t.value(nodes[q][l]).data[1] - want[q].cov[l]) < 1e-10);
    }

  const std::vector<std::size_t> dup{2, 2};
  const std::vector<Tensor> xt2{fx.inducing.instances[2], fx.inducing.instances[2]};
  Tape t2;
  CHECK_THROWS_AS(forward_gp_training(t2, fx.km, store, fx.hp, xs, dup, xt2), ParameterError);
}

TEST_CASE("forward_gp_training gradients match central differences") {
  Fixture fx;
  const InducingStore store = init_gp_params(fx.inducing, fx.p, fx.km, fx.hp);
  // move the mapper so substituted rows differ from the stored ones
  for (Param* prm : fx.km.parameters())
    for (double& w : prm->value.data) w *= 1.1;
  const std::vector<Tensor> xs{Tensor({3}, oracle::random_vector(3, fx.rng)),
                               Tensor({3}, oracle::random_vector(3, fx.rng))};
  const std::vector<std::size_t> idx{1, 4};
  const std::vector<Tensor> xt{fx.inducing.instances[1], fx.inducing.instances[4]};
  const auto build = [&](Tape& t) {
    const auto nodes = forward_gp_training(t, fx.km, store, fx.hp, xs, idx, xt);
    std::vector<NodeId> terms;
    for (const auto& per : nodes)
      for (NodeId n : per) {
        terms.push_back(ops::element(t, n, 0));
        terms.push_back(ops::scale(t, ops::element(t, n, 1), 3.0));
      }
    return ops::sum_nodes(t, terms);
  };
  CHECK(oracle::worst_grad_error(fx.km.parameters(), build) < 1e-5);
}
