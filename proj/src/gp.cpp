#include "gpex/gp.hpp"

#include <cmath>
#include <memory>
#include <set>
#include <string>

#include "gpex/errors.hpp"

namespace gpex {

void GpHyper::validate() const {
  if (!(sigma_gp2 > 0.0) || !std::isfinite(sigma_gp2)) {
    throw ParameterError("sigma_gp2 must be positive");
  }
  if (!(sigma_g2 >= 0.0) || !std::isfinite(sigma_g2)) {
    throw ParameterError("sigma_g2 must be non-negative");
  }
  if (kernel_dim == 0 || heads == 0 || inducing == 0) {
    throw ParameterError("kernel_dim, heads and inducing must be at least 1");
  }
}

std::size_t InducingStore::row_of(std::size_t dataset_index) const {
  const auto it = rows_.find(dataset_index);
  if (it == rows_.end()) {
    throw LookupError("dataset index " + std::to_string(dataset_index) +
                      " is not in the inducing store");
  }
  return it->second;
}

void InducingStore::reindex() {
  rows_.clear();
  for (std::size_t m = 0; m < index_map.size(); ++m) {
    if (!rows_.emplace(index_map[m], m).second) {
      throw StateError("inducing store lists dataset index " + std::to_string(index_map[m]) +
                       " twice");
    }
  }
}

void InducingStore::check() const {
  if (V.size() != U.size() || gram.size() != U.size()) {
    throw StateError("inducing store: head counts of U, V and Gram caches differ");
  }
  if (rows_.size() != index_map.size()) {
    throw StateError("inducing store: index lookup is stale");
  }
  for (std::size_t m = 0; m < index_map.size(); ++m) {
    const auto it = rows_.find(index_map[m]);
    if (it == rows_.end() || it->second != m) {
      throw StateError("inducing store: index lookup is stale");
    }
  }
  for (std::size_t h = 0; h < U.size(); ++h) {
    if (U[h].rows() != index_map.size() || V[h].size() != index_map.size()) {
      throw StateError("inducing store: head " + std::to_string(h) + " has " +
                       std::to_string(U[h].rows()) + " rows for " +
                       std::to_string(index_map.size()) + " inducing points");
    }
    if (U[h].cols() != dim()) {
      throw StateError("inducing store: heads disagree on kernel dimension");
    }
    if (gram[h].dim() != U[h].cols() || gram[h].rows != U[h].rows()) {
      throw StateError("inducing store: Gram cache of head " + std::to_string(h) +
                       " does not match U");
    }
  }
}

double settle_cov(double raw) {
  if (!std::isfinite(raw)) {
    throw NumericalError("posterior variance is not finite");
  }
  if (raw < -kCovRoundoff) {
    throw NumericalError("posterior variance " + std::to_string(raw) + " is negative");
  }
  return raw < 0.0 ? 0.0 : raw;
}

namespace {

Matrix regularized_inverse(Matrix gram, double sigma2) {
  for (std::size_t i = 0; i < gram.rows(); ++i) {
    gram(i, i) += sigma2;
  }
  return cholesky_inverse(cholesky(gram));
}

}  // namespace

HeadPosterior::HeadPosterior(const Matrix& u, const Vector& v, const GramCache& gram,
                             double sigma_gp2)
    : s_inv_(regularized_inverse(gram.gram, sigma_gp2)),
      weights_(posterior_weights(gram, u, v, std::sqrt(sigma_gp2))),
      sigma2_(sigma_gp2) {}

std::pair<double, double> HeadPosterior::evaluate(std::span<const double> u) const {
  // K(u,u) − K(u,Ũ)[K(Ũ,Ũ)+σ²I]⁻¹K(Ũ,u) = σ² uᵀ(ŨᵀŨ+σ²I)⁻¹u
  const double mu = dot(u, weights_);
  const Vector y = matvec(s_inv_, u);
  return {mu, settle_cov(sigma2_ * dot(u, y))};
}

double kernel_similarity(const KernelMapper& km, std::size_t head, const Tensor& x1,
                         const Tensor& x2) {
  const Vector f1 = forward_mapper(km, x1, head);
  const Vector f2 = forward_mapper(km, x2, head);
  return dot(f1, f2);
}

namespace {

void check_compat(const InducingStore& store, const KernelMapper& km, const GpHyper& hp) {
  store.check();
  if (store.heads() != km.heads() || store.dim() != km.kernel_dim) {
    throw StateError("inducing store (" + std::to_string(store.heads()) + " heads, dim " +
                     std::to_string(store.dim()) + ") does not match the kernel mapper (" +
                     std::to_string(km.heads()) + " heads, dim " +
                     std::to_string(km.kernel_dim) + ")");
  }
  if (!(hp.sigma_gp2 > 0.0)) {
    throw ParameterError("sigma_gp2 must be positive");
  }
}

}  // namespace

std::vector<GpPosterior> forward_gp(std::span<const Tensor> xs, const InducingStore& store,
                                    const KernelMapper& km, const GpHyper& hp) {
  check_compat(store, km, hp);
  std::vector<HeadPosterior> heads;
  heads.reserve(store.heads());
  for (std::size_t h = 0; h < store.heads(); ++h) {
    heads.emplace_back(store.U[h], store.V[h], store.gram[h], hp.sigma_gp2);
  }
  std::vector<GpPosterior> out;
  out.reserve(xs.size());
  for (const Tensor& x : xs) {
    const auto us = forward_mapper_all(km, x);
    GpPosterior post{Vector(heads.size()), Vector(heads.size())};
    for (std::size_t h = 0; h < heads.size(); ++h) {
      std::tie(post.mean[h], post.cov[h]) = heads[h].evaluate(us[h]);
    }
    out.push_back(std::move(post));
  }
  return out;
}

GpPosterior forward_gp(const Tensor& x, const InducingStore& store, const KernelMapper& km,
                       const GpHyper& hp) {
  return forward_gp(std::span<const Tensor>(&x, 1), store, km, hp).front();
}

namespace {

/// One head's posterior with some rows of U swapped for tape nodes.
struct WorkingHead {
  Matrix s_inv;
  Vector weights;
  Vector row_targets;  // V entries of the substituted rows
  double sigma2 = 0.0;
};

std::shared_ptr<const WorkingHead> make_working_head(const Tape& t, const InducingStore& store,
                                                     std::size_t head,
                                                     std::span<const std::size_t> rows,
                                                     std::span<const NodeId> row_nodes,
                                                     double sigma2) {
  const Matrix& u = store.U[head];
  const Vector& v = store.V[head];
  Matrix g = store.gram[head].gram;
  Vector c = matvec_transposed(u, v);
  auto wh = std::make_shared<WorkingHead>();
  wh->sigma2 = sigma2;
  const std::size_t d = u.cols();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto old_row = u.row(rows[k]);
    const auto& fresh = t.value(row_nodes[k]).data;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        g(i, j) += fresh[i] * fresh[j] - old_row[i] * old_row[j];
      }
      c[i] += (fresh[i] - old_row[i]) * v[rows[k]];
    }
    wh->row_targets.push_back(v[rows[k]]);
  }
  wh->s_inv = regularized_inverse(std::move(g), sigma2);
  wh->weights = matvec(wh->s_inv, c);
  return wh;
}

NodeId posterior_node(Tape& t, NodeId query, std::span<const NodeId> row_nodes,
                      std::shared_ptr<const WorkingHead> wh) {
  const auto& u = t.value(query).data;
  const double mu = dot(u, wh->weights);
  const Vector y = matvec(wh->s_inv, u);
  const double cov = settle_cov(wh->sigma2 * dot(u, y));
  std::vector<NodeId> parents{query};
  parents.insert(parents.end(), row_nodes.begin(), row_nodes.end());
  return t.push(Tensor::vector({mu, cov}), std::move(parents), [wh](Tape& tp, NodeId self) {
    // With S = ŨᵀŨ + σ²I, w = S⁻¹ŨᵀṼ and y = S⁻¹u:
    //   ∂μ/∂u = w,  ∂cov/∂u = 2σ² y
    //   ∂μ/∂r = ṽ y − (rᵀw) y − (yᵀr) w,  ∂cov/∂r = −2σ² (rᵀy) y   for a row r of Ũ
    const double g_mu = tp.grad(self).data[0];
    const double g_cov = tp.grad(self).data[1];
    if (g_mu == 0.0 && g_cov == 0.0) {
      return;
    }
    const auto& parents = tp.parents(self);
    const NodeId q = parents[0];
    const auto& u = tp.value(q).data;
    const Vector y = matvec(wh->s_inv, u);
    const Vector& w = wh->weights;
    const double s2 = wh->sigma2;
    auto& gu = tp.grad(q).data;
    for (std::size_t i = 0; i < u.size(); ++i) {
      gu[i] += g_mu * w[i] + g_cov * 2.0 * s2 * y[i];
    }
    for (std::size_t k = 1; k < parents.size(); ++k) {
      const auto& r = tp.value(parents[k]).data;
      const double rw = dot(r, w);
      const double ry = dot(r, y);
      const double vk = wh->row_targets[k - 1];
      auto& gr = tp.grad(parents[k]).data;
      for (std::size_t i = 0; i < r.size(); ++i) {
        gr[i] += g_mu * ((vk - rw) * y[i] - ry * w[i]) - g_cov * 2.0 * s2 * ry * y[i];
      }
    }
  });
}

}  // namespace

std::vector<std::vector<NodeId>> forward_gp_training(Tape& t, KernelMapper& km,
                                                     const InducingStore& store,
                                                     const GpHyper& hp,
                                                     std::span<const Tensor> xs,
                                                     std::span<const std::size_t> xt_indices,
                                                     std::span<const Tensor> xt) {
  check_compat(store, km, hp);
  if (xt_indices.size() != xt.size()) {
    throw ShapeError("forward_gp_training: " + std::to_string(xt_indices.size()) +
                     " inducing indices for " + std::to_string(xt.size()) + " instances");
  }
  std::vector<std::size_t> rows;
  std::set<std::size_t> seen;
  for (std::size_t idx : xt_indices) {
    if (!seen.insert(idx).second) {
      throw ParameterError("forward_gp_training: inducing index " + std::to_string(idx) +
                           " appears twice in the batch");
    }
    rows.push_back(store.row_of(idx));
  }

  const std::size_t heads = store.heads();
  std::vector<std::vector<NodeId>> row_nodes(heads);
  for (const Tensor& x : xt) {
    const auto fs = forward_mapper_all(t, km, t.constant(x));
    for (std::size_t h = 0; h < heads; ++h) {
      row_nodes[h].push_back(fs[h]);
    }
  }
  std::vector<std::shared_ptr<const WorkingHead>> working;
  for (std::size_t h = 0; h < heads; ++h) {
    working.push_back(make_working_head(t, store, h, rows, row_nodes[h], hp.sigma_gp2));
  }

  std::vector<std::vector<NodeId>> out;
  out.reserve(xs.size());
  for (const Tensor& x : xs) {
    const auto us = forward_mapper_all(t, km, t.constant(x));
    std::vector<NodeId> per_head;
    for (std::size_t h = 0; h < heads; ++h) {
      per_head.push_back(posterior_node(t, us[h], row_nodes[h], working[h]));
    }
    out.push_back(std::move(per_head));
  }
  return out;
}

InducingStore init_gp_params(const Dataset& inducing, const Predictor& p, const KernelMapper& km,
                             const GpHyper& hp) {
  if (inducing.size() == 0) {
    throw ParameterError("init_gp_params: empty inducing set");
  }
  const std::size_t heads = km.heads();
  if (p.heads() != heads) {
    throw ShapeError("predictor has " + std::to_string(p.heads()) + " heads, mapper has " +
                     std::to_string(heads));
  }
  if (hp.heads != 0 && hp.heads != heads) {
    throw ParameterError("hyperparameters specify " + std::to_string(hp.heads) + " heads");
  }
  if (hp.kernel_dim != 0 && hp.kernel_dim != km.kernel_dim) {
    throw ParameterError("hyperparameters specify kernel dimension " +
                         std::to_string(hp.kernel_dim));
  }
  const std::size_t m = inducing.size();
  const std::size_t d = km.kernel_dim;
  InducingStore store;
  store.U.assign(heads, Matrix(m, d));
  store.V.assign(heads, Vector(m));
  for (std::size_t i = 0; i < m; ++i) {
    const Tensor& x = inducing.instances[i];
    const Vector g = forward_predictor(p, x);
    std::vector<Vector> fs;
    try {
      fs = forward_mapper_all(km, x);
    } catch (const DegenerateInputError& e) {
      throw DegenerateInputError("inducing instance " + std::to_string(i) + ": " + e.what());
    }
    for (std::size_t h = 0; h < heads; ++h) {
      store.V[h][i] = g[h];
      std::copy(fs[h].begin(), fs[h].end(), store.U[h].row(i).begin());
    }
    store.index_map.push_back(i);
  }
  for (std::size_t h = 0; h < heads; ++h) {
    store.gram.push_back(gram_init(store.U[h]));
  }
  store.reindex();
  return store;
}

void update_inducing_rows(InducingStore& store, const KernelMapper& km,
                          std::span<const std::size_t> dataset_indices,
                          std::span<const Tensor> instances) {
  if (dataset_indices.size() != instances.size()) {
    throw ShapeError("update_inducing_rows: index and instance counts differ");
  }
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const std::size_t row = store.row_of(dataset_indices[k]);
    const auto fs = forward_mapper_all(km, instances[k]);
    for (std::size_t h = 0; h < store.heads(); ++h) {
      auto dst = store.U[h].row(row);
      const Vector old_row(dst.begin(), dst.end());
      std::copy(fs[h].begin(), fs[h].end(), dst.begin());
      gram_update_row(store.gram[h], old_row, fs[h]);
      if (store.gram[h].needs_rebuild()) {
        store.gram[h] = gram_init(store.U[h]);
      }
    }
  }
}

void rebuild_inducing_rows(InducingStore& store, const KernelMapper& km, const Dataset& inducing) {
  for (std::size_t m = 0; m < store.size(); ++m) {
    const auto fs = forward_mapper_all(km, inducing.instances.at(store.index_map[m]));
    for (std::size_t h = 0; h < store.heads(); ++h) {
      std::copy(fs[h].begin(), fs[h].end(), store.U[h].row(m).begin());
    }
  }
  for (std::size_t h = 0; h < store.heads(); ++h) {
    store.gram[h] = gram_init(store.U[h]);
  }
}

}  // namespace gpex
