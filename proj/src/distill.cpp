#include "gpex/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>

#include "gpex/errors.hpp"

namespace gpex {

void DistillConfig::validate() const {
  if (train_batch == 0 || inducing_batch == 0 || refresh_batch == 0) {
    throw ParameterError("distill batch sizes must be at least 1");
  }
  if (!(lr > 0.0)) {
    throw ParameterError("distill learning rate must be positive");
  }
  if (!(mix_low < mix_high)) {
    throw ParameterError("mixing range must have low < high");
  }
  if (!(eps_cov > 0.0)) {
    throw ParameterError("eps_cov must be positive");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw ParameterError("lr_decay must lie in (0, 1]");
  }
}

namespace {

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string(what) + " is not finite");
  }
}

void check_heads(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": " + std::to_string(got) + " values for " +
                     std::to_string(want) + " heads");
  }
}

}  // namespace

std::string TrainTrace::to_csv(std::size_t heads) const {
  std::string out = "iter,loss";
  for (std::size_t h = 0; h < heads; ++h) {
    out += ",r_head_" + std::to_string(h);
  }
  out += '\n';
  std::map<std::size_t, const ProbeRecord*> by_iter;
  for (const auto& pr : probes) {
    by_iter[pr.iter] = &pr;
  }
  for (std::size_t i = 0; i < loss.size(); ++i) {
    out += std::to_string(i + 1) + "," + fmt_real(loss[i]);
    const auto it = by_iter.find(i + 1);
    for (std::size_t h = 0; h < heads; ++h) {
      out += ',';
      if (it != by_iter.end() && h < it->second->r.size() && it->second->r[h]) {
        out += fmt_real(*it->second->r[h]);
      }
    }
    out += '\n';
  }
  return out;
}

double gp_loss(const GpPosterior& post, std::span<const double> g, const GpHyper& hp,
               double eps_cov) {
  check_heads(post.mean.size(), g.size(), "gp_loss");
  check_heads(post.cov.size(), g.size(), "gp_loss");
  double loss = 0.0;
  for (std::size_t h = 0; h < g.size(); ++h) {
    require_finite(post.mean[h], "posterior mean");
    require_finite(post.cov[h], "posterior variance");
    require_finite(g[h], "predictor output");
    const double c = std::max(post.cov[h], eps_cov);
    const double d = post.mean[h] - g[h];
    loss += (d * d + hp.sigma_g2) / c + std::log(c);
  }
  return loss;
}

NodeId gp_loss(Tape& t, std::span<const NodeId> post, std::span<const double> g,
               const GpHyper& hp, double eps_cov) {
  check_heads(post.size(), g.size(), "gp_loss");
  std::vector<NodeId> terms;
  for (std::size_t h = 0; h < g.size(); ++h) {
    require_finite(t.value(post[h]).data[0], "posterior mean");
    require_finite(t.value(post[h]).data[1], "posterior variance");
    require_finite(g[h], "predictor output");
    const NodeId mu = ops::element(t, post[h], 0);
    const NodeId c = ops::floor_at(t, ops::element(t, post[h], 1), eps_cov);
    const NodeId num = ops::add_scalar(t, ops::square(t, ops::add_scalar(t, mu, -g[h])),
                                       hp.sigma_g2);
    terms.push_back(ops::add(t, ops::div(t, num, c), ops::log(t, c)));
  }
  return ops::sum_nodes(t, terms);
}

double ann_elbo_loss(const GpPosterior& post, std::span<const double> g, std::size_t label,
                     const GpHyper& hp, double eps_cov) {
  (void)hp;
  check_heads(post.mean.size(), g.size(), "ann_elbo_loss");
  check_heads(post.cov.size(), g.size(), "ann_elbo_loss");
  if (label >= g.size()) {
    throw ParameterError("label " + std::to_string(label) + " is not below " +
                         std::to_string(g.size()) + " heads");
  }
  double loss = 0.0;
  double gmax = g[0];
  for (std::size_t h = 0; h < g.size(); ++h) {
    require_finite(post.mean[h], "posterior mean");
    require_finite(post.cov[h], "posterior variance");
    require_finite(g[h], "predictor output");
    const double d = post.mean[h] - g[h];
    loss += 0.5 * d * d / std::max(post.cov[h], eps_cov);
    gmax = std::max(gmax, g[h]);
  }
  double z = 0.0;
  for (double v : g) {
    z += std::exp(v - gmax);
  }
  return loss + gmax + std::log(z) - g[label];
}

NodeId ann_elbo_loss(Tape& t, const GpPosterior& post, NodeId g, std::size_t label,
                     const GpHyper& hp, double eps_cov) {
  (void)hp;
  const std::size_t heads = t.value(g).size();
  check_heads(post.mean.size(), heads, "ann_elbo_loss");
  check_heads(post.cov.size(), heads, "ann_elbo_loss");
  if (label >= heads) {
    throw ParameterError("label " + std::to_string(label) + " is not below " +
                         std::to_string(heads) + " heads");
  }
  std::vector<NodeId> terms;
  for (std::size_t h = 0; h < heads; ++h) {
    require_finite(post.mean[h], "posterior mean");
    require_finite(post.cov[h], "posterior variance");
    const NodeId d = ops::add_scalar(t, ops::element(t, g, h), -post.mean[h]);
    terms.push_back(ops::scale(t, ops::square(t, d), 0.5 / std::max(post.cov[h], eps_cov)));
  }
  terms.push_back(ops::softmax_cross_entropy(t, g, label));
  return ops::sum_nodes(t, terms);
}

Mixed mix_instances(const Tensor& xi, const Tensor& xj, Rng& rng, double low, double high) {
  if (xi.shape != xj.shape) {
    throw ShapeError("mix_instances: shapes " + shape_string(xi.shape) + " and " +
                     shape_string(xj.shape));
  }
  std::uniform_real_distribution<double> dist(low, high);
  const double lambda = dist(rng);
  return {mix(xi, xj, lambda), lambda};
}

double kern_mapping_loss(const std::vector<Tensor>& xs, std::span<const std::size_t> xt_indices,
                         const std::vector<Tensor>& xt, const InducingStore& store,
                         KernelMapper& km, const Predictor& p, const GpHyper& hp,
                         double eps_cov, bool with_grad) {
  if (xs.empty()) {
    throw ParameterError("kern_mapping_loss: empty query batch");
  }
  Tape t;
  const auto posts = forward_gp_training(t, km, store, hp, xs, xt_indices, xt);
  std::vector<NodeId> terms;
  terms.reserve(xs.size());
  for (std::size_t q = 0; q < xs.size(); ++q) {
    const Vector g = forward_predictor(p, xs[q]);
    terms.push_back(gp_loss(t, posts[q], g, hp, eps_cov));
  }
  const NodeId loss =
      ops::scale(t, ops::sum_nodes(t, terms), 1.0 / static_cast<double>(xs.size()));
  const double value = t.value(loss).data[0];
  require_finite(value, "distillation loss");
  if (with_grad) {
    t.backward(loss);
  }
  return value;
}

double optim_kern_mappings(const std::vector<Tensor>& xs, std::span<const std::size_t> xt_indices,
                           const std::vector<Tensor>& xt, const InducingStore& store,
                           KernelMapper& km, const Predictor& p, const GpHyper& hp,
                           AdamState& opt, const AdamConfig& adam, double eps_cov) {
  const auto params = km.parameters();
  zero_grads(params);
  const double loss = kern_mapping_loss(xs, xt_indices, xt, store, km, p, hp, eps_cov, true);
  adam_step(params, opt, adam);
  return loss;
}

HeadCorrelations probe_correlations(const Predictor& p, const InducingStore& store,
                                    const KernelMapper& km, const GpHyper& hp,
                                    const Dataset& probe) {
  const std::size_t heads = store.heads();
  std::vector<Vector> g(heads), mu(heads);
  const auto posts = forward_gp(probe.instances, store, km, hp);
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const Vector out = forward_predictor(p, probe.instances[i]);
    for (std::size_t h = 0; h < heads; ++h) {
      g[h].push_back(out[h]);
      mu[h].push_back(posts[i].mean[h]);
    }
  }
  HeadCorrelations r(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    try {
      r[h] = pearson(g[h], mu[h]);
    } catch (const DegenerateInputError&) {
      r[h] = std::nullopt;
    }
  }
  return r;
}

namespace {

std::vector<std::size_t> draw_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> out;
  std::sample(all.begin(), all.end(), std::back_inserter(out), std::min(n, k), rng);
  return out;
}

}  // namespace

DistillResult explain_ann(const Dataset& ds_train, const Dataset& ds_inducing, const Predictor& p,
                          KernelMapper& km, const GpHyper& hp, const DistillConfig& cfg,
                          const DistillHooks& hooks) {
  cfg.validate();
  validate(ds_train);
  validate(ds_inducing);
  DistillResult res;
  res.store = init_gp_params(ds_inducing, p, km, hp);
  InducingStore& store = res.store;
  TrainTrace& trace = res.trace;

  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, ds_train.size() - 1);
  const auto params = km.parameters();
  AdamState opt = make_adam_state(params);
  AdamConfig adam;
  adam.lr = cfg.lr;
  const auto start = std::chrono::steady_clock::now();

  auto flush = [&](std::size_t iter) {
    if (hooks.checkpoint) {
      hooks.checkpoint(iter, km, store, trace, rng);
    }
  };

  std::size_t iter = 0;
  try {
    for (iter = 1; iter <= cfg.max_iter; ++iter) {
      if (cfg.lr_decay_every > 0 && iter > 1 && (iter - 1) % cfg.lr_decay_every == 0) {
        adam.lr *= cfg.lr_decay;
      }
      std::vector<Tensor> xs;
      xs.reserve(cfg.train_batch);
      for (std::size_t b = 0; b < cfg.train_batch; ++b) {
        const Tensor& xi = ds_train.instances[pick(rng)];
        if (cfg.mixing) {
          const Tensor& xj = ds_train.instances[pick(rng)];
          xs.push_back(mix_instances(xi, xj, rng, cfg.mix_low, cfg.mix_high).x);
        } else {
          xs.push_back(xi);
        }
      }
      const auto grad_rows = draw_distinct(ds_inducing.size(), cfg.inducing_batch, rng);
      std::vector<std::size_t> grad_idx;
      std::vector<Tensor> grad_x;
      for (std::size_t r : grad_rows) {
        grad_idx.push_back(store.index_map[r]);
        grad_x.push_back(ds_inducing.instances[store.index_map[r]]);
      }
      const double loss =
          optim_kern_mappings(xs, grad_idx, grad_x, store, km, p, hp, opt, adam, cfg.eps_cov);

      const auto refresh_rows = draw_distinct(ds_inducing.size(), cfg.refresh_batch, rng);
      std::vector<std::size_t> ref_idx;
      std::vector<Tensor> ref_x;
      for (std::size_t r : refresh_rows) {
        ref_idx.push_back(store.index_map[r]);
        ref_x.push_back(ds_inducing.instances[store.index_map[r]]);
      }
      update_inducing_rows(store, km, ref_idx, ref_x);

      trace.loss.push_back(loss);
      trace.seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      const bool last = iter == cfg.max_iter;
      if (last && cfg.final_refresh) {
        rebuild_inducing_rows(store, km, ds_inducing);
      }
      if (hooks.probe != nullptr &&
          (last || (cfg.probe_every > 0 && iter % cfg.probe_every == 0))) {
        trace.probes.push_back({iter, probe_correlations(p, store, km, hp, *hooks.probe)});
      }
      if (last || (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0)) {
        flush(iter);
      }
    }
  } catch (...) {
    flush(iter - 1);
    throw;
  }
  if (cfg.max_iter == 0) {
    flush(0);
  }
  return res;
}

}  // namespace gpex
