#include "gpex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpex/errors.hpp"

namespace gpex {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finaliser over the pair
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ull + tag + 0x632be59bd9b4e019ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

Dataset truncated(Dataset ds, std::size_t n) {
  if (n > 0 && n < ds.size()) {
    ds.instances.resize(n);
    ds.labels.resize(n);
  }
  return ds;
}

Activation activation_named(const std::string& name, double slope) {
  Activation a;
  a.kind = activation_kind_from_string(name);
  if (a.kind == Activation::Kind::leaky_relu) a.alpha = slope;
  return a;
}

std::size_t argmax(const Vector& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

Splits build_datasets(const RunConfig& cfg) {
  Splits s;
  if (cfg.data.kind == "idx") {
    s.train = truncated(load_idx_dataset(cfg.data.train_images, cfg.data.train_labels,
                                         cfg.data.classes, "idx-train"),
                        cfg.data.n_train);
    s.test = truncated(load_idx_dataset(cfg.data.test_images, cfg.data.test_labels,
                                        cfg.data.classes, "idx-test"),
                       cfg.data.n_test);
  } else {
    const SyntheticKind kind = synthetic_kind_from_string(cfg.data.kind);
    SyntheticOptions opts;
    opts.classes = cfg.data.classes;
    opts.separation = cfg.data.separation;
    opts.noise = cfg.data.noise;
    s.train = gen_synthetic(kind, cfg.data.n_train, derive_seed(cfg.seed, 1), opts);
    s.test = gen_synthetic(kind, cfg.data.n_test, derive_seed(cfg.seed, 2), opts);
  }
  validate(s.train);
  validate(s.test);
  return s;
}

std::vector<LayerSpec> predictor_specs(const RunConfig& cfg,
                                       const std::vector<std::size_t>& input_shape,
                                       std::size_t classes) {
  const Activation act = activation_named(cfg.predictor.activation, cfg.leaky_slope);
  std::vector<LayerSpec> specs;
  std::vector<std::size_t> shape = input_shape;
  if (shape.size() == 3) {
    for (std::size_t ch : cfg.predictor.conv_channels) {
      specs.push_back(LayerSpec::conv(shape[0], ch, 3, 1, 1, act));
      shape = layer_output_shape(specs.back(), shape);
    }
  }
  std::size_t width = shape_size(shape);
  for (std::size_t h : cfg.predictor.hidden) {
    specs.push_back(LayerSpec::dense(width, h, act));
    width = h;
  }
  specs.push_back(LayerSpec::dense(width, classes, Activation::identity()));
  return specs;
}

double accuracy(const Predictor& p, const Dataset& ds) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ok += argmax(forward_predictor(p, ds.instances[i])) == ds.labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

PredictorFit train_predictor(const RunConfig& cfg, const Dataset& train) {
  validate(train);
  const auto& tc = cfg.predictor_training;
  if (tc.batch == 0 || !(tc.lr > 0.0)) {
    throw ParameterError("predictor training needs batch ≥ 1 and lr > 0");
  }
  Rng rng(derive_seed(cfg.seed, 3));
  PredictorFit fit;
  fit.predictor =
      make_predictor(train.instance_shape, predictor_specs(cfg, train.instance_shape, train.classes),
                     rng);
  const auto params = fit.predictor.parameters();
  AdamState opt = make_adam_state(params);
  AdamConfig adam;
  adam.lr = tc.lr;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      const std::size_t stop = std::min(order.size(), start + tc.batch);
      Tape t;
      std::vector<NodeId> terms;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        const NodeId logits = forward_predictor(t, fit.predictor, t.constant(train.instances[i]));
        terms.push_back(ops::softmax_cross_entropy(t, logits, train.labels[i]));
      }
      const NodeId loss =
          ops::scale(t, ops::sum_nodes(t, terms), 1.0 / static_cast<double>(stop - start));
      epoch_loss += t.value(loss).data[0] * static_cast<double>(stop - start);
      zero_grads(params);
      t.backward(loss);
      adam_step(params, opt, adam);
    }
    fit.final_loss = epoch_loss / static_cast<double>(train.size());
  }
  fit.train_accuracy = accuracy(fit.predictor, train);
  return fit;
}

KernelMapper build_mapper(const RunConfig& cfg, const std::vector<std::size_t>& input_shape,
                          std::size_t heads, std::uint64_t seed) {
  const Activation act = activation_named(cfg.mapper.activation, cfg.leaky_slope);
  std::vector<LayerSpec> backbone;
  std::vector<LayerSpec> branch;
  std::vector<std::size_t> shape = input_shape;
  if (shape.size() == 3) {
    for (std::size_t ch : cfg.mapper.conv_channels) {
      backbone.push_back(LayerSpec::conv(shape[0], ch, 3, 1, 1, act));
      shape = layer_output_shape(backbone.back(), shape);
    }
    branch.push_back(LayerSpec::conv(shape[0], cfg.kernel_dim, 3, 1, 1, Activation::identity()));
  } else {
    std::size_t width = shape_size(shape);
    for (std::size_t h : cfg.mapper.hidden) {
      backbone.push_back(LayerSpec::dense(width, h, act));
      width = h;
    }
    branch.push_back(LayerSpec::dense(width, cfg.kernel_dim, Activation::identity()));
  }
  Rng rng(seed);
  return make_mapper(input_shape, backbone, branch, heads, cfg.leaky_slope, rng);
}

std::vector<std::size_t> choose_inducing(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (count >= n) return all;
  Rng rng(seed);
  std::vector<std::size_t> out;
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

std::vector<std::size_t> inducing_for_split(const RunConfig& cfg, std::size_t n_train,
                                            std::uint64_t split) {
  return choose_inducing(n_train, cfg.gp.inducing, derive_seed(cfg.seed, 1000 + split));
}

DistillRun run_distill(const RunConfig& cfg, const Predictor& p, const Dataset& train,
                       const Dataset* probe, std::uint64_t split, const DistillHooks& hooks) {
  const std::size_t heads = p.heads();
  DistillRun run{build_mapper(cfg, train.instance_shape, heads, derive_seed(cfg.seed, 10 + split)),
                 {},
                 cfg.gp,
                 inducing_for_split(cfg, train.size(), split)};
  run.hp.kernel_dim = cfg.kernel_dim;
  run.hp.heads = heads;
  run.hp.inducing = run.inducing_source.size();
  run.hp.validate();
  const Dataset inducing = train.subset(run.inducing_source);
  DistillConfig dc = cfg.distill;
  dc.seed = derive_seed(cfg.seed, 2000 + split);
  DistillHooks h = hooks;
  h.probe = probe;
  run.result = explain_ann(train, inducing, p, run.mapper, run.hp, dc, h);
  return run;
}

double curve_at(const std::vector<std::size_t>& curve, double fraction) {
  if (curve.empty()) return 0.0;
  auto shown = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(curve.size())));
  shown = std::clamp<std::size_t>(shown, 1, curve.size());
  return static_cast<double>(curve[shown - 1]);
}

DebugRun run_debug(const RunConfig& cfg) {
  const Splits data = build_datasets(cfg);
  auto [train, mask] = corrupt_labels(data.train, cfg.data.corruption, derive_seed(cfg.seed, 4));
  const PredictorFit fit = train_predictor(cfg, train);
  const DistillRun dr = run_distill(cfg, fit.predictor, train, nullptr, 0);
  DebugRun out;
  out.gpex = dataset_debug(train, mask, data.test, fit.predictor, dr.mapper,
                           derive_seed(cfg.seed, 5));
  for (std::size_t r = 0; r < cfg.debug_random_orders; ++r) {
    out.random.push_back(random_debug_order(mask, derive_seed(cfg.seed, 100 + r)));
  }
  out.ann_accuracy = accuracy(fit.predictor, data.test);
  out.corrupted = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  for (std::size_t t = 0; t < data.test.size(); ++t) {
    out.misclassified +=
        argmax(forward_predictor(fit.predictor, data.test.instances[t])) != data.test.labels[t];
  }
  return out;
}

SweepRun run_sweep(const RunConfig& cfg, const Predictor& p, const Dataset& train,
                   const Dataset& probe) {
  if (cfg.sweep_splits == 0 || cfg.sweep_sizes.empty()) {
    throw ParameterError("sweep needs at least one size and one split");
  }
  SweepRun out;
  for (std::size_t m : cfg.sweep_sizes) {
    if (m > train.size()) {
      throw ParameterError("sweep size " + std::to_string(m) + " exceeds the " +
                           std::to_string(train.size()) + " training instances");
    }
    RunConfig c = cfg;
    c.gp.inducing = m;
    Vector means;
    for (std::size_t s = 0; s < cfg.sweep_splits; ++s) {
      const DistillRun dr = run_distill(c, p, train, nullptr, s);
      SweepPoint pt;
      pt.inducing = m;
      pt.split = s;
      pt.r = probe_correlations(p, dr.result.store, dr.mapper, dr.hp, probe);
      double sum = 0.0;
      std::size_t defined = 0;
      for (const auto& r : pt.r) {
        if (r) {
          sum += *r;
          ++defined;
        }
      }
      pt.mean_r = defined ? sum / static_cast<double>(defined) : 0.0;
      means.push_back(pt.mean_r);
      out.points.push_back(std::move(pt));
    }
    SweepSummary sm;
    sm.inducing = m;
    sm.mean = mean(means);
    double ss = 0.0;
    for (double v : means) ss += (v - sm.mean) * (v - sm.mean);
    const double n = static_cast<double>(means.size());
    sm.std_error = means.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    out.summary.push_back(sm);
  }
  return out;
}

}  // namespace gpex
