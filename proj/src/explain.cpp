#include "gpex/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gpex/errors.hpp"

namespace gpex {

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// c(i,j) = Σ_c Λ¹_c Λ²_c (z_ijc / HW) a_partner,c / (‖a‖‖a_partner‖)
Matrix side_map(const MapperTrace& self, const MapperTrace& partner, double slope) {
  const auto& z = self.z;
  const std::size_t channels = z.shape[0];
  const std::size_t h = z.shape[1];
  const std::size_t w = z.shape[2];
  const double cells = static_cast<double>(h * w);
  const double scale = norm2(self.a) * norm2(partner.a);
  Vector coef(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double l1 = self.b[c] > 0.0 ? 1.0 : slope;
    const double l2 = partner.b[c] > 0.0 ? 1.0 : slope;
    coef[c] = l1 * l2 * partner.a[c] / scale;
  }
  Matrix out(h, w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out(i, j) += coef[c] * (z.data[(c * h + i) * w + j] / cells);
      }
    }
  }
  return out;
}

}  // namespace

ContributionMaps contribution_maps(const Tensor& x1, const Tensor& x2, const KernelMapper& km,
                                   std::size_t head) {
  if (!km.spatial()) {
    throw CapabilityError("contribution maps need a mapper whose branches end in spatial maps");
  }
  const MapperTrace t1 = trace_mapper(km, x1, head);
  const MapperTrace t2 = trace_mapper(km, x2, head);
  if (t1.z.rank() != 3 || t2.z.rank() != 3) {
    throw CapabilityError("contribution maps need C×H×W branch outputs");
  }
  ContributionMaps out;
  out.on_x1 = side_map(t1, t2, km.leaky_slope);
  out.on_x2 = side_map(t2, t1, km.leaky_slope);
  out.total = dot(t1.f, t2.f);
  return out;
}

ExplanationReport knn_explain(const Tensor& x_test, const InducingStore& store,
                              const KernelMapper& km, const Predictor& p, std::size_t k) {
  store.check();
  if (k == 0 || k > store.size()) {
    throw ParameterError("k must lie in [1, " + std::to_string(store.size()) + "], got " +
                         std::to_string(k));
  }
  ExplanationReport rep;
  rep.head = argmax(forward_predictor(p, x_test));
  const Vector u = forward_mapper(km, x_test, rep.head);
  const Matrix& rows = store.U[rep.head];
  Vector sims(rows.rows());
  for (std::size_t m = 0; m < rows.rows(); ++m) {
    sims[m] = dot(u, rows.row(m));
  }
  const auto order = argsort_descending(sims);
  for (std::size_t r = 0; r < k; ++r) {
    rep.neighbor_indices.push_back(store.index_map[order[r]]);
    rep.similarities.push_back(sims[order[r]]);
  }
  return rep;
}

void attach_contribution_maps(ExplanationReport& report, const Tensor& x_test,
                              const Dataset& inducing, const KernelMapper& km) {
  report.contrib_on_neighbor.clear();
  report.contrib_on_test.clear();
  for (std::size_t idx : report.neighbor_indices) {
    auto maps = contribution_maps(x_test, inducing.instances.at(idx), km, report.head);
    report.contrib_on_test.push_back(std::move(maps.on_x1));
    report.contrib_on_neighbor.push_back(std::move(maps.on_x2));
  }
}

FaithfulnessReport faithfulness(const Predictor& p, const InducingStore& store,
                                const KernelMapper& km, const GpHyper& hp,
                                const Dataset& probe) {
  validate(probe);
  FaithfulnessReport rep;
  rep.n_probe = probe.size();
  rep.pearson = probe_correlations(p, store, km, hp, probe);
  const auto posts = forward_gp(probe.instances, store, km, hp);
  std::size_t ann_ok = 0;
  std::size_t gp_ok = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    ann_ok += argmax(forward_predictor(p, probe.instances[i])) == probe.labels[i];
    gp_ok += argmax(posts[i].mean) == probe.labels[i];
  }
  rep.ann_accuracy = static_cast<double>(ann_ok) / static_cast<double>(probe.size());
  rep.gp_accuracy = static_cast<double>(gp_ok) / static_cast<double>(probe.size());
  return rep;
}

std::pair<Dataset, std::vector<bool>> corrupt_labels(const Dataset& ds, double fraction,
                                                     std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ParameterError("corruption fraction must lie in [0, 1]");
  }
  if (ds.classes < 2) {
    throw ParameterError("label corruption needs at least two classes");
  }
  Rng rng(seed);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto count =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  std::uniform_int_distribution<std::size_t> shift(1, ds.classes - 1);
  Dataset out = ds;
  std::vector<bool> mask(ds.size(), false);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t i = idx[r];
    out.labels[i] = (ds.labels[i] + shift(rng)) % ds.classes;
    mask[i] = true;
  }
  return {std::move(out), std::move(mask)};
}

std::vector<std::size_t> discovery_curve(const std::vector<bool>& corrupted_mask,
                                         std::span<const std::size_t> order) {
  std::vector<std::size_t> curve;
  curve.reserve(order.size());
  std::size_t found = 0;
  for (std::size_t i : order) {
    found += corrupted_mask[i] ? 1 : 0;
    curve.push_back(found);
  }
  return curve;
}

DebugSession random_debug_order(const std::vector<bool>& corrupted_mask, std::uint64_t seed) {
  DebugSession s;
  s.corrupted_mask.assign(corrupted_mask.begin(), corrupted_mask.end());
  s.presentation_order.resize(corrupted_mask.size());
  std::iota(s.presentation_order.begin(), s.presentation_order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(s.presentation_order.begin(), s.presentation_order.end(), rng);
  s.discovery_curve = discovery_curve(corrupted_mask, s.presentation_order);
  return s;
}

DebugSession dataset_debug(const Dataset& train, const std::vector<bool>& corrupted_mask,
                           const Dataset& test, const Predictor& p, const KernelMapper& km,
                           std::uint64_t seed) {
  if (corrupted_mask.size() != train.size()) {
    throw ShapeError("corruption mask has " + std::to_string(corrupted_mask.size()) +
                     " entries for " + std::to_string(train.size()) + " training instances");
  }
  const std::size_t n = train.size();
  const std::size_t heads = km.heads();
  std::vector<Matrix> reps(heads, Matrix(n, km.kernel_dim));
  for (std::size_t i = 0; i < n; ++i) {
    const auto fs = forward_mapper_all(km, train.instances[i]);
    for (std::size_t h = 0; h < heads; ++h) {
      std::copy(fs[h].begin(), fs[h].end(), reps[h].row(i).begin());
    }
  }

  struct Driver {
    std::size_t head;
    Vector u;
  };
  std::vector<Driver> drivers;
  for (std::size_t t = 0; t < test.size(); ++t) {
    const std::size_t pred = argmax(forward_predictor(p, test.instances[t]));
    if (pred != test.labels[t]) {
      drivers.push_back({pred, forward_mapper(km, test.instances[t], pred)});
    }
  }

  DebugSession s;
  s.corrupted_mask.assign(corrupted_mask.begin(), corrupted_mask.end());
  std::vector<bool> shown(n, false);
  for (std::size_t step = 0; !drivers.empty() && step < n; ++step) {
    const Driver& d = drivers[step % drivers.size()];
    std::size_t best = n;
    double best_sim = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (shown[i]) continue;
      const double sim = dot(d.u, reps[d.head].row(i));
      if (best == n || sim > best_sim) {
        best = i;
        best_sim = sim;
      }
    }
    shown[best] = true;
    s.presentation_order.push_back(best);
  }
  if (s.presentation_order.size() < n) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (!shown[i]) rest.push_back(i);
    }
    Rng rng(seed);
    std::shuffle(rest.begin(), rest.end(), rng);
    s.presentation_order.insert(s.presentation_order.end(), rest.begin(), rest.end());
  }
  s.discovery_curve = discovery_curve(corrupted_mask, s.presentation_order);
  return s;
}

}  // namespace gpex
