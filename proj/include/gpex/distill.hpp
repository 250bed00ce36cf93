#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpex/autodiff.hpp"
#include "gpex/data.hpp"
#include "gpex/gp.hpp"
#include "gpex/nn.hpp"
#include "gpex/numkit.hpp"

namespace gpex {

inline constexpr double kDefaultEpsCov = 1e-6;

struct DistillConfig {
  std::size_t max_iter = 3000;
  std::size_t train_batch = 32;
  std::size_t inducing_batch = 32;  // rows substituted into the gradient path
  std::size_t refresh_batch = 32;   // rows re-mapped after each step
  double lr = 1e-4;
  bool mixing = true;
  double mix_low = -1.0;
  double mix_high = 2.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::size_t probe_every = 0;       // 0 probes only after the last iteration
  double eps_cov = kDefaultEpsCov;
  // Step decay: lr ← lr·lr_decay every lr_decay_every iterations. Off by default.
  std::size_t lr_decay_every = 0;
  double lr_decay = 1.0;
  // Re-map every inducing row once training ends, so the returned store
  // matches the final mapper exactly.
  bool final_refresh = false;

  void validate() const;
};

/// Per-head Pearson; nullopt where a head is constant over the probe set.
using HeadCorrelations = std::vector<std::optional<double>>;

struct ProbeRecord {
  std::size_t iter = 0;
  HeadCorrelations r;
};

struct TrainTrace {
  std::vector<double> loss;     // one per executed iteration
  std::vector<double> seconds;  // wall clock since start, one per iteration
  std::vector<ProbeRecord> probes;

  /// `iter,loss,r_head_0..r_head_{L-1}`; r cells are blank off probe iterations.
  std::string to_csv(std::size_t heads) const;
};

/// Σ_ℓ ((μ_ℓ−g_ℓ)² + σ²_g)/max(cov_ℓ,ε) + log max(cov_ℓ,ε).
double gp_loss(const GpPosterior& post, std::span<const double> g, const GpHyper& hp,
               double eps_cov = kDefaultEpsCov);
/// Same loss on a tape; `post[ℓ]` is a [mean, cov] node.
NodeId gp_loss(Tape& t, std::span<const NodeId> post, std::span<const double> g,
               const GpHyper& hp, double eps_cov = kDefaultEpsCov);

/// Σ_ℓ ½(μ_ℓ−g_ℓ)²/max(cov_ℓ,ε) + cross-entropy(softmax(g), label).
double ann_elbo_loss(const GpPosterior& post, std::span<const double> g, std::size_t label,
                     const GpHyper& hp, double eps_cov = kDefaultEpsCov);
/// Same loss with `g` on a tape, so gradients reach the predictor.
NodeId ann_elbo_loss(Tape& t, const GpPosterior& post, NodeId g, std::size_t label,
                     const GpHyper& hp, double eps_cov = kDefaultEpsCov);

struct Mixed {
  Tensor x;
  double lambda = 0.0;
};

/// λ·x_i + (1−λ)·x_j with λ ~ U[low, high].
Mixed mix_instances(const Tensor& xi, const Tensor& xj, Rng& rng, double low = -1.0,
                    double high = 2.0);

/// Batch-mean gp_loss for queries `xs` with inducing rows `xt_indices`
/// substituted by fresh mappings of `xt`. Gradients land in the mapper's
/// Param::grad; the predictor is only evaluated.
double kern_mapping_loss(const std::vector<Tensor>& xs, std::span<const std::size_t> xt_indices,
                         const std::vector<Tensor>& xt, const InducingStore& store,
                         KernelMapper& km, const Predictor& p, const GpHyper& hp,
                         double eps_cov, bool with_grad);

/// One Adam step on the mapper. Returns the loss before the step.
double optim_kern_mappings(const std::vector<Tensor>& xs, std::span<const std::size_t> xt_indices,
                           const std::vector<Tensor>& xt, const InducingStore& store,
                           KernelMapper& km, const Predictor& p, const GpHyper& hp,
                           AdamState& opt, const AdamConfig& adam,
                           double eps_cov = kDefaultEpsCov);

/// Per-head Pearson between predictor outputs and GP means over `probe`.
HeadCorrelations probe_correlations(const Predictor& p, const InducingStore& store,
                                    const KernelMapper& km, const GpHyper& hp,
                                    const Dataset& probe);

struct DistillHooks {
  const Dataset* probe = nullptr;
  /// Called every checkpoint_every iterations, after the last iteration, and
  /// with the last consistent state when an iteration fails.
  std::function<void(std::size_t iter, const KernelMapper&, const InducingStore&,
                     const TrainTrace&, const Rng&)>
      checkpoint;
};

struct DistillResult {
  InducingStore store;
  TrainTrace trace;
};

/// Trains `km` in place against the frozen predictor `p`.
DistillResult explain_ann(const Dataset& ds_train, const Dataset& ds_inducing, const Predictor& p,
                          KernelMapper& km, const GpHyper& hp, const DistillConfig& cfg,
                          const DistillHooks& hooks = {});

}  // namespace gpex
