#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "gpex/autodiff.hpp"
#include "gpex/data.hpp"
#include "gpex/lowrank.hpp"
#include "gpex/nn.hpp"
#include "gpex/numkit.hpp"

namespace gpex {

struct GpHyper {
  double sigma_gp2 = 1e-2;  // observation noise of the posterior
  double sigma_g2 = 0.0;    // variance of q₁ around g_ℓ(x)
  double sigma_phi2 = 1.0;  // variance of q₂; drops out of every implemented loss
  std::size_t kernel_dim = 0;
  std::size_t heads = 0;
  std::size_t inducing = 0;

  void validate() const;
};

/// Per-head inducing representations U[ℓ] (M×D), observed values V[ℓ] (M)
/// and the Gram caches of U[ℓ].
struct InducingStore {
  std::vector<Matrix> U;
  std::vector<Vector> V;
  std::vector<GramCache> gram;
  std::vector<std::size_t> index_map;  // row -> dataset index

  std::size_t heads() const { return U.size(); }
  std::size_t size() const { return index_map.size(); }
  std::size_t dim() const { return U.empty() ? 0 : U.front().cols(); }
  /// Row holding dataset index `dataset_index`; throws LookupError.
  std::size_t row_of(std::size_t dataset_index) const;
  /// Rebuilds the index lookup after index_map changes.
  void reindex();
  /// Throws StateError if shapes or Gram caches disagree with U.
  void check() const;

 private:
  std::map<std::size_t, std::size_t> rows_;
};

struct GpPosterior {
  Vector mean;
  Vector cov;
};

/// Tolerance below zero within which a posterior variance counts as round-off.
inline constexpr double kCovRoundoff = 1e-9;

/// Clamps round-off negatives to zero; throws NumericalError below −1e-9.
double settle_cov(double raw);

/// Posterior of one head against a fixed snapshot of U, V.
class HeadPosterior {
 public:
  HeadPosterior(const Matrix& u, const Vector& v, const GramCache& gram, double sigma_gp2);

  /// (mean, cov) at kernel-space point `u`.
  std::pair<double, double> evaluate(std::span<const double> u) const;
  const Vector& weights() const { return weights_; }

 private:
  Matrix s_inv_;  // (UᵀU + σ²I)⁻¹
  Vector weights_;
  double sigma2_;
};

double kernel_similarity(const KernelMapper& km, std::size_t head, const Tensor& x1,
                         const Tensor& x2);

/// Posterior at each query against one store snapshot.
std::vector<GpPosterior> forward_gp(std::span<const Tensor> xs, const InducingStore& store,
                                    const KernelMapper& km, const GpHyper& hp);
GpPosterior forward_gp(const Tensor& x, const InducingStore& store, const KernelMapper& km,
                       const GpHyper& hp);

/// Training-mode posterior on a tape. Rows of U at `xt_indices` are replaced
/// by fresh mappings of `xt` in a working copy, so the loss reaches the
/// mapper through both the query and those inducing rows. Returns, per query
/// and head, a node holding [mean, cov].
std::vector<std::vector<NodeId>> forward_gp_training(Tape& t, KernelMapper& km,
                                                     const InducingStore& store,
                                                     const GpHyper& hp,
                                                     std::span<const Tensor> xs,
                                                     std::span<const std::size_t> xt_indices,
                                                     std::span<const Tensor> xt);

/// V[ℓ][m] = g_ℓ(x̃_m), U[ℓ] row m = f_ℓ(x̃_m); index_map is 0..M−1.
InducingStore init_gp_params(const Dataset& inducing, const Predictor& p, const KernelMapper& km,
                             const GpHyper& hp);

/// Re-maps the given inducing instances and patches U and its Gram caches.
void update_inducing_rows(InducingStore& store, const KernelMapper& km,
                          std::span<const std::size_t> dataset_indices,
                          std::span<const Tensor> instances);

/// Recomputes every row of U from the current mapper.
void rebuild_inducing_rows(InducingStore& store, const KernelMapper& km, const Dataset& inducing);

}  // namespace gpex
