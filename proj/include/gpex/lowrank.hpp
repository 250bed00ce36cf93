#pragma once

#include <cstddef>
#include <span>

#include "gpex/numkit.hpp"

namespace gpex {

/// The D×D Gram matrix AᵀA of an M×D matrix A, maintained under row
/// replacement. Column sums of A ride along as a cheap consistency audit.
struct GramCache {
  static constexpr std::size_t kRebuildEvery = 10000;

  Matrix gram;
  Vector column_sums;
  std::size_t rows = 0;
  std::size_t updates_since_rebuild = 0;

  std::size_t dim() const { return gram.rows(); }
  /// Long rank-one update chains drift; callers holding A rebuild when set.
  bool needs_rebuild() const { return updates_since_rebuild >= kRebuildEvery; }
};

GramCache gram_init(const Matrix& a);

/// gram ← gram − old·oldᵀ + new·newᵀ in O(D²).
void gram_update_row(GramCache& cache, std::span<const double> old_row,
                     std::span<const double> new_row);

/// Throws StateError when the cache no longer describes `a`.
void audit_gram(const GramCache& cache, const Matrix& a);

/// (AAᵀ + σ²I)⁻¹ b through the eigendecomposition of the D×D Gram matrix.
/// Never forms an M×M matrix.
Vector aat_inv_b(const Matrix& a, std::span<const double> b, double sigma,
                 const GramCache& cache);

/// w = (AᵀA + σ²I)⁻¹ Aᵀ v, so that uᵀw = uᵀAᵀ(AAᵀ + σ²I)⁻¹ v for any u.
Vector posterior_weights(const GramCache& cache, const Matrix& a, std::span<const double> v,
                         double sigma);

}  // namespace gpex
