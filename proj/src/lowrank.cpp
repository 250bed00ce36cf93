#include "gpex/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gpex/errors.hpp"

namespace gpex {

namespace {

void require_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("sigma must be positive and finite, got " + std::to_string(sigma));
  }
}

}  // namespace

GramCache gram_init(const Matrix& a) {
  const std::size_t d = a.cols();
  GramCache cache;
  cache.gram = Matrix(d, d);
  cache.column_sums.assign(d, 0.0);
  cache.rows = a.rows();
  for (std::size_t m = 0; m < a.rows(); ++m) {
    const auto r = a.row(m);
    for (std::size_t i = 0; i < d; ++i) {
      cache.column_sums[i] += r[i];
      const double ri = r[i];
      if (ri == 0.0) continue;
      for (std::size_t j = i; j < d; ++j) {
        cache.gram(i, j) += ri * r[j];
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      cache.gram(i, j) = cache.gram(j, i);
    }
  }
  return cache;
}

void gram_update_row(GramCache& cache, std::span<const double> old_row,
                     std::span<const double> new_row) {
  const std::size_t d = cache.dim();
  if (old_row.size() != d || new_row.size() != d) {
    throw ShapeError("gram_update_row: row length does not match Gram dimension " +
                     std::to_string(d));
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      const double delta = new_row[i] * new_row[j] - old_row[i] * old_row[j];
      cache.gram(i, j) += delta;
      if (j != i) cache.gram(j, i) = cache.gram(i, j);
    }
    cache.column_sums[i] += new_row[i] - old_row[i];
  }
  cache.updates_since_rebuild += 1;
}

void audit_gram(const GramCache& cache, const Matrix& a) {
  if (cache.dim() != a.cols() || cache.rows != a.rows()) {
    throw StateError("Gram cache describes a " + std::to_string(cache.rows) + "x" +
                     std::to_string(cache.dim()) + " matrix, got " + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()));
  }
  Vector sums(a.cols(), 0.0);
  Vector abs_sums(a.cols(), 0.0);
  for (std::size_t m = 0; m < a.rows(); ++m) {
    const auto r = a.row(m);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      sums[i] += r[i];
      abs_sums[i] += std::abs(r[i]);
    }
  }
  for (std::size_t i = 0; i < a.cols(); ++i) {
    if (std::abs(sums[i] - cache.column_sums[i]) > 1e-8 * (1.0 + abs_sums[i])) {
      throw StateError("Gram cache checksum mismatch in column " + std::to_string(i));
    }
  }
}

Vector aat_inv_b(const Matrix& a, std::span<const double> b, double sigma,
                 const GramCache& cache) {
  require_sigma(sigma);
  if (b.size() != a.rows()) {
    throw ShapeError("aat_inv_b: b has length " + std::to_string(b.size()) + ", A has " +
                     std::to_string(a.rows()) + " rows");
  }
  audit_gram(cache, a);
  const double s2 = sigma * sigma;

  // AᵀA and AAᵀ share their nonzero eigenvalues μᵢ; with ẽᵢ an eigenvector of
  // AᵀA, eᵢ = Aẽᵢ/√μᵢ is the matching unit eigenvector of AAᵀ. Then
  //   (AAᵀ+σ²I)⁻¹b = EΛEᵀb + (b − EEᵀb)/σ²,  Λ = diag(1/(μᵢ+σ²))
  //                = b/σ² − Σᵢ Aẽᵢ (ẽᵢᵀAᵀb) / (σ²(μᵢ+σ²)),
  // which needs no division by μᵢ, so null directions drop out cleanly.
  const EigenPair eig = sym_eig(cache.gram);
  const Vector atb = matvec_transposed(a, b);
  const std::size_t d = a.cols();
  Vector t(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double mu = std::max(eig.values[i], 0.0);
    double proj = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      proj += eig.vectors(k, i) * atb[k];
    }
    const double coef = proj / (s2 * (mu + s2));
    for (std::size_t k = 0; k < d; ++k) {
      t[k] += coef * eig.vectors(k, i);
    }
  }
  const Vector at = matvec(a, t);
  Vector out(b.size());
  for (std::size_t m = 0; m < b.size(); ++m) {
    out[m] = b[m] / s2 - at[m];
  }
  return out;
}

Vector posterior_weights(const GramCache& cache, const Matrix& a, std::span<const double> v,
                         double sigma) {
  require_sigma(sigma);
  if (v.size() != a.rows()) {
    throw ShapeError("posterior_weights: v has length " + std::to_string(v.size()) +
                     ", A has " + std::to_string(a.rows()) + " rows");
  }
  if (cache.dim() != a.cols()) {
    throw StateError("posterior_weights: Gram dimension does not match A");
  }
  Matrix s = cache.gram;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    s(i, i) += sigma * sigma;
  }
  return cholesky_solve(cholesky(s), matvec_transposed(a, v));
}

}  // namespace gpex
