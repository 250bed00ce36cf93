#include "gpex/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gpex/errors.hpp"

namespace gpex {

namespace {

void require_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(what) + ": non-finite entry");
    }
  }
}

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      throw ShapeError("ragged matrix literal");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    m(i, i) = 1.0;
  }
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + dims(a) + " * " + dims(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) {
        continue;
      }
      axpy(aik, b.row(k), out_row);
    }
  }
  require_finite(out.data(), "matmul");
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw ShapeError("matvec: " + dims(a) + " * vector of " + std::to_string(x.size()));
  }
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    out[i] = dot(a.row(i), x);
  }
  return out;
}

Vector matvec_transposed(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) {
    throw ShapeError("matvec_transposed: " + dims(a) + "^T * vector of " +
                     std::to_string(x.size()));
  }
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    axpy(x[i], a.row(i), out);
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      t(j, i) = a(i, j);
    }
  }
  return t;
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("dot: lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += x[i] * y[i];
  }
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("axpy: lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] += alpha * x[i];
  }
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) {
    m = std::max(m, std::abs(v));
  }
  return m;
}

double frobenius(const Matrix& a) { return norm2(a.data()); }

double norm_inf(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.row(i)) {
      s += std::abs(v);
    }
    m = std::max(m, s);
  }
  return m;
}

std::vector<std::size_t> argsort_descending(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  return idx;
}

EigenPair sym_eig(const Matrix& s) {
  constexpr int kMaxSweeps = 100;
  constexpr double kRelThreshold = 1e-12;

  const std::size_t n = s.rows();
  if (s.cols() != n) {
    throw ShapeError("sym_eig: non-square " + dims(s));
  }
  require_finite(s.data(), "sym_eig");
  const double scale = std::max(1.0, norm_inf(s));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(s(i, j) - s(j, i)) > 1e-9 * scale) {
        throw ShapeError("sym_eig: matrix is not symmetric at (" + std::to_string(i) + "," +
                         std::to_string(j) + ")");
      }
    }
  }

  Matrix a = s;
  Matrix v = Matrix::identity(n);
  const double threshold = kRelThreshold * frobenius(s);

  auto off_diagonal = [&] {
    double sum = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        sum += 2.0 * a(p, q) * a(p, q);
      }
    }
    return std::sqrt(sum);
  };

  bool converged = false;
  for (int sweep = 0; sweep <= kMaxSweeps; ++sweep) {
    if (off_diagonal() <= threshold) {
      converged = true;
      break;
    }
    if (sweep == kMaxSweeps) {
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) {
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalError("sym_eig: no convergence after " + std::to_string(kMaxSweeps) +
                         " sweeps");
  }

  Vector diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    diag[i] = a(i, i);
  }
  const auto order = argsort_descending(diag);
  EigenPair out{Vector(n), Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = diag[order[i]];
    for (std::size_t k = 0; k < n; ++k) {
      out.vectors(k, i) = v(k, order[i]);
    }
  }
  return out;
}

Matrix cholesky(const Matrix& s) {
  const std::size_t n = s.rows();
  if (s.cols() != n) {
    throw ShapeError("cholesky: non-square " + dims(s));
  }
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = s(j, j);
    for (std::size_t k = 0; k < j; ++k) {
      d -= l(j, k) * l(j, k);
    }
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NumericalError("cholesky: matrix is not positive definite (pivot " +
                           std::to_string(j) + ")");
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double x = s(i, j);
      for (std::size_t k = 0; k < j; ++k) {
        x -= l(i, k) * l(j, k);
      }
      l(i, j) = x / ljj;
    }
  }
  return l;
}

Vector cholesky_solve(const Matrix& lower, std::span<const double> b) {
  const std::size_t n = lower.rows();
  if (b.size() != n) {
    throw ShapeError("cholesky_solve: rhs length mismatch");
  }
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      y[i] -= lower(i, k) * y[k];
    }
    y[i] /= lower(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      y[ii] -= lower(k, ii) * y[k];
    }
    y[ii] /= lower(ii, ii);
  }
  return y;
}

Matrix cholesky_inverse(const Matrix& lower) {
  const std::size_t n = lower.rows();
  Matrix inv(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const Vector col = cholesky_solve(lower, e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      inv(i, j) = col[i];
    }
  }
  // symmetrize round-off
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = m;
      inv(j, i) = m;
    }
  }
  return inv;
}

double mean(std::span<const double> x) {
  if (x.empty()) {
    throw DegenerateInputError("mean of empty vector");
  }
  double s = 0.0;
  for (double v : x) {
    s += v;
  }
  return s / static_cast<double>(x.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("pearson: lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  if (x.size() < 2) {
    throw DegenerateInputError("pearson: need at least two samples");
  }
  require_finite(x, "pearson");
  require_finite(y, "pearson");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  // A constant series leaves only round-off after centering.
  const auto negligible = [n = static_cast<double>(x.size())](double ss, double scale) {
    const double tol = 1e-13 * scale;
    return ss <= n * tol * tol;
  };
  if (negligible(sxx, max_abs(x)) || negligible(syy, max_abs(y))) {
    throw DegenerateInputError("pearson: zero variance");
  }
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace gpex
