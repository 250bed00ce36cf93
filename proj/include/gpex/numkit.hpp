#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace gpex {

using Vector = std::vector<double>;
using Rng = std::mt19937_64;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct EigenPair {
  Vector values;   // descending
  Matrix vectors;  // column i pairs with values[i]
};

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
/// aᵀx without forming the transpose.
Vector matvec_transposed(const Matrix& a, std::span<const double> x);
Matrix transpose(const Matrix& a);

double dot(std::span<const double> x, std::span<const double> y);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double norm2(std::span<const double> x);
double max_abs(std::span<const double> x);
double frobenius(const Matrix& a);
/// Max absolute row sum.
double norm_inf(const Matrix& a);

/// Indices that sort x in descending order; equal values keep index order.
std::vector<std::size_t> argsort_descending(std::span<const double> x);

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
EigenPair sym_eig(const Matrix& s);

/// Lower Cholesky factor of a symmetric positive-definite matrix.
Matrix cholesky(const Matrix& s);
Vector cholesky_solve(const Matrix& lower, std::span<const double> b);
/// Inverse of an SPD matrix from its Cholesky factor.
Matrix cholesky_inverse(const Matrix& lower);

double mean(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace gpex
