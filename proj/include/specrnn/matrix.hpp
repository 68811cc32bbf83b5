#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace specrnn {

struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

struct InvalidInputError : std::invalid_argument {
  explicit InvalidInputError(const std::string& what) : std::invalid_argument(what) {}
};

struct NotPositiveDefiniteError : std::runtime_error {
  explicit NotPositiveDefiniteError(const std::string& what) : std::runtime_error(what) {}
};

struct NotPsdError : std::runtime_error {
  explicit NotPsdError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diag(const std::vector<double>& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  Matrix transpose() const;

  // Submatrix with the given rows/columns (indices need not be contiguous).
  Matrix select_rows(const std::vector<std::size_t>& idx) const;
  Matrix select_cols(const std::vector<std::size_t>& idx) const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  double frobenius_norm() const;
  double max_abs() const;
  double trace() const;
  bool has_non_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

// C = A * B.
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T (cache-friendly for row-major operands).
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

std::vector<double> matvec(const Matrix& a, const std::vector<double>& x);

}  // namespace specrnn
