#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace robustmal {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void resize(std::size_t rows, std::size_t cols, double fill = 0.0) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, fill);
  }

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Every kernel accumulates each output element in the same order in both
// implementations, so the parallel and serial results are bit-identical.
namespace kernels {

// C = A * B^T, with A (n x k) and B (m x k).
void gemm_abt(const Matrix& a, const Matrix& b, Matrix& c);
// C = A^T * B, with A (n x k) and B (n x m).
void gemm_atb(const Matrix& a, const Matrix& b, Matrix& c);
// C = A * B, with A (n x k) and B (k x m).
void gemm(const Matrix& a, const Matrix& b, Matrix& c);
// out(i, j) = ||q_i - r_j||^2.
void squared_distances(const Matrix& queries, const Matrix& reference, Matrix& out);

namespace serial {
void gemm_abt(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_atb(const Matrix& a, const Matrix& b, Matrix& c);
void gemm(const Matrix& a, const Matrix& b, Matrix& c);
void squared_distances(const Matrix& queries, const Matrix& reference, Matrix& out);
}  // namespace serial

}  // namespace kernels

// Number of worker threads used by parallel loops (OpenMP setting).
int worker_count();
void set_worker_count(int n);

}  // namespace robustmal
