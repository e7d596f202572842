#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ptq {

// Dense row-major float matrix. Instances are treated as immutable by all
// public operations; every operation returns a fresh result, so shared
// inputs are safe to read concurrently.
class Matrix {
  public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols);
    Matrix(size_t rows, size_t cols, std::vector<float> data);

    static Matrix identity(size_t n);

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    size_t size() const { return rows_ * cols_; }

    float & at(size_t r, size_t c) { return data_[r * cols_ + c]; }
    float at(size_t r, size_t c) const { return data_[r * cols_ + c]; }

    float * row(size_t r) { return data_.data() + r * cols_; }
    const float * row(size_t r) const { return data_.data() + r * cols_; }

    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    bool same_shape(const Matrix & o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

  private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<float> data_;
};

// a (m x k) times b (k x n). Each output element accumulates its products
// in ascending k order into a single double accumulator, so results are
// bit-identical across runs and thread counts.
Matrix matmul(const Matrix & a, const Matrix & b);

// a (m x k) times b^T where b is (n x k). Same reduction-order guarantee.
Matrix matmul_nt(const Matrix & a, const Matrix & b);

// a^T times b where a is (k x m), b is (k x n). Same guarantee.
Matrix matmul_tn(const Matrix & a, const Matrix & b);

Matrix transpose(const Matrix & a);

// Lower-triangular L with L L^T = a. Requires a square and symmetric
// within 1e-5; throws DecompositionError naming the failing pivot when a
// is not positive definite.
Matrix cholesky(const Matrix & a);

// Solves L y = b for lower-triangular L.
Matrix solve_lower(const Matrix & l, const Matrix & b);

// Solves L^T x = b for lower-triangular L.
Matrix solve_lower_transposed(const Matrix & l, const Matrix & b);

// Inverse of a symmetric positive definite matrix via Cholesky.
Matrix inverse_spd(const Matrix & a);

double frobenius_norm_sq(const Matrix & a);
double max_abs_diff(const Matrix & a, const Matrix & b);

} // namespace ptq
