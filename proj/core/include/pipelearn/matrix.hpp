#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace pipelearn {

// Row-major dense matrix of 64-bit reals. Rows index samples, columns index
// features throughout the library.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }
    std::vector<double>& values() { return data_; }

    // Copy of `count` consecutive rows starting at `first`.
    Matrix slice_rows(std::size_t first, std::size_t count) const;

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// a (m x k) * b (k x n) -> m x n
Matrix matmul(const Matrix& a, const Matrix& b);
// a (m x k) * b^T where b is (n x k) -> m x n
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
std::vector<double> column_sums(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace pipelearn
