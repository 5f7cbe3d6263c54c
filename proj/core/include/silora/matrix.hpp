#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "silora/common.hpp"

namespace silora {

// Dense row-major matrix of doubles. Everything in the engine is 64-bit by
// design: the exact step-identity checks need tolerances near machine epsilon.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool all_finite() const;
    double frobenius_norm() const;
    double sum() const;
    double max_abs() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// out = op_a(a) * op_b(b), where op transposes when the flag is set.
Matrix matmul(const Matrix& a, const Matrix& b, bool transpose_a = false, bool transpose_b = false);

// out += op_a(a) * op_b(b); shapes must already agree.
void matmul_accumulate(Matrix& out, const Matrix& a, const Matrix& b,
                       bool transpose_a = false, bool transpose_b = false);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& a, double c);

// a += c * b
void axpy(Matrix& a, double c, const Matrix& b);

} // namespace silora
