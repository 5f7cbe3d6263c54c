#include "silora/matrix.hpp"

#include <cmath>

namespace silora {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        check(row.size() == c, "Matrix::from_rows: ragged rows");
        std::size_t j = 0;
        for (const double v : row) {
            m.at(i, j++) = v;
        }
        ++i;
    }
    return m;
}

bool Matrix::all_finite() const {
    for (const double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

double Matrix::frobenius_norm() const {
    double acc = 0.0;
    for (const double v : data_) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

double Matrix::sum() const {
    double acc = 0.0;
    for (const double v : data_) {
        acc += v;
    }
    return acc;
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (const double v : data_) {
        m = std::max(m, std::fabs(v));
    }
    return m;
}

namespace {

struct MatmulDims {
    std::size_t m, k, n;
};

MatmulDims matmul_dims(const Matrix& a, const Matrix& b, bool ta, bool tb, const char* who) {
    const std::size_t m = ta ? a.cols() : a.rows();
    const std::size_t ka = ta ? a.rows() : a.cols();
    const std::size_t kb = tb ? b.cols() : b.rows();
    const std::size_t n = tb ? b.rows() : b.cols();
    check(ka == kb, std::string(who) + ": inner dimensions disagree (" + std::to_string(ka) +
                        " vs " + std::to_string(kb) + ")");
    return {m, ka, n};
}

} // namespace

void matmul_accumulate(Matrix& out, const Matrix& a, const Matrix& b, bool ta, bool tb) {
    const auto [m, k, n] = matmul_dims(a, b, ta, tb, "matmul");
    check(out.rows() == m && out.cols() == n, "matmul: output shape disagrees");

    // i-k-j loop order keeps the inner loop contiguous for the common
    // untransposed case; the transposed variants index accordingly.
    for (std::size_t i = 0; i < m; ++i) {
        double* out_row = out.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ta ? a.at(kk, i) : a.at(i, kk);
            if (av == 0.0) {
                continue;
            }
            if (!tb) {
                const double* b_row = b.data() + kk * n;
                for (std::size_t j = 0; j < n; ++j) {
                    out_row[j] += av * b_row[j];
                }
            } else {
                for (std::size_t j = 0; j < n; ++j) {
                    out_row[j] += av * b.at(j, kk);
                }
            }
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b, bool ta, bool tb) {
    const auto [m, k, n] = matmul_dims(a, b, ta, tb, "matmul");
    (void)k;
    Matrix out(m, n);
    matmul_accumulate(out, a, b, ta, tb);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    check(a.same_shape(b), "add: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += b.data()[i];
    }
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    check(a.same_shape(b), "sub: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] -= b.data()[i];
    }
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    check(a.same_shape(b), "hadamard: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] *= b.data()[i];
    }
    return out;
}

Matrix scaled(const Matrix& a, double c) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] *= c;
    }
    return out;
}

void axpy(Matrix& a, double c, const Matrix& b) {
    check(a.same_shape(b), "axpy: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.data()[i] += c * b.data()[i];
    }
}

} // namespace silora
