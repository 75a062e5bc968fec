#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "matkit/core/error.hpp"

namespace matkit {

// Dense row-major double matrix. Deliberately minimal: the library only
// needs construction, element access, and a handful of products.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("Matrix: data size does not match rows*cols");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// A * A^T. This is the Gram-product workhorse; exploits symmetry of the result.
Matrix matmul_transpose(const Matrix& a);

// A * B with the usual inner-dimension check.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// A * x.
std::vector<double> multiply(const Matrix& a, std::span<const double> x);

// a += b elementwise; shapes must match.
void add_in_place(Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);

// ||a - b||_F; shapes must match.
double frobenius_distance(const Matrix& a, const Matrix& b);

double max_abs(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);

double norm2(std::span<const double> a);

} // namespace matkit
