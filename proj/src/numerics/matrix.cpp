#include "matkit/numerics/matrix.hpp"

#include <cmath>

namespace matkit {

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix matmul_transpose(const Matrix& a) {
    const std::size_t n = a.rows();
    const std::size_t m = a.cols();
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ri = a.row(i);
        for (std::size_t j = i; j < n; ++j) {
            const double* rj = a.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += ri[k] * rj[k];
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ra = a.row(i);
        double* ro = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double v = ra[k];
            if (v == 0.0) continue;
            const double* rb = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ro[j] += v * rb[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

std::vector<double> multiply(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size())
        throw ShapeError("multiply: vector length does not match columns");
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += r[j] * x[j];
        out[i] = s;
    }
    return out;
}

void add_in_place(Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("add_in_place: shapes differ");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("frobenius_distance: shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::fabs(v));
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: lengths differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

} // namespace matkit
