#include "matkit/numerics/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace matkit {

namespace {

void require_symmetric(const Matrix& m, const char* who) {
    if (m.rows() != m.cols())
        throw ShapeError(std::string(who) + ": matrix is not square");
    const double scale = max_abs(m);
    const double bound = 1e-10 * scale;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.cols(); ++j)
            if (std::fabs(m.at(i, j) - m.at(j, i)) > bound)
                throw ShapeError(std::string(who) + ": matrix is not symmetric");
}

double off_diagonal_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
}

} // namespace

Spectrum eig_sym(const Matrix& m, double tol) {
    require_symmetric(m, "eig_sym");
    const std::size_t n = m.rows();
    if (n == 0) throw ShapeError("eig_sym: empty matrix");

    Matrix a = m;
    Matrix v = Matrix::identity(n);

    const double frob = frobenius_norm(m);
    const double target = 1e-14 * frob;
    const int max_sweeps = 64;

    int sweep = 0;
    double off = off_diagonal_norm(a);
    while (off > target && off > 0.0) {
        if (sweep++ >= max_sweeps)
            throw ConvergenceError("eig_sym: sweep budget exhausted", off);
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                // Classic Jacobi rotation annihilating a[p][q].
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p);
                    const double vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
        off = off_diagonal_norm(a);
    }

    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a.at(i, i);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return values[x] > values[y];
    });

    Spectrum out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out.eigenvalues[i] = values[order[i]];
        for (std::size_t k = 0; k < n; ++k)
            out.eigenvectors.at(k, i) = v.at(k, order[i]);
    }

    // PSD rounding repair: only when every eigenvalue clears -tol*lambda_1,
    // so genuinely indefinite spectra pass through untouched.
    const double top = out.eigenvalues.front();
    if (top > 0.0) {
        const double floor = -tol * top;
        const double worst = out.eigenvalues.back();
        if (worst < 0.0 && worst >= floor) {
            bool all_clear = true;
            for (double ev : out.eigenvalues)
                if (ev < floor) { all_clear = false; break; }
            if (all_clear)
                for (double& ev : out.eigenvalues)
                    if (ev < 0.0) ev = 0.0;
        }
    }
    return out;
}

PrincipalPair lambda_max(const Matrix& m, double tol) {
    require_symmetric(m, "lambda_max");
    const std::size_t n = m.rows();
    if (n == 0) throw ShapeError("lambda_max: empty matrix");

    PrincipalPair out;
    if (max_abs(m) == 0.0) {
        out.value = 0.0;
        out.vector.assign(n, 0.0);
        out.vector[0] = 1.0;
        out.degenerate = true;
        return out;
    }

    // Deterministic start with a mild index tilt so symmetric inputs do not
    // leave the iterate orthogonal to the dominant eigenvector.
    std::vector<double> vcur(n);
    for (std::size_t i = 0; i < n; ++i) vcur[i] = 1.0 + 1e-3 * static_cast<double>(i + 1);
    {
        double nv = norm2(vcur);
        for (double& x : vcur) x /= nv;
    }

    const int max_iters = 50000;
    double lambda = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        std::vector<double> w = multiply(m, vcur);
        lambda = dot(vcur, w);
        double resid = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = w[i] - lambda * vcur[i];
            resid += d * d;
        }
        resid = std::sqrt(resid);
        const double scale = std::max(std::fabs(lambda), 1e-300);
        if (resid <= tol * scale) {
            out.value = lambda;
            out.vector = std::move(vcur);
            return out;
        }
        double nw = norm2(w);
        if (nw == 0.0) {
            // Start vector fell in the nullspace; restart from a basis vector
            // with a nonzero image.
            bool restarted = false;
            for (std::size_t j = 0; j < n && !restarted; ++j) {
                std::vector<double> e(n, 0.0);
                e[j] = 1.0;
                std::vector<double> img = multiply(m, e);
                if (norm2(img) > 0.0) {
                    vcur = std::move(e);
                    restarted = true;
                }
            }
            if (!restarted)
                throw ConvergenceError("lambda_max: no basis vector has nonzero image", 0.0);
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) vcur[i] = w[i] / nw;
    }
    throw ConvergenceError("lambda_max: iteration budget exhausted", lambda);
}

double effective_rank(std::span<const double> spectrum) {
    if (spectrum.empty())
        throw ValueError("effective_rank: empty spectrum");
    double total = 0.0;
    for (double ev : spectrum) {
        if (ev < 0.0)
            throw ValueError("effective_rank: negative eigenvalue");
        total += ev;
    }
    if (total <= 0.0)
        throw ValueError("effective_rank: all eigenvalues are zero");
    double entropy = 0.0;
    for (double ev : spectrum) {
        if (ev == 0.0) continue;
        const double p = ev / total;
        entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

} // namespace matkit
