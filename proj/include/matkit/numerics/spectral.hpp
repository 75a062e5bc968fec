#pragma once

#include <span>
#include <vector>

#include "matkit/numerics/matrix.hpp"

namespace matkit {

// Relative threshold below which small negative eigenvalues of a nominally
// PSD matrix are treated as rounding noise and clamped to zero.
inline constexpr double kPsdClampTol = 1e-10;

// Eigendecomposition of a symmetric matrix.
struct Spectrum {
    std::vector<double> eigenvalues; // descending
    Matrix eigenvectors;             // column i pairs with eigenvalues[i]
};

// Cyclic Jacobi eigensolver for symmetric input.
//
// Input must be symmetric to within 1e-10 relative to its largest entry,
// else ShapeError. When the spectrum is PSD up to rounding (no eigenvalue
// below -tol * lambda_1), negatives in [-tol * lambda_1, 0) are clamped to
// exactly 0; genuinely indefinite spectra are returned untouched.
// Eigenvalues are sorted descending (stable in the pre-sort order).
// Throws ConvergenceError with the remaining off-diagonal residual if the
// sweep budget is exhausted.
Spectrum eig_sym(const Matrix& m, double tol = kPsdClampTol);

struct PrincipalPair {
    double value = 0.0;
    std::vector<double> vector;
    // True when the matrix was (numerically) zero and the returned pair is
    // the 0 / e_1 convention rather than a converged iterate.
    bool degenerate = false;
};

// Largest eigenvalue and its eigenvector by power iteration, for symmetric
// PSD input. Deterministic start vector. tol bounds the relative residual
// ||Av - lambda v|| / lambda at acceptance.
PrincipalPair lambda_max(const Matrix& m, double tol = 1e-9);

// exp(Shannon entropy) of the normalized spectrum. Input entries must be
// >= 0 with at least one > 0; zero entries contribute nothing (0*ln 0 = 0).
double effective_rank(std::span<const double> spectrum);

} // namespace matkit
