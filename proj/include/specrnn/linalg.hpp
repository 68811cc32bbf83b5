#pragma once

#include <vector>

#include "specrnn/matrix.hpp"

namespace specrnn {

struct SymEig {
  std::vector<double> eigenvalues;  // descending
  Matrix eigenvectors;              // orthogonal, columns are eigenvectors
};

struct TruncatedSvd {
  Matrix u;                // rows x k
  std::vector<double> s;   // k singular values, descending
  Matrix v;                // cols x k
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.  Input is
// symmetrized as (A+A^T)/2; iteration stops when the off-diagonal Frobenius
// norm drops below 1e-12*||A||_F or after 100 sweeps.
SymEig sym_eig(const Matrix& a);

// Solve A X = B for symmetric positive definite A via Cholesky.
// Throws NotPositiveDefiniteError when a pivot is non-positive.
Matrix spd_solve(const Matrix& a, const Matrix& b);

// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via sym_eig:
// eigenvalues >= rel_cutoff*mu_max are inverted, the rest dropped.
Matrix pseudo_inverse(const Matrix& a, double rel_cutoff = 1e-10);

// Top-k singular triplets via sym_eig of A^T A or A A^T (whichever smaller).
TruncatedSvd truncated_svd(const Matrix& a, std::size_t k);

// Largest singular value (k=1 truncated SVD).
double operator_norm(const Matrix& a);

// PSD eigenvalue clamping: values in [-1e-10, 0) become 0; anything below
// -1e-10 means the input was not PSD and raises NotPsdError.
std::vector<double> clamp_psd_eigenvalues(std::vector<double> eigenvalues,
                                          const char* context);

}  // namespace specrnn
