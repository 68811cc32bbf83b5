#include "specrnn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace specrnn {

namespace {

double off_diagonal_frobenius(const Matrix& a) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) sum += a(i, j) * a(i, j);
  return std::sqrt(sum);
}

}  // namespace

SymEig sym_eig(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("sym_eig: matrix must be square");
  if (a.has_non_finite()) throw InvalidInputError("sym_eig: non-finite entry in input");

  const std::size_t m = a.rows();
  Matrix w(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) w(i, j) = 0.5 * (a(i, j) + a(j, i));

  Matrix u = Matrix::identity(m);
  const double tol = 1e-12 * w.frobenius_norm();

  for (int sweep = 0; sweep < 100; ++sweep) {
    if (off_diagonal_frobenius(w) < tol) break;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        const double apq = w(p, q);
        if (apq == 0.0) continue;
        const double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < m; ++k) {
          const double wkp = w(k, p), wkq = w(k, q);
          w(k, p) = c * wkp - s * wkq;
          w(k, q) = s * wkp + c * wkq;
        }
        for (std::size_t k = 0; k < m; ++k) {
          const double wpk = w(p, k), wqk = w(q, k);
          w(p, k) = c * wpk - s * wqk;
          w(q, k) = s * wpk + c * wqk;
        }
        for (std::size_t k = 0; k < m; ++k) {
          const double ukp = u(k, p), ukq = u(k, q);
          u(k, p) = c * ukp - s * ukq;
          u(k, q) = s * ukp + c * ukq;
        }
      }
    }
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return w(i, i) > w(j, j); });

  SymEig result;
  result.eigenvalues.resize(m);
  result.eigenvectors = Matrix(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    result.eigenvalues[j] = w(order[j], order[j]);
    for (std::size_t i = 0; i < m; ++i) result.eigenvectors(i, j) = u(i, order[j]);
  }
  return result;
}

Matrix spd_solve(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols()) throw DimensionError("spd_solve: matrix must be square");
  if (a.rows() != b.rows()) throw DimensionError("spd_solve: rhs row count mismatch");
  if (a.has_non_finite() || b.has_non_finite())
    throw InvalidInputError("spd_solve: non-finite entry in input");

  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = 0.5 * (a(i, j) + a(j, i));
      for (std::size_t k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
      if (i == j) {
        if (sum <= 0.0)
          throw NotPositiveDefiniteError("spd_solve: non-positive pivot in Cholesky");
        l(i, i) = std::sqrt(sum);
      } else {
        l(i, j) = sum / l(j, j);
      }
    }
  }

  Matrix x = b;
  for (std::size_t col = 0; col < b.cols(); ++col) {
    for (std::size_t i = 0; i < n; ++i) {  // L y = b
      double sum = x(i, col);
      for (std::size_t k = 0; k < i; ++k) sum -= l(i, k) * x(k, col);
      x(i, col) = sum / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {  // L^T x = y
      double sum = x(ii, col);
      for (std::size_t k = ii + 1; k < n; ++k) sum -= l(k, ii) * x(k, col);
      x(ii, col) = sum / l(ii, ii);
    }
  }
  return x;
}

std::vector<double> clamp_psd_eigenvalues(std::vector<double> eigenvalues,
                                          const char* context) {
  for (double& mu : eigenvalues) {
    if (mu < 0.0) {
      if (mu < -1e-10)
        throw NotPsdError(std::string(context) +
                          ": eigenvalue below -1e-10, input not PSD");
      mu = 0.0;
    }
  }
  return eigenvalues;
}

Matrix pseudo_inverse(const Matrix& a, double rel_cutoff) {
  const SymEig eig = sym_eig(a);
  const std::vector<double> mu = clamp_psd_eigenvalues(eig.eigenvalues, "pseudo_inverse");
  const std::size_t m = a.rows();
  const double mu_max = mu.empty() ? 0.0 : mu.front();

  std::vector<double> inv(m, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    if (mu[j] > 0.0 && mu[j] >= rel_cutoff * mu_max) inv[j] = 1.0 / mu[j];

  // U diag(inv) U^T
  Matrix result(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < m; ++k)
        sum += eig.eigenvectors(i, k) * inv[k] * eig.eigenvectors(j, k);
      result(i, j) = sum;
    }
  return result;
}

TruncatedSvd truncated_svd(const Matrix& a, std::size_t k) {
  const std::size_t r = a.rows(), c = a.cols();
  if (k > std::min(r, c)) throw DimensionError("truncated_svd: k exceeds min(rows, cols)");
  if (a.has_non_finite()) throw InvalidInputError("truncated_svd: non-finite entry in input");

  TruncatedSvd out;
  out.s.resize(k);
  out.u = Matrix(r, k);
  out.v = Matrix(c, k);

  const bool use_gram = c <= r;  // eigendecompose the smaller Gram matrix
  const Matrix gram = use_gram ? matmul_tn(a, a) : matmul_nt(a, a);
  const SymEig eig = sym_eig(gram);
  const std::vector<double> mu = clamp_psd_eigenvalues(eig.eigenvalues, "truncated_svd");

  const double s_max = mu.empty() ? 0.0 : std::sqrt(mu.front());
  const double tiny = 1e-13 * s_max;

  for (std::size_t j = 0; j < k; ++j) {
    const double s = std::sqrt(mu[j]);
    out.s[j] = s;
    if (use_gram) {
      for (std::size_t i = 0; i < c; ++i) out.v(i, j) = eig.eigenvectors(i, j);
      if (s > tiny && s > 0.0) {
        for (std::size_t i = 0; i < r; ++i) {
          double sum = 0.0;
          for (std::size_t l = 0; l < c; ++l) sum += a(i, l) * out.v(l, j);
          out.u(i, j) = sum / s;
        }
      }
    } else {
      for (std::size_t i = 0; i < r; ++i) out.u(i, j) = eig.eigenvectors(i, j);
      if (s > tiny && s > 0.0) {
        for (std::size_t i = 0; i < c; ++i) {
          double sum = 0.0;
          for (std::size_t l = 0; l < r; ++l) sum += a(l, i) * out.u(l, j);
          out.v(i, j) = sum / s;
        }
      }
    }
  }
  return out;
}

double operator_norm(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  return truncated_svd(a, 1).s[0];
}

}  // namespace specrnn
