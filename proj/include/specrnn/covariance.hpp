#pragma once

#include <cstddef>
#include <vector>

#include "specrnn/linalg.hpp"
#include "specrnn/matrix.hpp"
#include "specrnn/rnn.hpp"

namespace specrnn {

// Time-averaged noncentered covariance of hidden states:
// sigma = (1/nT) sum_i sum_t h_t^i (h_t^i)^T.
struct HiddenCovariance {
  Matrix sigma;             // m x m, symmetric PSD
  std::size_t samples = 0;  // n*T
  std::size_t m = 0;
};

// Streaming accumulator: outer-product sums, division at finalize.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(std::size_t m) : sum_(m, m), m_(m) {}

  // Add one n x m block of hidden states (one time step of a batch).
  void add_states(const Matrix& states);
  void add_trace(const HiddenTrace& trace);
  HiddenCovariance finalize() const;

 private:
  Matrix sum_;
  std::size_t m_ = 0;
  std::size_t samples_ = 0;
};

HiddenCovariance accumulate(const HiddenTrace& trace);

// Sample-count-weighted average of two covariances.
HiddenCovariance merge(const HiddenCovariance& a, const HiddenCovariance& b);

struct NonzeroRows {
  std::size_t m_nzr = 0;
  std::vector<std::size_t> j_nzr;
};

// Row k counts as zero iff sigma_kk <= tol; PSD makes the diagonal test
// sufficient.  tol < 0 selects the default 1e-12 * max diagonal.
NonzeroRows nonzero_rows(const HiddenCovariance& cov, double tol = -1.0);

// Eigendecomposition with eigenvalues clamped at 0.
SymEig spectrum(const HiddenCovariance& cov);

// Covariance of the hidden states of `params` over `dataset`, accumulated in
// bounded-memory chunks.
HiddenCovariance covariance_of(const RnnParams& params, const SequenceBatch& dataset,
                               std::size_t chunk = 512);

}  // namespace specrnn
