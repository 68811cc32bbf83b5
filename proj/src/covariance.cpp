#include "specrnn/covariance.hpp"

namespace specrnn {

void CovarianceAccumulator::add_states(const Matrix& states) {
  if (states.cols() != m_) throw DimensionError("add_states: width mismatch");
  sum_ += matmul_tn(states, states);
  samples_ += states.rows();
}

void CovarianceAccumulator::add_trace(const HiddenTrace& trace) {
  for (const Matrix& h_t : trace.states) add_states(h_t);
}

HiddenCovariance CovarianceAccumulator::finalize() const {
  HiddenCovariance cov;
  cov.m = m_;
  cov.samples = samples_;
  cov.sigma = sum_;
  if (samples_ > 0) cov.sigma *= 1.0 / static_cast<double>(samples_);
  // A^T A sums are symmetric already; enforce exactly.
  for (std::size_t i = 0; i < m_; ++i)
    for (std::size_t j = i + 1; j < m_; ++j) {
      const double v = 0.5 * (cov.sigma(i, j) + cov.sigma(j, i));
      cov.sigma(i, j) = v;
      cov.sigma(j, i) = v;
    }
  return cov;
}

HiddenCovariance accumulate(const HiddenTrace& trace) {
  if (trace.states.empty() || trace.states.front().rows() == 0)
    throw InvalidInputError("accumulate: empty trace");
  CovarianceAccumulator acc(trace.states.front().cols());
  acc.add_trace(trace);
  return acc.finalize();
}

HiddenCovariance merge(const HiddenCovariance& a, const HiddenCovariance& b) {
  if (a.m != b.m) throw DimensionError("merge: covariance sizes differ");
  HiddenCovariance out;
  out.m = a.m;
  out.samples = a.samples + b.samples;
  out.sigma = Matrix(a.m, a.m);
  if (out.samples == 0) return out;
  const double wa = static_cast<double>(a.samples) / static_cast<double>(out.samples);
  const double wb = static_cast<double>(b.samples) / static_cast<double>(out.samples);
  for (std::size_t i = 0; i < a.m; ++i)
    for (std::size_t j = 0; j < a.m; ++j)
      out.sigma(i, j) = wa * a.sigma(i, j) + wb * b.sigma(i, j);
  return out;
}

NonzeroRows nonzero_rows(const HiddenCovariance& cov, double tol) {
  if (tol < 0.0) {
    double max_diag = 0.0;
    for (std::size_t k = 0; k < cov.m; ++k) max_diag = std::max(max_diag, cov.sigma(k, k));
    tol = 1e-12 * max_diag;
  }
  NonzeroRows out;
  for (std::size_t k = 0; k < cov.m; ++k)
    if (cov.sigma(k, k) > tol) out.j_nzr.push_back(k);
  out.m_nzr = out.j_nzr.size();
  return out;
}

SymEig spectrum(const HiddenCovariance& cov) {
  SymEig eig = sym_eig(cov.sigma);
  eig.eigenvalues = clamp_psd_eigenvalues(eig.eigenvalues, "spectrum");
  return eig;
}

HiddenCovariance covariance_of(const RnnParams& params, const SequenceBatch& dataset,
                               std::size_t chunk) {
  CovarianceAccumulator acc(params.m());
  for (std::size_t start = 0; start < dataset.n; start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(dataset.n, start + chunk); ++i)
      idx.push_back(i);
    const SequenceBatch sub = dataset.select(idx);
    const ForwardResult fr = forward(params, sub);
    acc.add_trace(fr.trace);
  }
  return acc.finalize();
}

}  // namespace specrnn
