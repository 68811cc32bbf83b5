#include "specrnn/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "specrnn/bounds.hpp"
#include "specrnn/linalg.hpp"

namespace specrnn {

namespace {

// Losses below -threshold indicate a genuinely indefinite input; within
// [-threshold, threshold] they are rounding residue of an exact zero and
// snap to 0.0 so lossless compression reports a loss of exactly zero.  The
// threshold scales with the covariance trace so large-magnitude problems are
// not misclassified as errors.
double clamp_loss(double value, double scale, const char* context) {
  double threshold = 1e-10 * std::max(1.0, scale);
  if (value < -threshold) {
    throw NotPsdError(std::string(context) + ": loss " +
                      std::to_string(value) + " below -" +
                      std::to_string(threshold));
  }
  return value <= threshold ? 0.0 : value;
}

Matrix submatrix(const Matrix& a, const std::vector<std::size_t>& rows,
                 const std::vector<std::size_t>& cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = a.row_ptr(rows[i]);
    double* dst = out.row_ptr(i);
    for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
  }
  return out;
}

struct SolvedReconstruction {
  Matrix a_j;         // m x k, maps phi_J back to the full node space
  Matrix sigma_rows;  // k x m, raw Sigma_{J,[m]} (for the residual)
  bool fallback = false;
};

// Solves (Sigma_{J,J} + diag(tau)) X = Sigma_{J,[m]} and returns A_J = X^T.
// All-zero tau uses the pseudo-inverse by design; otherwise Cholesky is
// attempted first and the pseudo-inverse is a flagged fallback.
SolvedReconstruction solve_reconstruction(const HiddenCovariance& cov,
                                          const IndexSet& j,
                                          const std::vector<double>& tau) {
  const std::size_t k = j.size();
  const std::size_t m = cov.m;
  j.check_bounds(m);
  if (k == 0) throw InvalidInputError("reconstruction: empty index set");
  if (tau.size() != k) {
    throw DimensionError("reconstruction: tau length " +
                         std::to_string(tau.size()) + " != |J| " +
                         std::to_string(k));
  }
  for (double t : tau) {
    if (!(t >= 0.0)) {
      throw InvalidInputError("reconstruction: negative or non-finite tau");
    }
  }
  Matrix sigma_jj = submatrix(cov.sigma, j.indices, j.indices);
  for (std::size_t i = 0; i < k; ++i) sigma_jj(i, i) += tau[i];
  Matrix sigma_jrows(k, m);
  for (std::size_t i = 0; i < k; ++i) {
    const double* src = cov.sigma.row_ptr(j.indices[i]);
    std::copy(src, src + m, sigma_jrows.row_ptr(i));
  }

  bool all_zero = std::all_of(tau.begin(), tau.end(),
                              [](double t) { return t == 0.0; });
  SolvedReconstruction out;
  if (!all_zero) {
    try {
      out.a_j = spd_solve(sigma_jj, sigma_jrows).transpose();
      out.fallback = false;
      out.sigma_rows = std::move(sigma_jrows);
      return out;
    } catch (const NotPositiveDefiniteError&) {
      out.fallback = true;  // regularized block still singular; fall through
    }
  }
  Matrix pinv = pseudo_inverse(sigma_jj);
  out.a_j = matmul(pinv, sigma_jrows).transpose();
  out.sigma_rows = std::move(sigma_jrows);
  return out;
}

struct LossSet {
  double input = 0.0;
  double out_o = 0.0;
  double out_h = 0.0;
};

// The three losses as differences of two stably computed nonnegative
// quadratic forms.  With B = Sigma_{J,J} + diag(tau) = U diag(s) U^T and
// C = Sigma_{[m],J} U diag(s^{-1/2}) (directions below the spectral cutoff
// dropped), the captured part of the residual is C C^T exactly, so e.g.
// L^A = Tr[Sigma] - ||C||_F^2.  Forming the residual through the inverse
// instead amplifies cancellation noise by kappa(B); this form costs sqrt of
// that, which keeps the losses nonnegative to roundoff even for the
// ill-conditioned covariances of trained networks.
LossSet evaluate_losses(const HiddenCovariance& cov, const IndexSet& j,
                        const std::vector<double>& tau,
                        const OutputWeights* weights, bool need_out) {
  const std::size_t m = cov.m;
  const std::size_t k = j.size();
  j.check_bounds(m);
  if (k == 0) throw InvalidInputError("losses: empty index set");
  if (tau.size() != k) {
    throw DimensionError("losses: tau length " + std::to_string(tau.size()) +
                         " != |J| " + std::to_string(k));
  }
  for (double t : tau) {
    if (!(t >= 0.0)) {
      throw InvalidInputError("losses: negative or non-finite tau");
    }
  }
  Matrix block = submatrix(cov.sigma, j.indices, j.indices);
  for (std::size_t i = 0; i < k; ++i) block(i, i) += tau[i];
  SymEig eig = sym_eig(block);
  const double s_max = eig.eigenvalues.empty()
                           ? 0.0
                           : std::max(0.0, eig.eigenvalues.front());
  for (double s : eig.eigenvalues) {
    if (s < -1e-10 * std::max(1.0, s_max)) {
      throw NotPsdError("losses: retained block is not PSD");
    }
  }
  const double cutoff = s_max * 1e-12;

  Matrix cols(m, k);  // Sigma_{[m],J}
  for (std::size_t r = 0; r < m; ++r) {
    const double* src = cov.sigma.row_ptr(r);
    for (std::size_t c = 0; c < k; ++c) cols(r, c) = src[j.indices[c]];
  }
  Matrix c_mat = matmul(cols, eig.eigenvectors);
  for (std::size_t i = 0; i < k; ++i) {
    double s = eig.eigenvalues[i];
    double w = s > cutoff ? 1.0 / std::sqrt(s) : 0.0;
    for (std::size_t r = 0; r < m; ++r) c_mat(r, i) *= w;
  }

  LossSet out;
  double total = cov.sigma.trace();
  double captured = 0.0;
  for (double v : c_mat.data()) captured += v * v;
  out.input = clamp_loss(total - captured, total, "input loss");

  if (need_out) {
    if (weights == nullptr || weights->w_out == nullptr ||
        weights->w_hid == nullptr) {
      throw InvalidInputError("output losses require output/hidden weights");
    }
    const Matrix& w_out = *weights->w_out;
    const Matrix& w_hid = *weights->w_hid;
    if (w_out.cols() != m || w_hid.cols() != m || w_hid.rows() != m) {
      throw DimensionError("output losses: weight shapes do not match m");
    }
    // Tr[W Sigma W^T] - ||W C||_F^2 for W = w_out and W = w_hid_{J,[m]}.
    auto weighted_pair = [&](const Matrix& w) {
      double full = 0.0;
      for (std::size_t r = 0; r < w.rows(); ++r) {
        const double* wr = w.row_ptr(r);
        for (std::size_t a = 0; a < m; ++a) {
          const double* srow = cov.sigma.row_ptr(a);
          double acc = 0.0;
          for (std::size_t b = 0; b < m; ++b) acc += srow[b] * wr[b];
          full += wr[a] * acc;
        }
      }
      Matrix wc = matmul(w, c_mat);
      double cap = 0.0;
      for (double v : wc.data()) cap += v * v;
      return std::pair<double, double>{full, cap};
    };
    auto [full_o, cap_o] = weighted_pair(w_out);
    out.out_o = clamp_loss(full_o - cap_o, full_o, "output loss");
    Matrix w_hid_j = w_hid.select_rows(j.indices);  // k x m
    auto [full_h, cap_h] = weighted_pair(w_hid_j);
    out.out_h = clamp_loss(full_h - cap_h, full_h, "hidden loss");
  }
  return out;
}

std::vector<double> tau_values_for(const TauSpec& spec, std::size_t set_size,
                                   const std::vector<std::size_t>& indices,
                                   const HiddenCovariance& cov,
                                   const std::vector<double>* leverage) {
  std::vector<double> tau(indices.size(), 0.0);
  switch (spec.mode) {
    case TauMode::kZero:
      break;
    case TauMode::kScalar:
      std::fill(tau.begin(), tau.end(), spec.value);
      break;
    case TauMode::kLeverage: {
      std::vector<double> local;
      const std::vector<double>* lev = leverage;
      if (lev == nullptr) {
        SpectralProfile profile = SpectralProfile::from_covariance(cov);
        local = leverage_scores(profile, spec.value);
        lev = &local;
      }
      double scale = spec.value * static_cast<double>(set_size);
      for (std::size_t i = 0; i < indices.size(); ++i) {
        tau[i] = scale * (*lev)[indices[i]];
      }
      break;
    }
  }
  return tau;
}

void validate_tau_spec(const TauSpec& spec) {
  if (spec.mode == TauMode::kScalar && !(spec.value >= 0.0)) {
    throw InvalidInputError("scalar tau must be >= 0");
  }
  if (spec.mode == TauMode::kLeverage &&
      !(spec.value > 0.0 && std::isfinite(spec.value))) {
    throw InvalidInputError("leverage tau requires a positive finite lambda");
  }
}

double combine(const Theta& theta, const LossSet& losses) {
  return theta.input * losses.input + theta.out_o * losses.out_o +
         theta.out_h * losses.out_h;
}

bool needs_output_losses(const Theta& theta) {
  return theta.out_o != 0.0 || theta.out_h != 0.0;
}

// Greedy selection with exact rank-one residual updates.  Valid whenever the
// per-node regularizer does not depend on the selection size (zero or scalar
// tau): appending node v to J updates the captured part by r r^T / s with
// r = R_{:,v} and s = R_vv + tau_v.
std::vector<std::size_t> greedy_incremental(const HiddenCovariance& cov,
                                            std::size_t m_sharp,
                                            const TauSpec& tau,
                                            const OutputWeights* weights,
                                            const Theta& theta) {
  const std::size_t m = cov.m;
  const bool need_out = needs_output_losses(theta);
  const Matrix* w_out = nullptr;
  const Matrix* w_hid = nullptr;
  if (need_out) {
    if (weights == nullptr || weights->w_out == nullptr ||
        weights->w_hid == nullptr) {
      throw InvalidInputError("objective with output terms requires weights");
    }
    w_out = weights->w_out;
    w_hid = weights->w_hid;
    if (w_out->cols() != m || w_hid->rows() != m || w_hid->cols() != m) {
      throw DimensionError("greedy: weight shapes do not match m");
    }
  }
  double tau_const = tau.mode == TauMode::kScalar ? tau.value : 0.0;

  Matrix residual = cov.sigma;
  double guard = 0.0;
  for (std::size_t i = 0; i < m; ++i) guard = std::max(guard, residual(i, i));
  guard = 1e-12 * std::max(guard, 1.0);

  // Maintained summaries of the current residual.
  double trace_r = residual.trace();
  Matrix zo;             // w_out * R, d_y x m
  Matrix zh;             // w_hid * R, m x m
  std::vector<double> q;  // q_j = w_hid_j R w_hid_j^T
  double bo_cur = 0.0;
  if (need_out) {
    zo = matmul(*w_out, residual);
    for (std::size_t r = 0; r < w_out->rows(); ++r) {
      const double* zr = zo.row_ptr(r);
      const double* wr = w_out->row_ptr(r);
      for (std::size_t c = 0; c < m; ++c) bo_cur += zr[c] * wr[c];
    }
    zh = matmul(*w_hid, residual);
    q.assign(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const double* zr = zh.row_ptr(r);
      const double* wr = w_hid->row_ptr(r);
      double acc = 0.0;
      for (std::size_t c = 0; c < m; ++c) acc += zr[c] * wr[c];
      q[r] = acc;
    }
  }

  std::vector<bool> selected(m, false);
  std::vector<std::size_t> order;
  order.reserve(m_sharp);
  std::vector<double> col(m), wcol, hcol;

  for (std::size_t step = 0; step < m_sharp; ++step) {
    double bh_cur = 0.0;
    if (need_out) {
      for (std::size_t idx : order) bh_cur += q[idx];
    }
    std::size_t best = m;
    double best_obj = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    for (std::size_t v = 0; v < m; ++v) {
      if (selected[v]) continue;
      double s = residual(v, v) + tau_const;
      double gain_a = 0.0, gain_bo = 0.0, obj_bh = 0.0;
      if (need_out) obj_bh = bh_cur + q[v];
      if (s > guard) {
        double col_sq = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          double rv = residual(r, v);
          col_sq += rv * rv;
        }
        gain_a = col_sq / s;
        if (need_out) {
          double zo_sq = 0.0;
          for (std::size_t r = 0; r < w_out->rows(); ++r) {
            double zv = zo(r, v);
            zo_sq += zv * zv;
          }
          gain_bo = zo_sq / s;
          double shrink = 0.0;
          for (std::size_t idx : order) {
            double zv = zh(idx, v);
            shrink += zv * zv;
          }
          double zvv = zh(v, v);
          shrink += zvv * zvv;
          obj_bh -= shrink / s;
        }
      }
      double obj = theta.input * std::max(trace_r - gain_a, 0.0) +
                   theta.out_o * std::max(bo_cur - gain_bo, 0.0) +
                   theta.out_h * std::max(obj_bh, 0.0);
      if (obj < best_obj) {
        best_obj = obj;
        best = v;
        best_s = s;
      }
    }
    selected[best] = true;
    order.push_back(best);
    if (best_s > guard) {
      col.assign(m, 0.0);
      for (std::size_t r = 0; r < m; ++r) col[r] = residual(r, best);
      double inv_s = 1.0 / best_s;
      for (std::size_t r = 0; r < m; ++r) {
        double* row = residual.row_ptr(r);
        double cr = col[r] * inv_s;
        if (cr == 0.0) continue;
        for (std::size_t c = 0; c < m; ++c) row[c] -= cr * col[c];
      }
      trace_r = residual.trace();
      if (need_out) {
        wcol.assign(w_out->rows(), 0.0);
        for (std::size_t r = 0; r < w_out->rows(); ++r) wcol[r] = zo(r, best);
        for (std::size_t r = 0; r < w_out->rows(); ++r) {
          double* row = zo.row_ptr(r);
          double cr = wcol[r] * inv_s;
          if (cr == 0.0) continue;
          for (std::size_t c = 0; c < m; ++c) row[c] -= cr * col[c];
        }
        bo_cur = 0.0;
        for (std::size_t r = 0; r < w_out->rows(); ++r) {
          const double* zr = zo.row_ptr(r);
          const double* wr = w_out->row_ptr(r);
          for (std::size_t c = 0; c < m; ++c) bo_cur += zr[c] * wr[c];
        }
        hcol.assign(m, 0.0);
        for (std::size_t r = 0; r < m; ++r) hcol[r] = zh(r, best);
        for (std::size_t r = 0; r < m; ++r) {
          double* row = zh.row_ptr(r);
          double cr = hcol[r] * inv_s;
          if (cr == 0.0) continue;
          for (std::size_t c = 0; c < m; ++c) row[c] -= cr * col[c];
        }
        for (std::size_t r = 0; r < m; ++r) {
          const double* zr = zh.row_ptr(r);
          const double* wr = w_hid->row_ptr(r);
          double acc = 0.0;
          for (std::size_t c = 0; c < m; ++c) acc += zr[c] * wr[c];
          q[r] = acc;
        }
      }
    }
  }
  return order;
}

// Greedy selection re-solving the closed-form objective for every candidate.
// Required for leverage tau, whose per-node values depend on |J|.
std::vector<std::size_t> greedy_recompute(const HiddenCovariance& cov,
                                          std::size_t m_sharp,
                                          const TauSpec& tau,
                                          const OutputWeights* weights,
                                          const Theta& theta) {
  const std::size_t m = cov.m;
  const bool need_out = needs_output_losses(theta);
  std::vector<double> leverage;
  const std::vector<double>* lev = nullptr;
  if (tau.mode == TauMode::kLeverage) {
    SpectralProfile profile = SpectralProfile::from_covariance(cov);
    leverage = leverage_scores(profile, tau.value);
    lev = &leverage;
  }
  std::vector<bool> selected(m, false);
  std::vector<std::size_t> order;
  order.reserve(m_sharp);
  for (std::size_t step = 0; step < m_sharp; ++step) {
    std::size_t best = m;
    double best_obj = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> trial = order;
    trial.push_back(0);
    for (std::size_t v = 0; v < m; ++v) {
      if (selected[v]) continue;
      trial.back() = v;
      std::vector<std::size_t> sorted = trial;
      std::sort(sorted.begin(), sorted.end());
      IndexSet j(sorted);
      std::vector<double> tau_vec =
          tau_values_for(tau, j.size(), j.indices, cov, lev);
      LossSet losses = evaluate_losses(cov, j, tau_vec, weights, need_out);
      double obj = combine(theta, losses);
      if (obj < best_obj) {
        best_obj = obj;
        best = v;
      }
    }
    selected[best] = true;
    order.push_back(best);
  }
  return order;
}

double checked_choose(std::size_t n, std::size_t k, double budget) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double acc = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    acc = acc * static_cast<double>(n - k + i) / static_cast<double>(i);
    if (acc > budget) return acc;
  }
  return acc;
}

}  // namespace

TauSpec TauSpec::scalar(double c) {
  if (!(c >= 0.0)) throw InvalidInputError("scalar tau must be >= 0");
  return {TauMode::kScalar, c};
}

TauSpec TauSpec::leverage(double lambda) {
  if (!(lambda > 0.0)) {
    throw InvalidInputError("leverage tau requires lambda > 0");
  }
  return {TauMode::kLeverage, lambda};
}

bool TauSpec::is_zero() const {
  return mode == TauMode::kZero || (mode == TauMode::kScalar && value == 0.0);
}

void Theta::validate() const {
  if (!(input >= 0.0) || !(out_o >= 0.0) || !(out_h >= 0.0)) {
    throw InvalidInputError("objective weights must be >= 0");
  }
  if (input == 0.0 && out_o == 0.0 && out_h == 0.0) {
    throw InvalidInputError("objective weights must not all be zero");
  }
}

std::vector<double> tau_vector(const TauSpec& spec, const IndexSet& j,
                               const HiddenCovariance& cov) {
  validate_tau_spec(spec);
  j.check_bounds(cov.m);
  return tau_values_for(spec, j.size(), j.indices, cov, nullptr);
}

ReconstructionMatrix reconstruction_matrix_full(const HiddenCovariance& cov,
                                                const IndexSet& j,
                                                const TauSpec& tau) {
  validate_tau_spec(tau);
  std::vector<double> tau_vec =
      tau_values_for(tau, j.size(), j.indices, cov, nullptr);
  SolvedReconstruction sol = solve_reconstruction(cov, j, tau_vec);
  return ReconstructionMatrix{std::move(sol.a_j), sol.fallback};
}

Matrix reconstruction_matrix(const HiddenCovariance& cov, const IndexSet& j,
                             const TauSpec& tau) {
  return reconstruction_matrix_full(cov, j, tau).a_j;
}

double input_information_loss(const HiddenCovariance& cov, const IndexSet& j,
                              const TauSpec& tau) {
  validate_tau_spec(tau);
  std::vector<double> tau_vec =
      tau_values_for(tau, j.size(), j.indices, cov, nullptr);
  return evaluate_losses(cov, j, tau_vec, nullptr, false).input;
}

double input_information_loss(const HiddenCovariance& cov, const IndexSet& j,
                              const std::vector<double>& tau_values) {
  return evaluate_losses(cov, j, tau_values, nullptr, false).input;
}

std::pair<double, double> output_information_losses(
    const HiddenCovariance& cov, const IndexSet& j, const TauSpec& tau,
    const Matrix& w_out, const Matrix& w_hid) {
  validate_tau_spec(tau);
  std::vector<double> tau_vec =
      tau_values_for(tau, j.size(), j.indices, cov, nullptr);
  OutputWeights weights{&w_out, &w_hid};
  LossSet losses = evaluate_losses(cov, j, tau_vec, &weights, true);
  return {losses.out_o, losses.out_h};
}

double objective_value(const HiddenCovariance& cov, const IndexSet& j,
                       const TauSpec& tau, const OutputWeights& weights,
                       const Theta& theta) {
  theta.validate();
  validate_tau_spec(tau);
  std::vector<double> tau_vec =
      tau_values_for(tau, j.size(), j.indices, cov, nullptr);
  LossSet losses =
      evaluate_losses(cov, j, tau_vec, &weights, needs_output_losses(theta));
  return combine(theta, losses);
}

IndexSet greedy_select(const HiddenCovariance& cov, std::size_t m_sharp,
                       const TauSpec& tau, const OutputWeights& weights,
                       const Theta& theta, GreedyMode mode) {
  theta.validate();
  validate_tau_spec(tau);
  if (m_sharp == 0 || m_sharp > cov.m) {
    throw InvalidInputError("greedy: m_sharp must be in [1, m]");
  }
  bool incremental;
  switch (mode) {
    case GreedyMode::kIncremental:
      if (tau.mode == TauMode::kLeverage) {
        throw InvalidInputError(
            "incremental greedy is invalid for size-dependent tau");
      }
      incremental = true;
      break;
    case GreedyMode::kRecompute:
      incremental = false;
      break;
    case GreedyMode::kAuto:
    default:
      incremental = tau.mode != TauMode::kLeverage;
      break;
  }
  std::vector<std::size_t> order =
      incremental ? greedy_incremental(cov, m_sharp, tau, &weights, theta)
                  : greedy_recompute(cov, m_sharp, tau, &weights, theta);
  return IndexSet(order);
}

GreedyCurve greedy_curve(const HiddenCovariance& cov, std::size_t m_sharp,
                         const TauSpec& tau, const OutputWeights& weights,
                         const Theta& theta) {
  theta.validate();
  validate_tau_spec(tau);
  if (m_sharp == 0 || m_sharp > cov.m) {
    throw InvalidInputError("greedy curve: m_sharp must be in [1, m]");
  }
  bool incremental = tau.mode != TauMode::kLeverage;
  std::vector<std::size_t> order =
      incremental ? greedy_incremental(cov, m_sharp, tau, &weights, theta)
                  : greedy_recompute(cov, m_sharp, tau, &weights, theta);
  GreedyCurve curve;
  curve.order = order;
  curve.objectives.reserve(m_sharp);
  std::vector<double> leverage;
  const std::vector<double>* lev = nullptr;
  if (tau.mode == TauMode::kLeverage) {
    SpectralProfile profile = SpectralProfile::from_covariance(cov);
    leverage = leverage_scores(profile, tau.value);
    lev = &leverage;
  }
  for (std::size_t k = 1; k <= order.size(); ++k) {
    std::vector<std::size_t> prefix(order.begin(), order.begin() + k);
    std::sort(prefix.begin(), prefix.end());
    IndexSet j(prefix);
    std::vector<double> tau_vec =
        tau_values_for(tau, j.size(), j.indices, cov, lev);
    LossSet losses = evaluate_losses(cov, j, tau_vec, &weights,
                                     needs_output_losses(theta));
    curve.objectives.push_back(combine(theta, losses));
  }
  return curve;
}

IndexSet exhaustive_select(const HiddenCovariance& cov, std::size_t m_sharp,
                           const TauSpec& tau, const OutputWeights& weights,
                           const Theta& theta) {
  theta.validate();
  validate_tau_spec(tau);
  const std::size_t m = cov.m;
  if (m_sharp == 0 || m_sharp > m) {
    throw InvalidInputError("exhaustive: m_sharp must be in [1, m]");
  }
  constexpr double kBudget = 1e6;
  if (checked_choose(m, m_sharp, kBudget) > kBudget) {
    throw InvalidInputError("exhaustive: subset count exceeds budget");
  }
  std::vector<double> leverage;
  const std::vector<double>* lev = nullptr;
  if (tau.mode == TauMode::kLeverage) {
    SpectralProfile profile = SpectralProfile::from_covariance(cov);
    leverage = leverage_scores(profile, tau.value);
    lev = &leverage;
  }
  const bool need_out = needs_output_losses(theta);
  std::vector<std::size_t> combo(m_sharp);
  for (std::size_t i = 0; i < m_sharp; ++i) combo[i] = i;
  std::vector<std::size_t> best_combo;
  double best_obj = std::numeric_limits<double>::infinity();
  while (true) {
    IndexSet j(combo);
    std::vector<double> tau_vec =
        tau_values_for(tau, j.size(), j.indices, cov, lev);
    LossSet losses = evaluate_losses(cov, j, tau_vec, &weights, need_out);
    double obj = combine(theta, losses);
    if (obj < best_obj) {
      best_obj = obj;
      best_combo = combo;
    }
    // Advance to the next combination in lexicographic order.
    std::size_t i = m_sharp;
    while (i > 0 && combo[i - 1] == m - m_sharp + i - 1) --i;
    if (i == 0) break;
    ++combo[i - 1];
    for (std::size_t l = i; l < m_sharp; ++l) combo[l] = combo[l - 1] + 1;
  }
  return IndexSet(best_combo);
}

PruneResult compress(const RnnParams& trained, const HiddenCovariance& cov,
                     const IndexSet& j, const TauSpec& tau,
                     const Theta& theta) {
  validate_tau_spec(tau);
  theta.validate();
  trained.check_consistent();
  if (trained.m() != cov.m) {
    throw DimensionError("compress: model width does not match covariance");
  }
  std::vector<double> tau_vec =
      tau_values_for(tau, j.size(), j.indices, cov, nullptr);
  SolvedReconstruction sol = solve_reconstruction(cov, j, tau_vec);
  OutputWeights weights{&trained.w_out, &trained.w_hid};
  LossSet losses = evaluate_losses(cov, j, tau_vec, &weights, true);

  PruneResult out;
  out.j = j;
  out.a_j = sol.a_j;
  out.compressed.activation = trained.activation;
  out.compressed.w_out = matmul(trained.w_out, sol.a_j);
  out.compressed.w_hid = matmul(trained.w_hid.select_rows(j.indices), sol.a_j);
  out.compressed.w_in = trained.w_in.select_rows(j.indices);
  out.compressed.b_out = trained.b_out;
  out.compressed.b_hid.resize(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.compressed.b_hid[i] = trained.b_hid[j.indices[i]];
  }
  out.loss_input = losses.input;
  out.loss_out_o = losses.out_o;
  out.loss_out_h = losses.out_h;
  out.objective = combine(theta, losses);
  out.tau_mode = tau.mode;
  out.tau_value = tau.value;
  out.used_pseudo_inverse_fallback = sol.fallback;
  return out;
}

IndexSet select_nodes(const HiddenCovariance& cov, const RnnParams& trained,
                      const SpectralPruneConfig& config) {
  OutputWeights weights;
  if (needs_output_losses(config.theta)) {
    weights.w_out = &trained.w_out;
    weights.w_hid = &trained.w_hid;
  }
  if (config.selector == Selector::kExhaustive) {
    return exhaustive_select(cov, config.m_sharp, config.tau, weights,
                             config.theta);
  }
  return greedy_select(cov, config.m_sharp, config.tau, weights, config.theta,
                       GreedyMode::kAuto);
}

PruneResult spectral_prune_with_cov(const RnnParams& trained,
                                    const HiddenCovariance& cov,
                                    const SpectralPruneConfig& config) {
  IndexSet j = select_nodes(cov, trained, config);
  return compress(trained, cov, j, config.tau, config.theta);
}

PruneResult spectral_prune(const RnnParams& trained,
                           const SequenceBatch& dataset,
                           const SpectralPruneConfig& config) {
  HiddenCovariance cov = covariance_of(trained, dataset);
  return spectral_prune_with_cov(trained, cov, config);
}

}  // namespace specrnn
